// Copyright 2026 The Sidetune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sidetune/error.hpp"
#include "sidetune/harness.hpp"

using namespace sidetune;

namespace {

Metric loss_metric(double v) { return Metric{v, std::nullopt}; }

Experiment small_experiment(std::uint64_t seed, std::size_t tasks = 3) {
  GaussianTaskConfig g;
  g.classes = 4;
  g.in_dim = 6;
  g.train_per_class = 24;
  g.val_per_class = 12;
  Rng rng(seed);
  Rng src_rng = rng.fork("source");
  const TaskSpec src = make_gaussian_task(g, src_rng);
  Rng seq_rng = rng.fork("sequence");
  Experiment ex;
  ex.sequence = gen_permuted_tasks(src, tasks, seq_rng);
  Rng base_rng = rng.fork("base");
  ex.base = Network(NetworkSpec::mlp("base", NetworkRole::base, 6, {8}, 6), base_rng);
  ex.base.freeze();
  return ex;
}

Experiment regression_experiment(std::uint64_t seed) {
  RotatedRegressionConfig rc;
  rc.train_size = 64;
  rc.val_size = 64;
  Rng rng(seed);
  Experiment ex;
  ex.sequence = gen_rotated_regression(3, 4, 4, rc, rng).sequence;
  Rng base_rng = rng.fork("base");
  ex.base = Network(NetworkSpec::mlp("base", NetworkRole::base, 4, {8}, 4), base_rng);
  ex.base.freeze();
  return ex;
}

StrategyConfig side_config(std::size_t in) {
  StrategyConfig c;
  c.side = NetworkSpec::mlp("side", NetworkRole::side, in, {8}, in == 6 ? 6 : 4);
  c.batch_size = 16;
  c.optimizer.lr = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("eval grid occupancy") {
  EvalGrid g(3, MetricKind::loss);
  CHECK_FALSE(g.populated());
  g.set(1, 0, loss_metric(0.5));
  CHECK(g.has(1, 0));
  CHECK_FALSE(g.has(0, 0));
  CHECK(g.value(1, 0) == 0.5);
  CHECK_THROWS_AS(g.set(0, 1, loss_metric(0.1)), ContractError);
  CHECK_THROWS_AS(g.set(3, 0, loss_metric(0.1)), ContractError);
  CHECK_THROWS_AS(g.set(2, 2, loss_metric(NAN)), NumericError);
  EvalGrid e(1, MetricKind::error_rate);
  CHECK_THROWS_AS(e.set(0, 0, loss_metric(0.1)), ContractError);
  CHECK(grid_metric(TaskKind::classification) == MetricKind::error_rate);
  CHECK(grid_metric(TaskKind::regression) == MetricKind::loss);
}

TEST_CASE("forgetting is the final metric minus the just-trained metric") {
  EvalGrid g(3, MetricKind::loss);
  const double v[3][3] = {{1.0, 0, 0}, {1.5, 2.0, 0}, {1.25, 2.5, 3.0}};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j <= i; ++j) g.set(i, j, loss_metric(v[i][j]));
  }
  const auto f = compute_forgetting(g);
  REQUIRE(f.size() == 3);
  CHECK(f[0] == 0.25);
  CHECK(f[1] == 0.5);
  CHECK(f[2] == 0.0);
  EvalGrid partial(2, MetricKind::loss);
  partial.set(0, 0, loss_metric(1.0));
  CHECK_THROWS_AS(compute_forgetting(partial), ContractError);
}

TEST_CASE("rigidity is a natural-log loss ratio with matched controls") {
  const std::vector<RigidityPoint> seq{{2.0, 10, 1}, {1.0, 10, 1}};
  const std::vector<RigidityPoint> first{{1.0, 10, 1}, {1.0, 10, 1}};
  const auto r = compute_rigidity(seq, first);
  CHECK(r[0] == std::log(2.0));
  CHECK(r[1] == 0.0);
  const std::vector<RigidityPoint> other_steps{{1.0, 20, 1}, {1.0, 10, 1}};
  CHECK_THROWS_AS(compute_rigidity(seq, other_steps), ContractError);
  const std::vector<RigidityPoint> other_seed{{1.0, 10, 2}, {1.0, 10, 1}};
  CHECK_THROWS_AS(compute_rigidity(seq, other_seed), ContractError);
  const std::vector<RigidityPoint> zero{{0.0, 10, 1}, {1.0, 10, 1}};
  CHECK_THROWS_AS(compute_rigidity(seq, zero), ContractError);
  CHECK_THROWS_AS(compute_rigidity(seq, std::vector<RigidityPoint>{{1.0, 10, 1}}), ContractError);
}

TEST_CASE("average ranks, ties and the rank-sanity invariant") {
  using Table = std::vector<std::vector<std::optional<double>>>;
  const Table tied{{1.0, 2.0}, {1.0, 1.0}};
  const auto ranks = compute_ranks(tied);
  CHECK(ranks[0][0] == 1.5);
  CHECK(ranks[1][0] == 1.5);
  CHECK(ranks[0][1] == 2.0);
  CHECK(ranks[1][1] == 1.0);
  CHECK(compute_avg_rank(tied) == std::vector<double>{1.75, 1.25});
  CHECK_THROWS_AS(compute_avg_rank(Table{{1.0}, {std::nullopt}}), ContractError);

  Rng rng(1);
  for (std::size_t methods = 2; methods <= 6; ++methods) {
    Table t(methods);
    for (auto& row : t) {
      for (int task = 0; task < 7; ++task) row.emplace_back(std::floor(rng.uniform() * 4.0));
    }
    const auto avg = compute_avg_rank(t);
    const double mean = std::accumulate(avg.begin(), avg.end(), 0.0) / static_cast<double>(methods);
    CHECK(mean == doctest::Approx((methods + 1) / 2.0).epsilon(1e-12));
    const auto r = compute_ranks(t);
    for (std::size_t task = 0; task < 7; ++task) {
      double sum = 0.0;
      for (std::size_t m = 0; m < methods; ++m) sum += r[m][task];
      CHECK(sum == doctest::Approx(methods * (methods + 1) / 2.0));
    }
  }
}

TEST_CASE("results csv round trip and diagnostics") {
  std::vector<ResultRow> rows{{"a-s1", "sidetune", 2, 1, "error_rate", 0.1, 1, 200},
                              {"a-s1", "sidetune", 2, 2, std::string(kRigidityKind), -0.0, 1, 200}};
  const std::string text = format_results_csv(rows);
  CHECK(text.rfind(std::string(kResultsHeader) + "\n", 0) == 0);
  CHECK(text.find("0.10000000000000001") != std::string::npos);
  const auto back = parse_results_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].value == 0.1);
  CHECK(back[1].metric_kind == kRigidityKind);
  CHECK(back[1].step_budget == 200);
  CHECK(parse_results_csv(std::string(kResultsHeader) + "\n").empty());

  const std::string bad = std::string(kResultsHeader) + "\na,b,1,1,loss,0.5,1,10\na,b,1,x,loss,0.5,1,10\n";
  try {
    parse_results_csv(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_results_csv("wrong,header\n"), FormatError);
  CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\na,b,1,1,loss\n"), FormatError);
  std::vector<ResultRow> comma{{"a,b", "s", 1, 1, "loss", 1.0, 0, 1}};
  CHECK_THROWS_AS(format_results_csv(comma), ContractError);
}

TEST_CASE("run_sequence fills the lower triangle and keeps the base fixed") {
  const Experiment ex = small_experiment(1);
  auto s = make_strategy(side_config(6), ex.base);
  const SequenceRun run = run_sequence(*s, ex.sequence, 20, 9);
  CHECK(run.grid.populated());
  CHECK(run.grid.kind() == MetricKind::error_rate);
  CHECK(run.logs.size() == 3);
  CHECK(run.final_alphas.size() == 3);
  REQUIRE(run.base_checksums.size() == 3);
  for (auto c : run.base_checksums) CHECK(c == run.base_checksum_initial);
  for (double f : compute_forgetting(run.grid)) CHECK(f == 0.0);
}

TEST_CASE("trained-first controls equal single-task sequences bit for bit") {
  const Experiment ex = regression_experiment(2);
  const StrategyConfig cfg = side_config(4);
  const StrategyFactory factory = [&] { return make_strategy(cfg, ex.base); };
  const auto controls = trained_first_controls(factory, ex.sequence, 15, 4);
  REQUIRE(controls.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    SequenceSpec single = ex.sequence;
    single.tasks = {ex.sequence.tasks[j]};
    auto s = factory();
    const SequenceRun run = run_sequence(*s, single, 15, 4);
    CHECK(controls[j].loss == run.grid.at(0, 0).loss);
    CHECK(controls[j].steps == 15);
    CHECK(controls[j].seed == 4);
  }
  auto s = factory();
  const SequenceRun run = run_sequence(*s, ex.sequence, 15, 4);
  for (double r : compute_rigidity(in_sequence_points(run), controls)) CHECK(r == 0.0);
}

TEST_CASE("compare results do not depend on the job count") {
  const ExperimentBuilder builder = [](std::uint64_t seed) { return small_experiment(seed); };
  std::vector<MethodSpec> methods{{"side", side_config(6), 0}, {"fine", side_config(6), 0}};
  methods[1].config.kind = StrategyKind::finetune;
  CompareOptions o;
  o.seeds = {1, 2, 3};
  o.steps_per_task = 15;
  o.rigidity = true;
  std::vector<std::string> order;
  o.on_run = [&](const MethodRun& r) { order.push_back(r.method + std::to_string(r.seed)); };
  const CompareReport serial = compare_methods(methods, builder, o);
  o.jobs = 3;
  const CompareReport parallel = compare_methods(methods, builder, o);
  CHECK(order.size() == 12);
  CHECK(std::vector<std::string>(order.begin(), order.begin() + 6) ==
        std::vector<std::string>(order.begin() + 6, order.end()));
  REQUIRE(serial.runs.size() == 6);
  for (std::size_t i = 0; i < serial.runs.size(); ++i) {
    CHECK(format_results_csv(result_rows(serial.runs[i])) == format_results_csv(result_rows(parallel.runs[i])));
  }
  CHECK(serial.avg_rank == parallel.avg_rank);
  CHECK(serial.avg_rank[0] + serial.avg_rank[1] == doctest::Approx(3.0));
  CHECK(serial.mean_rigidity[0] == 0.0);
  CHECK(serial.mean_forgetting[0] == 0.0);
  CHECK(serial.trainable_params[0] > 0);
}

TEST_CASE("identical methods that differ only in seed share ranks evenly") {
  const ExperimentBuilder builder = [](std::uint64_t seed) { return regression_experiment(seed); };
  std::vector<MethodSpec> methods{{"a", side_config(4), 0}, {"b", side_config(4), 1000}};
  CompareOptions o;
  for (std::uint64_t s = 0; s < 12; ++s) o.seeds.push_back(s);
  o.steps_per_task = 10;
  o.jobs = 2;
  const CompareReport r = compare_methods(methods, builder, o);
  CHECK(r.avg_rank[0] + r.avg_rank[1] == doctest::Approx(3.0));
  CHECK(std::abs(r.avg_rank[0] - 1.5) < 0.25);
  CHECK(std::abs(r.avg_rank[1] - 1.5) < 0.25);
}

TEST_CASE("ablation compares base-only, side-only and side-tune") {
  const Experiment ex = regression_experiment(3);
  const StrategyConfig cfg = side_config(4);
  const AblationReport rep = ablation_run(ex.base, ex.sequence, cfg, 20, 5);
  CHECK(rep.methods == std::vector<std::string>{"base-only", "side-only", "side-tune"});
  REQUIRE(rep.table.size() == 3);
  for (std::size_t task = 0; task < 3; ++task) {
    CHECK(rep.ranks[0][task] + rep.ranks[1][task] + rep.ranks[2][task] == doctest::Approx(6.0));
  }
  // side-only is scratch with the side architecture under the same seed.
  StrategyConfig scratch = cfg;
  scratch.kind = StrategyKind::scratch;
  scratch.fresh_net = cfg.side;
  auto s = make_strategy(scratch, ex.base);
  const SequenceRun run = run_sequence(*s, ex.sequence, 20, 5);
  for (std::size_t j = 0; j < 3; ++j) CHECK(rep.table[1][j] == run.grid.value(j, j));
}

TEST_CASE("pretrained base is frozen and fits its task") {
  const Experiment ex = small_experiment(4);
  OptimizerConfig opt;
  opt.lr = 1e-2;
  const NetworkSpec spec = NetworkSpec::mlp("base", NetworkRole::base, 6, {8}, 6);
  const Network net = pretrain_base(spec, ex.sequence.tasks[0], 100, opt, 16, Rng(1));
  CHECK(count_params(net, true) == 0);
  const Network again = pretrain_base(spec, ex.sequence.tasks[0], 100, opt, 16, Rng(1));
  CHECK(net.params().checksum() == again.params().checksum());
}
