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

// Acceptance checks: one PASS/FAIL line per criterion; exit status 1 when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sidetune/cli.hpp"
#include "sidetune/gradsuite.hpp"
#include "sidetune/harness.hpp"
#include "sidetune/ops.hpp"
#include "sidetune/strategies.hpp"

using namespace sidetune;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSeeds = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string list(const std::vector<double>& v, const char* f = "%.3f") {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(f, v[i]);
  return s + "]";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

StrategyConfig side_config(std::size_t in_dim, StrategyKind kind = StrategyKind::sidetune) {
  StrategyConfig c;
  c.kind = kind;
  c.side = NetworkSpec::mlp("side", NetworkRole::side, in_dim, {32}, 16);
  c.init.kind = InitKind::low_energy;
  return c;
}

// Permuted Gaussian classification with a base pretrained on the source task.
Experiment permuted_experiment(std::uint64_t seed, std::size_t tasks) {
  const GaussianTaskConfig g;
  Rng rng(seed);
  Rng src_rng = rng.fork("source");
  const TaskSpec source = make_gaussian_task(g, src_rng);
  Rng seq_rng = rng.fork("sequence");
  Experiment ex;
  ex.sequence = gen_permuted_tasks(source, tasks, seq_rng);
  ex.base = pretrain_base(NetworkSpec::mlp("base", NetworkRole::base, g.in_dim, {32}, 16), source, 300,
                          OptimizerConfig{}, 32, rng.fork("pretrain"));
  return ex;
}

// Rotated regression; the relevant base is pretrained on the unrotated task,
// the unrelated base is a frozen random network of the same shape.
Experiment rotated_experiment(std::uint64_t seed, std::size_t tasks, bool relevant = true) {
  Rng rng(seed);
  Rng rot_rng = rng.fork("rotated");
  Experiment ex;
  ex.sequence = gen_rotated_regression(tasks, 8, 8, RotatedRegressionConfig{}, rot_rng).sequence;
  const NetworkSpec spec = NetworkSpec::mlp("base", NetworkRole::base, 8, {32}, 16);
  if (relevant) {
    ex.base = pretrain_base(spec, ex.sequence.tasks[0], 500, OptimizerConfig{}, 32, rng.fork("pretrain"));
  } else {
    Rng net_rng = rng.fork("random");
    ex.base = Network(spec, net_rng);
    ex.base.freeze();
  }
  return ex;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradSuiteReport r = run_grad_suite(20, 0, 1e-5);
  const double secs = seconds_since(t0);
  return {r.pass && r.seeds >= 20 && secs < 120.0,
          std::to_string(r.results.size() / r.seeds) + " cases x " + std::to_string(r.seeds) +
              " seeds, max rel err " + fmt("%.2e", r.max_rel_error) + ", " + fmt("%.1f", secs) + "s"};
}

Outcome zero_forgetting() {
  const auto t0 = std::chrono::steady_clock::now();
  bool additive_zero = true;
  std::vector<double> finetune_task1;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const Experiment ex = permuted_experiment(seed, 5);
    for (StrategyKind k : {StrategyKind::sidetune, StrategyKind::pnn_lite, StrategyKind::independent,
                           StrategyKind::finetune}) {
      auto s = make_strategy(side_config(16, k), ex.base);
      const SequenceRun run = run_sequence(*s, ex.sequence, 200, seed);
      const std::vector<double> f = compute_forgetting(run.grid);
      if (k == StrategyKind::finetune) {
        finetune_task1.push_back(f[0]);
      } else {
        for (double v : f) additive_zero = additive_zero && v == 0.0;
      }
    }
  }
  const double secs = seconds_since(t0);
  const double med = median(finetune_task1);
  return {additive_zero && med > 0.0 && secs < 600.0,
          std::string("additive forgetting ") + (additive_zero ? "exactly 0" : "NONZERO") +
              ", fine-tune task 1 forgetting median " + fmt("%.4f", med) + " " + list(finetune_task1, "%.4f") +
              ", " + fmt("%.0f", secs) + "s"};
}

Outcome zero_rigidity() {
  bool side_zero = true;
  std::vector<double> r2, r8;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const ExperimentBuilder builder = [](std::uint64_t s) { return rotated_experiment(s, 8); };
    const MethodRun side = run_method(MethodSpec{"sidetune", side_config(8), 0}, builder, seed, 200, true);
    for (double v : side.rigidity) side_zero = side_zero && v == 0.0;
    StrategyConfig ewc = side_config(8, StrategyKind::ewc);
    ewc.ewc.lambda = 1e5;
    const MethodRun e = run_method(MethodSpec{"ewc", ewc, 0}, builder, seed, 200, true);
    r2.push_back(e.rigidity[1]);
    r8.push_back(e.rigidity[7]);
  }
  const double m2 = median(r2);
  const double m8 = median(r8);
  return {side_zero && m8 > m2,
          std::string("side-tune rigidity ") + (side_zero ? "exactly 0" : "NONZERO") +
              ", ewc lambda=1e5 median rigidity task 8 " + fmt("%.3f", m8) + " vs task 2 " + fmt("%.3f", m2)};
}

Outcome reduction_equivalences() {
  GaussianTaskConfig g;
  g.classes = 4;
  g.in_dim = 8;
  Rng rng(11);
  const TaskSpec task = make_gaussian_task(g, rng);
  Rng base_rng = rng.fork("base");
  Network base(NetworkSpec::mlp("base", NetworkRole::base, 8, {16}, 8), base_rng);
  base.freeze();

  auto config = [&](StrategyKind kind, double alpha) {
    StrategyConfig c;
    c.kind = kind;
    c.side = base.spec();
    c.side.name = "side";
    c.side.role = NetworkRole::side;
    c.merge.alpha.mode = AlphaMode::scheduled;
    c.merge.alpha.schedule = AlphaCurriculum::constant(alpha);
    return c;
  };
  using Trajectory = std::vector<std::vector<double>>;
  auto trace = [&](const StrategyConfig& c, bool side_net) {
    Trajectory t;
    auto s = make_strategy(c, base);
    Strategy* sp = s.get();
    s->set_step_observer([&](std::size_t id, std::uint64_t) {
      std::vector<double> v;
      if (side_net) {
        Network* n = sp->task_network(id) ? sp->task_network(id) : sp->shared_network();
        v = n->params().flat_values();
      }
      const auto r = sp->readout(id).params().flat_values();
      v.insert(v.end(), r.begin(), r.end());
      t.push_back(std::move(v));
    });
    s->train_task(task, 100, task_rng(3, 1));
    return t;
  };

  StrategyConfig copy = config(StrategyKind::sidetune, 0.0);
  copy.init.kind = InitKind::copy_base;
  const Trajectory side0 = trace(copy, true);
  const Trajectory fine = trace(config(StrategyKind::finetune, 0.0), true);
  double worst = side0.size() == fine.size() && side0.size() == 100 ? 0.0 : INFINITY;
  for (std::size_t k = 0; k < side0.size() && std::isfinite(worst); ++k) {
    if (side0[k].size() != fine[k].size()) {
      worst = INFINITY;
      break;
    }
    for (std::size_t i = 0; i < side0[k].size(); ++i) worst = std::max(worst, std::abs(side0[k][i] - fine[k][i]));
  }

  const StrategyConfig one = config(StrategyKind::sidetune, 1.0);
  const bool readout_equal = trace(one, false) == trace(config(StrategyKind::features, 1.0), false);

  auto st = make_strategy(one, base);
  st->train_task(task, 10, task_rng(3, 1));
  Network* side = st->task_network(1);
  Network base_copy = st->base();
  Tape tape;
  Var b = base_copy.forward(tape, tape.constant_ref(task.train.inputs));
  Var s = side->forward(tape, tape.constant_ref(task.train.inputs));
  Var m = st->merge(1)->forward(tape, b, s, 0);
  tape.backward(ops::sum(ops::mul(m, m)));
  bool zero_grad = true;
  for (const Parameter& p : side->params()) {
    for (double v : p.grad.data()) zero_grad = zero_grad && v == 0.0;
  }
  return {worst <= 1e-9 && readout_equal && zero_grad,
          "alpha=0 copy_base vs fine-tune max diff " + fmt("%.2e", worst) + " over 100 steps, alpha=1 readout " +
              (readout_equal ? "bitwise equal" : "DIFFERS") + ", side merge gradient " +
              (zero_grad ? "exactly 0" : "NONZERO")};
}

Outcome hyperbolic_curriculum() {
  bool ok = true;
  for (double k : {1.0, 4.0, 10.0, 37.0, 1000.0}) {
    const AlphaCurriculum c = AlphaCurriculum::hyperbolic(k);
    ok = ok && c.at(0) == 1.0 && c.at(static_cast<std::uint64_t>(k)) == 0.5;
    double prev = c.at(0);
    for (std::uint64_t n = 1; n <= 5000; ++n) {
      const double a = c.at(n);
      ok = ok && a == k / (k + static_cast<double>(n)) && a < prev && a > 0.0;
      prev = a;
    }
    ok = ok && c.at(std::uint64_t{1} << 50) < 1e-9;
  }
  return {ok, "alpha(0)=1, alpha(k)=0.5, alpha(N)=k/(k+N) exact, strictly decreasing, tends to 0"};
}

Outcome alpha_relevance() {
  std::vector<double> rel, rnd;
  bool start_half = true;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    for (bool relevant : {true, false}) {
      const Experiment ex = rotated_experiment(seed, 4, relevant);
      const StrategyConfig c = side_config(8);
      Rng merge_rng(0);
      start_half = start_half && MergeOperator(c.merge, 16, "m", merge_rng).alpha(0) == 0.5;
      auto s = make_strategy(c, ex.base);
      const SequenceRun run = run_sequence(*s, ex.sequence, 300, seed);
      double mean = 0.0;
      for (double a : run.final_alphas) mean += a / static_cast<double>(run.final_alphas.size());
      (relevant ? rel : rnd).push_back(mean);
    }
  }
  const double mrel = median(rel);
  const double mrnd = median(rnd);
  return {start_half && mrel > mrnd,
          "median final alpha relevant base " + fmt("%.4f", mrel) + " " + list(rel, "%.3f") + " vs random base " +
              fmt("%.4f", mrnd) + " " + list(rnd, "%.3f") + ", initial alpha " + (start_half ? "0.5" : "NOT 0.5")};
}

json small_config(std::size_t tasks) {
  return json{{"schema_version", 1},
              {"steps_per_task", 100},
              {"sequence", {{"family", "permuted"}, {"num_tasks", tasks}}},
              {"base", {{"arch", {{"hidden", {32}}, {"features", 16}}}, {"pretrain", {{"steps", 300}}}}},
              {"side", {{"hidden", {32}}, {"features", 16}}}};
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

Outcome merge_comparison(const fs::path& dir) {
  json c = small_config(4);
  c["seeds"] = {0, 1};
  c["jobs"] = 1;
  json methods = json::array();
  for (const char* m : {"product", "alpha_blend", "mlp_adapter", "film"}) {
    const std::string name = std::string(m) == "alpha_blend" ? "addition" : m;
    methods.push_back({{"name", name}, {"strategy", {{"kind", "sidetune"}, {"merge", {{"kind", m}}}}}});
  }
  c["methods"] = methods;
  const fs::path cfg = dir / "merge.json";
  std::ofstream(cfg) << c.dump(2);
  if (cli({"compare", "--config", cfg.string(), "--out", (dir / "merge").string()}) != 0) {
    return {false, "compare failed"};
  }
  std::istringstream summary(slurp(dir / "merge" / "compare.csv"));
  std::string line;
  std::getline(summary, line);
  std::vector<double> ranks;
  std::string detail;
  while (std::getline(summary, line)) {
    const auto comma = line.find(',');
    const double r = std::stod(line.substr(comma + 1));
    if (!std::isfinite(r)) return {false, "non-finite rank for " + line.substr(0, comma)};
    ranks.push_back(r);
    detail += line.substr(0, comma) + "=" + fmt("%.2f", r) + " ";
  }
  const std::size_t rows = parse_results_csv(slurp(dir / "merge" / "results.csv")).size();
  double mean = 0.0;
  for (double r : ranks) mean += r / static_cast<double>(ranks.size());
  const bool complete = ranks.size() == 4 && rows == 4 * 2 * 10;
  return {complete && std::abs(mean - 2.5) < 1e-12,
          "avg ranks " + detail + "mean " + fmt("%.6f", mean) + ", " + std::to_string(rows) + " result rows"};
}

Outcome ablation() {
  std::vector<double> base_only, side_only, side_tune;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const Experiment ex = rotated_experiment(seed, 5);
    const AblationReport r = ablation_run(ex.base, ex.sequence, side_config(8), 200, seed);
    if (r.table.size() != 3 || r.avg_rank.size() != 3) return {false, "incomplete ablation report"};
    base_only.push_back(r.avg_rank[0]);
    side_only.push_back(r.avg_rank[1]);
    side_tune.push_back(r.avg_rank[2]);
  }
  const double b = median(base_only), s = median(side_only), t = median(side_tune);
  return {t <= b && t <= s, "median avg rank base-only " + fmt("%.2f", b) + ", side-only " + fmt("%.2f", s) +
                                ", side-tune " + fmt("%.2f", t)};
}

Outcome boosting() {
  const Experiment ex = permuted_experiment(0, 1);
  BoostConfig cfg;
  cfg.member = NetworkSpec::mlp("member", NetworkRole::side, 16, {8}, 16);
  BoostStack stack(ex.base, cfg);
  const BoostResult r = stack.fit(ex.sequence.tasks[0], 4, 150, Rng(1));
  bool monotone = r.member_losses.size() == 4;
  double prev = r.initial_loss;
  for (double loss : r.member_losses) {
    monotone = monotone && loss <= prev + 1e-6;
    prev = loss;
  }
  const NetworkSpec deep = NetworkSpec::mlp("deep", NetworkRole::side, 16, {20, 20}, 16);
  const DeepVsStack d = compare_deep_vs_stack(ex.base, ex.sequence.tasks[0], cfg, deep, 4, 150, Rng(2));
  const double mismatch = std::abs(static_cast<double>(d.deep_params) - static_cast<double>(d.stack_params)) /
                          static_cast<double>(d.stack_params);
  const bool emitted = d.stack_member_losses.size() == 4 && std::isfinite(d.stack_loss) &&
                       std::isfinite(d.deep_loss) && d.stack_params > 0 && mismatch <= 0.05;
  return {monotone && emitted,
          "member losses " + fmt("%.4f", r.initial_loss) + " -> " + list(r.member_losses, "%.4f") +
              "; stack loss " + fmt("%.4f", d.stack_loss) + " (" + std::to_string(d.stack_params) +
              " params) vs deep " + fmt("%.4f", d.deep_loss) + " (" + std::to_string(d.deep_params) + " params)"};
}

Outcome determinism(const fs::path& dir) {
  json c = small_config(3);
  c["steps_per_task"] = 50;
  c["rigidity"] = true;
  c["strategy"] = {{"kind", "ewc"}, {"ewc", {{"lambda", 100.0}}}};
  const fs::path cfg = dir / "det.json";
  std::ofstream(cfg) << c.dump(2);
  for (const char* out : {"det-a", "det-b"}) {
    if (cli({"run", "--config", cfg.string(), "--seed", "5", "--out", (dir / out).string()}) != 0) {
      return {false, "run failed"};
    }
  }
  const std::string a = slurp(dir / "det-a" / "results.csv");
  const std::string b = slurp(dir / "det-b" / "results.csv");
  return {!a.empty() && a == b, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / "sidetune_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"zero forgetting", zero_forgetting},
      {"zero rigidity", zero_rigidity},
      {"reduction equivalences", reduction_equivalences},
      {"hyperbolic curriculum", hyperbolic_curriculum},
      {"alpha relevance", alpha_relevance},
      {"merge comparison", [&] { return merge_comparison(dir); }},
      {"ablation", ablation},
      {"boosting", boosting},
      {"determinism", [&] { return determinism(dir); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(dir);
  return failures == 0 ? 0 : 1;
}
