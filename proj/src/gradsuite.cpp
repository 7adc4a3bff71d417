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

#include "sidetune/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>

#include "sidetune/error.hpp"
#include "sidetune/merge.hpp"
#include "sidetune/nets.hpp"
#include "sidetune/ops.hpp"
#include "sidetune/strategies.hpp"

namespace sidetune {

namespace {

constexpr double kKinkMargin = 1e-2;
constexpr int kMaxRedraws = 200;

Tensor normal_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Smallest |pre-activation| entering any ReLU of `net` on input x.
double relu_margin(Network& net, const Tensor& x) {
  Tape tape;
  Var h = tape.constant_ref(x);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (net.spec().layers[i].kind == LayerKind::relu) {
      for (double v : h.value().data()) margin = std::min(margin, std::abs(v));
    }
    h = net.apply_layer(tape, i, h);
  }
  return margin;
}

/// Redraws x until every ReLU input of every listed network clears the margin.
Tensor draw_clear_of_kinks(Shape shape, Rng& rng, const std::vector<Network*>& nets) {
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Tensor x = normal_tensor(shape, rng);
    bool clear = true;
    for (Network* net : nets) clear = clear && relu_margin(*net, x) > kKinkMargin;
    if (clear) return x;
  }
  throw NumericError("grad suite: could not draw inputs away from ReLU kinks");
}

std::vector<Parameter*> params_of(std::initializer_list<Network*> nets) {
  std::vector<Parameter*> out;
  for (Network* n : nets) {
    for (Parameter* p : n->params().all()) out.push_back(p);
  }
  return out;
}

using Case = std::function<GradCheckReport(Rng&, double)>;

GradCheckReport network_mse(Network& net, const Tensor& x, Rng& rng, double tol) {
  const Tensor target = normal_tensor(net.predict(x).shape(), rng);
  auto params = net.params().all();
  return grad_check(params, [&](Tape& t) {
    return ops::mse_loss(net.forward(t, t.constant_ref(x)), target);
  }, tol);
}

GradCheckReport case_linear(Rng& rng, double tol) {
  Network net(NetworkSpec{"g", NetworkRole::side, {5}, {LayerSpec::linear(5, 4)}}, rng);
  return network_mse(net, normal_tensor({3, 5}, rng), rng, tol);
}

GradCheckReport case_linear_no_bias(Rng& rng, double tol) {
  Network net(NetworkSpec{"g", NetworkRole::side, {4}, {LayerSpec::linear(4, 6, false)}}, rng);
  return network_mse(net, normal_tensor({3, 4}, rng), rng, tol);
}

GradCheckReport case_relu(Rng& rng, double tol) {
  Network net(NetworkSpec{"g", NetworkRole::side, {4},
                          {LayerSpec::linear(4, 6), LayerSpec::relu(), LayerSpec::linear(6, 3)}},
              rng);
  const Tensor x = draw_clear_of_kinks({3, 4}, rng, {&net});
  return network_mse(net, x, rng, tol);
}

GradCheckReport case_tanh(Rng& rng, double tol) {
  Network net(NetworkSpec{"g", NetworkRole::side, {4},
                          {LayerSpec::linear(4, 6), LayerSpec::tanh(), LayerSpec::linear(6, 3)}},
              rng);
  return network_mse(net, normal_tensor({3, 4}, rng), rng, tol);
}

GradCheckReport case_conv2d(Rng& rng, double tol) {
  Network net(NetworkSpec{"g", NetworkRole::side, {2, 5, 5},
                          {LayerSpec::conv2d(2, 3, 3, 1, 1), LayerSpec::flatten()}},
              rng);
  return network_mse(net, normal_tensor({2, 2, 5, 5}, rng), rng, tol);
}

GradCheckReport case_conv2d_strided(Rng& rng, double tol) {
  Network net(NetworkSpec{"g", NetworkRole::side, {2, 6, 6},
                          {LayerSpec::conv2d(2, 2, 3, 2, 0, false), LayerSpec::flatten()}},
              rng);
  return network_mse(net, normal_tensor({2, 2, 6, 6}, rng), rng, tol);
}

GradCheckReport case_avgpool(Rng& rng, double tol) {
  Network net(NetworkSpec{"g", NetworkRole::side, {1, 6, 6},
                          {LayerSpec::conv2d(1, 2, 3, 1, 1), LayerSpec::avgpool2d(2, 2),
                           LayerSpec::flatten(), LayerSpec::linear(18, 3)}},
              rng);
  return network_mse(net, normal_tensor({2, 1, 6, 6}, rng), rng, tol);
}

GradCheckReport case_elementwise(Rng& rng, double tol) {
  Parameter a("a", normal_tensor({3, 4}, rng));
  Parameter b("b", normal_tensor({4, 2}, rng));
  Parameter c("c", normal_tensor({3, 2}, rng));
  Parameter d("d", normal_tensor({3, 2}, rng));
  std::vector<Parameter*> params{&a, &b, &c, &d};
  return grad_check(params, [&](Tape& t) {
    Var ab = ops::matmul(t.param(a), t.param(b));
    Var mixed = ops::sub(ops::add(ab, ops::mul(t.param(c), t.param(d))), ops::scale(t.param(c), 0.3));
    Var squashed = ops::mul(ops::sigmoid(mixed), ops::tanh(t.param(d)));
    return ops::sum(squashed);
  }, tol);
}

GradCheckReport case_mse_loss(Rng& rng, double tol) {
  Parameter p("pred", normal_tensor({4, 3}, rng));
  const Tensor target = normal_tensor({4, 3}, rng);
  std::vector<Parameter*> params{&p};
  return grad_check(params, [&](Tape& t) { return ops::mse_loss(t.param(p), target); }, tol);
}

GradCheckReport case_l1_loss(Rng& rng, double tol) {
  Parameter p("pred", normal_tensor({4, 3}, rng));
  Tensor target = normal_tensor({4, 3}, rng);
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (std::abs(target[i] - p.value[i]) < kKinkMargin) target[i] = p.value[i] + 0.5;
  }
  std::vector<Parameter*> params{&p};
  return grad_check(params, [&](Tape& t) { return ops::l1_loss(t.param(p), target); }, tol);
}

GradCheckReport case_cross_entropy(Rng& rng, double tol) {
  Parameter p("logits", normal_tensor({5, 4}, rng, 2.0));
  Tensor labels(Shape{5});
  for (std::size_t i = 0; i < 5; ++i) labels[i] = static_cast<double>(rng.below(4));
  std::vector<Parameter*> params{&p};
  return grad_check(params, [&](Tape& t) { return ops::softmax_cross_entropy(t.param(p), labels); },
                    tol);
}

/// Base and side features are parameters so gradients into both inputs are
/// checked alongside the merge's own parameters.
GradCheckReport merge_case(MergeConfig config, Rng& rng, double tol, std::uint64_t step = 0) {
  constexpr std::size_t kWidth = 5;
  Rng merge_rng = rng.fork("merge");
  MergeOperator merge(config, kWidth, "m", merge_rng);
  std::vector<Network*> internal;
  if (merge.adapter()) internal.push_back(merge.adapter());
  if (merge.film_trunk()) internal.push_back(merge.film_trunk());
  Parameter b("b", draw_clear_of_kinks({3, kWidth}, rng, internal));
  Parameter s("s", normal_tensor({3, kWidth}, rng));
  const Tensor target = normal_tensor({3, kWidth}, rng);
  std::vector<Parameter*> params{&b, &s};
  for (Parameter* p : merge.trainable()) params.push_back(p);
  return grad_check(params, [&](Tape& t) {
    return ops::mse_loss(merge.forward(t, t.param(b), t.param(s), step), target);
  }, tol);
}

GradCheckReport case_alpha_learnable(Rng& rng, double tol) {
  MergeConfig c;
  c.alpha.init = rng.uniform(0.1, 0.9);
  return merge_case(c, rng, tol);
}

GradCheckReport case_alpha_scheduled(Rng& rng, double tol) {
  MergeConfig c;
  c.alpha.mode = AlphaMode::scheduled;
  c.alpha.schedule = AlphaCurriculum::hyperbolic(10.0);
  return merge_case(c, rng, tol, rng.below(50));
}

GradCheckReport case_product(Rng& rng, double tol) {
  MergeConfig c;
  c.kind = MergeKind::product;
  return merge_case(c, rng, tol);
}

GradCheckReport case_mlp_adapter(Rng& rng, double tol) {
  MergeConfig c;
  c.kind = MergeKind::mlp_adapter;
  return merge_case(c, rng, tol);
}

GradCheckReport case_film(Rng& rng, double tol) {
  MergeConfig c;
  c.kind = MergeKind::film;
  return merge_case(c, rng, tol);
}

GradCheckReport case_pnn_laterals(Rng& rng, double tol) {
  Rng base_rng = rng.fork("base");
  Network base(NetworkSpec::mlp("base", NetworkRole::base, 4, {6, 5}, 3), base_rng);
  base.freeze();
  Rng col_rng = rng.fork("column");
  Network column(NetworkSpec::mlp("col", NetworkRole::side, 4, {6, 5}, 3, LayerKind::tanh), col_rng);
  std::vector<Network> adapters;
  const std::size_t taps[] = {6, 5};
  const std::size_t inputs[] = {6, 5};
  for (std::size_t k = 0; k < 2; ++k) {
    Rng a_rng = rng.fork("lateral").fork(k);
    adapters.emplace_back(NetworkSpec{"lat" + std::to_string(k), NetworkRole::side, {taps[k]},
                                      {LayerSpec::linear(taps[k], inputs[k], false)}},
                          a_rng);
  }
  const Tensor x = normal_tensor({3, 4}, rng);
  const Tensor target = normal_tensor({3, 3}, rng);
  std::vector<Parameter*> params = params_of({&column, &adapters[0], &adapters[1]});
  return grad_check(params, [&](Tape& t) {
    Var xv = t.constant_ref(x);
    Network::Trace trace = base.forward_trace(t, xv);
    return ops::mse_loss(pnn_lateral_forward(t, trace.hidden, column, adapters, xv), target);
  }, tol);
}

GradCheckReport case_ewc_penalty(Rng& rng, double tol) {
  Rng net_rng = rng.fork("net");
  Network net(NetworkSpec::mlp("net", NetworkRole::side, 4, {5}, 3, LayerKind::tanh), net_rng);
  std::vector<Parameter*> params = net.params().all();
  EwcState state;
  for (Parameter* p : params) {
    Tensor f(p->value.shape());
    for (double& v : f.data()) v = rng.uniform(0.0, 2.0);
    state.fisher.push_back(std::move(f));
    Tensor anchor = p->value;
    for (double& v : anchor.data()) v += 0.3 * rng.normal();
    state.anchor.push_back(std::move(anchor));
  }
  state.consolidations = 1;
  const double lambda = rng.uniform(0.5, 20.0);
  const Tensor x = normal_tensor({3, 4}, rng);
  const Tensor target = normal_tensor({3, 3}, rng);
  return grad_check(params, [&](Tape& t) {
    Var task = ops::mse_loss(net.forward(t, t.constant_ref(x)), target);
    return ops::add(task, ewc_penalty(t, state, params, lambda));
  }, tol);
}

struct NamedCase {
  const char* name;
  Case run;
};

const std::vector<NamedCase>& cases() {
  static const std::vector<NamedCase> all = {
      {"layer.linear", case_linear},
      {"layer.linear_no_bias", case_linear_no_bias},
      {"layer.relu", case_relu},
      {"layer.tanh", case_tanh},
      {"layer.conv2d", case_conv2d},
      {"layer.conv2d_strided", case_conv2d_strided},
      {"layer.avgpool2d_flatten", case_avgpool},
      {"ops.elementwise", case_elementwise},
      {"loss.mse", case_mse_loss},
      {"loss.l1", case_l1_loss},
      {"loss.cross_entropy", case_cross_entropy},
      {"merge.alpha_learnable", case_alpha_learnable},
      {"merge.alpha_scheduled", case_alpha_scheduled},
      {"merge.product", case_product},
      {"merge.mlp_adapter", case_mlp_adapter},
      {"merge.film", case_film},
      {"pnn.laterals", case_pnn_laterals},
      {"ewc.penalty", case_ewc_penalty},
  };
  return all;
}

}  // namespace

std::vector<std::string> grad_suite_cases() {
  std::vector<std::string> names;
  for (const NamedCase& c : cases()) names.emplace_back(c.name);
  return names;
}

GradSuiteReport run_grad_suite(std::size_t seeds, std::uint64_t first_seed, double tolerance) {
  GradSuiteReport report;
  report.seeds = seeds;
  report.tolerance = tolerance;
  report.pass = true;
  for (std::size_t k = 0; k < seeds; ++k) {
    const std::uint64_t seed = first_seed + k;
    for (const NamedCase& c : cases()) {
      Rng rng = Rng(seed).fork("gradsuite").fork(c.name);
      GradCaseResult r{c.name, seed, c.run(rng, tolerance)};
      report.max_rel_error = std::max(report.max_rel_error, r.report.max_rel_error);
      report.pass = report.pass && r.report.pass && r.report.checked > 0;
      report.results.push_back(std::move(r));
    }
  }
  return report;
}

}  // namespace sidetune
