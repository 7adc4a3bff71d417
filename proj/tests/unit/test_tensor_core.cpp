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
#include <set>

#include "sidetune/error.hpp"
#include "sidetune/gradcheck.hpp"
#include "sidetune/ops.hpp"
#include "sidetune/optim.hpp"
#include "sidetune/rng.hpp"
#include "sidetune/tape.hpp"
#include "sidetune/tensor.hpp"

using namespace sidetune;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("tensor shapes and row access") {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.shape() == Shape{2, 3});
  CHECK(numel(m.shape()) == 6);
  CHECK(m.at(1, 2) == 6.0);
  CHECK(m.slice_rows(1, 1) == Tensor::matrix({{4, 5, 6}}));
  const std::size_t rows[] = {1, 0, 1};
  CHECK(m.gather_rows(rows) == Tensor::matrix({{4, 5, 6}, {1, 2, 3}, {4, 5, 6}}));
  CHECK(m.reshaped({3, 2}).at(2, 1) == 6.0);
  CHECK_THROWS_AS(m.reshaped({4, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::vector({1, 2}).item(), DimensionError);
  Tensor bad = Tensor::vector({1.0, NAN});
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("rng is splitmix64 and forks are independent streams") {
  // Reference outputs of SplitMix64 seeded with 0.
  Rng r(0);
  CHECK(r.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(r.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(r.next_u64() == 0x06C45D188009454FULL);

  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(1).fork("x").next_u64() == Rng(1).fork("x").next_u64());
  CHECK(Rng(1).fork("x").next_u64() != Rng(1).fork("y").next_u64());
  CHECK(Rng(1).fork(3).next_u64() != Rng(1).fork(4).next_u64());
  // Forking does not advance the parent.
  Rng p(9);
  (void)p.fork("child");
  CHECK(p.counter() == 0);
}

TEST_CASE("rng distributions") {
  Rng r(7);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sq / n - mean * mean - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  auto perm = r.permutation(50);
  std::set<std::size_t> seen(perm.begin(), perm.end());
  CHECK(seen.size() == 50);
  CHECK(*seen.rbegin() == 49);
}

TEST_CASE("forward values match direct formulas") {
  Rng rng(1);
  Tape t;
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  Var ab = ops::matmul(t.constant(a), t.constant(b));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(ab.value().at(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(ops::matmul(t.constant(a), t.constant(a)), DimensionError);

  // Softmax cross-entropy via log-sum-exp.
  const Tensor logits = random_tensor({4, 3}, rng);
  const Tensor labels = Tensor::vector({0, 2, 1, 2});
  double expected = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double mx = -1e300;
    for (std::size_t c = 0; c < 3; ++c) mx = std::max(mx, logits.at(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits.at(i, c) - mx);
    expected += mx + std::log(z) - logits.at(i, static_cast<std::size_t>(labels[i]));
  }
  expected /= 4.0;
  CHECK(ops::softmax_cross_entropy(t.constant(logits), labels).value().item() ==
        doctest::Approx(expected).epsilon(1e-13));
  CHECK_THROWS_AS(ops::softmax_cross_entropy(t.constant(logits), Tensor::vector({0, 3, 1, 2})),
                  Error);

  const Tensor p = random_tensor({2, 3}, rng), y = random_tensor({2, 3}, rng);
  double mse = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    mse += (p[i] - y[i]) * (p[i] - y[i]);
    l1 += std::abs(p[i] - y[i]);
  }
  CHECK(ops::mse_loss(t.constant(p), y).value().item() == doctest::Approx(mse / 6.0).epsilon(1e-14));
  CHECK(ops::l1_loss(t.constant(p), y).value().item() == doctest::Approx(l1 / 6.0).epsilon(1e-14));

  const Tensor x = Tensor::vector({-1.0, 0.0, 2.0});
  CHECK(ops::relu(t.constant(x)).value() == Tensor::vector({0.0, 0.0, 2.0}));
  CHECK(ops::sigmoid(t.constant(Tensor::vector({0.0}))).value()[0] == 0.5);
  CHECK(ops::tanh(t.constant(x)).value()[2] == doctest::Approx(std::tanh(2.0)));
}

TEST_CASE("conv2d and avgpool match naive loops") {
  Rng rng(5);
  const std::size_t n = 2, c = 2, h = 5, w = 4, oc = 3, k = 3, stride = 2, pad = 1;
  const Tensor x = random_tensor({n, c, h, w}, rng);
  const Tensor wt = random_tensor({oc, c, k, k}, rng);
  const Tensor bias = random_tensor({oc}, rng);
  Tape t;
  Var y = ops::conv2d(t.constant(x), t.constant(wt), t.constant(bias), {stride, pad});
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  REQUIRE(y.shape() == Shape{n, oc, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < oc; ++o) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias[o];
          for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t di = 0; di < k; ++di) {
              for (std::size_t dj = 0; dj < k; ++dj) {
                const long r = static_cast<long>(i * stride + di) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + dj) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(w)) continue;
                acc += x[((b * c + ci) * h + r) * w + q] * wt[((o * c + ci) * k + di) * k + dj];
              }
            }
          }
          CHECK(y.value()[((b * oc + o) * oh + i) * ow + j] == doctest::Approx(acc).epsilon(1e-13));
        }
      }
    }
  }
  Var pooled = ops::avgpool2d(t.constant(x), 2, 2);
  REQUIRE(pooled.shape() == Shape{n, c, 2, 2});
  const double first = (x[0] + x[1] + x[4] + x[5]) / 4.0;
  CHECK(pooled.value()[0] == doctest::Approx(first).epsilon(1e-14));
  CHECK(ops::flatten(pooled).shape() == Shape{n, c * 4});
}

TEST_CASE("backward of sum(A B) gives row sums of B") {
  Rng rng(2);
  Parameter a("a", random_tensor({3, 4}, rng));
  const Tensor b = random_tensor({4, 5}, rng);
  Tape t;
  t.backward(ops::sum(ops::matmul(t.param(a), t.constant(b))));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double row = 0.0;
      for (std::size_t j = 0; j < 5; ++j) row += b.at(k, j);
      CHECK(a.grad.at(i, k) == doctest::Approx(row).epsilon(1e-14));
    }
  }
}

TEST_CASE("frozen parameters and repeated use accumulate correctly") {
  Parameter p("p", Tensor::vector({2.0}));
  Parameter f("f", Tensor::vector({3.0}));
  f.frozen = true;
  Tape t;
  Var pv = t.param(p);
  t.backward(ops::sum(ops::mul(ops::add(pv, pv), t.param(f))));
  CHECK(p.grad[0] == 6.0);
  CHECK((f.grad.empty() || f.grad[0] == 0.0));
  Tape other;
  CHECK_THROWS_AS(ops::add(pv, other.constant(Tensor::vector({1.0}))), Error);
}

TEST_CASE("sgd and adam single steps") {
  Parameter p("p", Tensor::vector({1.0, -2.0}));
  p.grad = Tensor::vector({0.5, -4.0});
  OptimizerConfig sgd;
  sgd.kind = OptimizerKind::sgd;
  sgd.lr = 0.1;
  Optimizer opt_sgd(sgd, {&p});
  opt_sgd.step();
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-15));
  CHECK(p.value[1] == doctest::Approx(-2.0 + 0.4).epsilon(1e-15));

  // First Adam step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  Parameter q("q", Tensor::vector({1.0, -2.0}));
  q.grad = Tensor::vector({0.5, -4.0});
  OptimizerConfig adam;
  adam.lr = 0.01;
  Optimizer opt(adam, {&q});
  opt.step();
  CHECK(q.value[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(q.value[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
  CHECK(opt.step_count() == 1);
  opt.zero_grad();
  CHECK(q.grad[0] == 0.0);

  Parameter frozen("z", Tensor::vector({1.0}));
  frozen.frozen = true;
  frozen.grad = Tensor::vector({1.0});
  Optimizer opt_frozen(sgd, {&frozen});
  opt_frozen.step();
  CHECK(frozen.value[0] == 1.0);
}

TEST_CASE("grad_check passes a correct op and flags a wrong backward") {
  Rng rng(3);
  Parameter p("p", random_tensor({2, 3}, rng));
  std::vector<Parameter*> params{&p};
  auto ok = grad_check(params, [&](Tape& t) { return ops::sum(ops::tanh(t.param(p))); });
  CHECK(ok.pass);
  CHECK(ok.checked == 6);
  CHECK(ok.max_rel_error < 1e-8);

  // Square with a backward that forgets the factor 2.
  auto wrong = grad_check(params, [&](Tape& t) {
    Var x = t.param(p);
    Tensor out = x.value();
    for (double& v : out.data()) v = v * v;
    Var sq = t.record("bad_square", out, {x.id()}, [id = x.id()](Tape& tape, const Tensor& g) {
      Tensor& gx = tape.grad(id);
      const Tensor& v = tape.value(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * v[i];
    });
    return ops::sum(sq);
  });
  CHECK_FALSE(wrong.pass);
  CHECK(wrong.max_rel_error == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(wrong.worst.rfind("p[", 0) == 0);
}
