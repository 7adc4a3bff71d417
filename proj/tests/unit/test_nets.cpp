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
#include <filesystem>
#include <fstream>

#include "sidetune/error.hpp"
#include "sidetune/nets.hpp"
#include "sidetune/ops.hpp"

using namespace sidetune;

TEST_CASE("mlp spec layout, names and parameter count") {
  Rng rng(1);
  Network net(NetworkSpec::mlp("side", NetworkRole::side, 4, {5}, 3), rng);
  CHECK(net.output_shape() == Shape{3});
  CHECK(net.layer_count() == 3);
  CHECK(net.params().at("side.0.weight").value.shape() == Shape{4, 5});
  CHECK(net.params().at("side.0.bias").value.shape() == Shape{5});
  CHECK(net.params().at("side.2.weight").value.shape() == Shape{5, 3});
  CHECK(count_params(net, false) == 4 * 5 + 5 + 5 * 3 + 3);
  net.freeze();
  CHECK(count_params(net, true) == 0);
  CHECK_THROWS_AS(net.params().at("side.1.weight"), KeyError);
}

TEST_CASE("xavier weights stay within the uniform limit and biases start at zero") {
  Rng rng(2);
  Network net(NetworkSpec::mlp("n", NetworkRole::side, 30, {20}, 10), rng);
  const double limit = std::sqrt(6.0 / 50.0);
  for (double w : net.params().at("n.0.weight").value.data()) CHECK(std::abs(w) <= limit);
  for (double b : net.params().at("n.0.bias").value.data()) CHECK(b == 0.0);
}

TEST_CASE("conv network shapes") {
  Rng rng(3);
  NetworkSpec spec{"c", NetworkRole::side, {1, 8, 8},
                   {LayerSpec::conv2d(1, 4, 3, 1, 1), LayerSpec::relu(), LayerSpec::avgpool2d(2, 2),
                    LayerSpec::flatten(), LayerSpec::linear(64, 5)}};
  Network net(spec, rng);
  CHECK(net.params().at("c.0.weight").value.shape() == Shape{4, 1, 3, 3});
  CHECK(net.output_shape() == Shape{5});
  CHECK(net.predict(Tensor(Shape{2, 1, 8, 8}, 0.5)).shape() == Shape{2, 5});
  CHECK_THROWS_AS(net.predict(Tensor(Shape{2, 1, 7, 8}, 0.5)), DimensionError);
  NetworkSpec bad{"b", NetworkRole::side, {1, 8, 8}, {LayerSpec::conv2d(1, 4, 3), LayerSpec::linear(10, 2)}};
  CHECK_THROWS_AS(bad.output_shape(), Error);
}

TEST_CASE("linear forward equals x W + b") {
  Rng rng(4);
  Network net(NetworkSpec{"l", NetworkRole::side, {3}, {LayerSpec::linear(3, 2)}}, rng);
  net.params().at("l.0.bias").value = Tensor::vector({0.5, -1.0});
  const Tensor x = Tensor::matrix({{1, 2, 3}});
  const Tensor& w = net.params().at("l.0.weight").value;
  const Tensor y = net.predict(x);
  for (std::size_t j = 0; j < 2; ++j) {
    const double expected = w.at(0, j) + 2 * w.at(1, j) + 3 * w.at(2, j) + (j == 0 ? 0.5 : -1.0);
    CHECK(y.at(0, j) == doctest::Approx(expected).epsilon(1e-15));
  }
}

TEST_CASE("frozen networks receive no gradient") {
  Rng rng(5);
  Network net(NetworkSpec::mlp("f", NetworkRole::base, 3, {4}, 2), rng);
  net.freeze();
  Tape t;
  t.backward(ops::sum(net.forward(t, t.constant(Tensor(Shape{2, 3}, 1.0)))));
  for (const Parameter& p : net.params()) {
    for (double g : p.grad.data()) CHECK(g == 0.0);
  }
}

TEST_CASE("side initialization schemes") {
  Rng rng(6);
  Network base(NetworkSpec::mlp("base", NetworkRole::base, 4, {6}, 3), rng);
  base.freeze();
  const Tensor x = Tensor(Shape{5, 4}, 0.3);

  Network copy(NetworkSpec::mlp("side", NetworkRole::side, 4, {6}, 3), rng);
  init_side(copy, base, InitScheme{InitKind::copy_base, {}}, nullptr, rng);
  CHECK(copy.predict(x) == base.predict(x));
  CHECK(count_params(copy, true) == count_params(base, false));

  Network low(NetworkSpec::mlp("side", NetworkRole::side, 4, {6}, 3), rng);
  init_side(low, base, InitScheme{InitKind::low_energy, {}}, nullptr, rng);
  const Tensor low_out = low.predict(x);
  for (double v : low_out.data()) CHECK(v == 0.0);

  Network other(NetworkSpec::mlp("side", NetworkRole::side, 4, {7}, 3), rng);
  CHECK_THROWS_AS(init_side(other, base, InitScheme{InitKind::copy_base, {}}, nullptr, rng), SchemeError);
  CHECK_THROWS_AS(init_side(other, base, InitScheme{InitKind::distill, {}}, nullptr, rng), SchemeError);

  InputSampler sampler = [](Rng& r, std::size_t batch) {
    Tensor t(Shape{batch, 4});
    for (double& v : t.data()) v = r.normal();
    return t;
  };
  InitScheme distill{InitKind::distill, {400, 1e-2, 32}};
  Network student(NetworkSpec::mlp("side", NetworkRole::side, 4, {6}, 3), rng);
  InitLog log = init_side(student, base, distill, &sampler, rng);
  REQUIRE(log.distill_checkpoints.size() >= 2);
  CHECK(log.distill_checkpoints.back() < 0.5 * log.distill_checkpoints.front());
}

TEST_CASE("checkpoint round trip and corruption") {
  Rng rng(7);
  Network net(NetworkSpec::mlp("n", NetworkRole::side, 3, {4}, 2), rng);
  const auto dir = std::filesystem::temp_directory_path() / "sidetune_nets_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ck.stnt";
  write_checkpoint(path, checkpoint_entries(net.params(), "net/"));
  const auto entries = read_checkpoint(path);
  CHECK(entries.size() == net.params().size());
  CHECK(entries.front().id.rfind("net/", 0) == 0);

  Rng other_rng(99);
  Network copy(NetworkSpec::mlp("n", NetworkRole::side, 3, {4}, 2), other_rng);
  CHECK(copy.params().checksum() != net.params().checksum());
  restore_params(copy.params(), entries, "net/");
  CHECK(copy.params().checksum() == net.params().checksum());

  {
    std::ofstream f(dir / "bad.stnt", std::ios::binary);
    f << "NOPE1234";
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.stnt"), FormatError);
  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  {
    std::ofstream f(dir / "short.stnt", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "short.stnt"), FormatError);
  Network wrong(NetworkSpec::mlp("n", NetworkRole::side, 3, {5}, 2), other_rng);
  CHECK_THROWS_AS(restore_params(wrong.params(), entries, "net/"), FormatError);
  std::filesystem::remove_all(dir);
}
