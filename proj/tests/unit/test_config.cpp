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

#include <algorithm>
#include <fstream>
#include <sstream>

#include "sidetune/config.hpp"
#include "sidetune/error.hpp"

using namespace sidetune;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({
    "schema_version": 1,
    "steps_per_task": 5,
    "sequence": {"family": "permuted", "num_tasks": 2,
                 "gaussian": {"classes": 3, "in_dim": 4, "train_per_class": 8, "val_per_class": 4}},
    "base": {"arch": {"hidden": [6], "features": 4}, "pretrain": {"steps": 5}}
  })");
}

std::string message_of(const json& doc) {
  try {
    parse_experiment(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

bool same(std::span<const double> a, std::span<const double> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

TEST_CASE("defaults fill unspecified fields") {
  const ExperimentConfig c = parse_experiment(json{{"schema_version", 1}});
  CHECK(c.seed == 0);
  CHECK(c.jobs == 1);
  CHECK(c.steps_per_task == 200);
  CHECK(c.batch_size == 32);
  CHECK(c.sequence.family == SequenceFamily::permuted);
  CHECK(c.sequence.num_tasks == 5);
  CHECK(c.pretrain.source == "source");
  CHECK_FALSE(c.strategy.has_value());
  CHECK(c.methods.empty());
}

TEST_CASE("schema violations are reported with json pointers") {
  json doc = minimal();
  doc["sead"] = 3;
  CHECK(message_of(doc).find("/: unknown key 'sead'") != std::string::npos);

  doc = minimal();
  doc["strategy"] = {{"ewc", {{"lamda", 1.0}}}};
  CHECK(message_of(doc).find("/strategy/ewc") != std::string::npos);

  doc = minimal();
  doc["strategy"] = {{"kind", "sidetunes"}};
  CHECK(message_of(doc).find("/strategy/kind") != std::string::npos);

  doc = minimal();
  doc["jobs"] = 0;
  CHECK(message_of(doc).find("/jobs") != std::string::npos);

  doc = minimal();
  doc["optimizer"] = {{"lr", 0.0}};
  CHECK(message_of(doc).find("/optimizer/lr") != std::string::npos);

  doc = minimal();
  doc["seeds"] = json::array();
  CHECK_FALSE(message_of(doc).empty());

  CHECK_FALSE(message_of(json{{"schema_version", 2}}).empty());
  CHECK_FALSE(message_of(json::object()).empty());
  CHECK_FALSE(message_of(json::array()).empty());

  doc = minimal();
  doc["jobs"] = 0;
  doc["batch_size"] = "x";
  const std::string both = message_of(doc);
  CHECK(both.find("/jobs") != std::string::npos);
  CHECK(both.find("/batch_size") != std::string::npos);
}

TEST_CASE("to_json round trips and echoes values exactly") {
  json doc = minimal();
  doc["strategy"] = {{"kind", "ewc"}, {"ewc", {{"lambda", 1e5}, {"fisher_batch", 64}}}};
  doc["seeds"] = {3, 1, 2};
  const ExperimentConfig c = parse_experiment(doc);
  CHECK(c.strategy->config.ewc.lambda == 100000.0);
  const json out = to_json(c);
  CHECK(out["strategy"]["ewc"]["lambda"].dump() == "100000.0");
  const json again = to_json(parse_experiment(out));
  CHECK(again == out);
  CHECK(out["seeds"] == json({3, 1, 2}));

  json methods = minimal();
  methods["methods"] = json::array(
      {{{"name", "a"}, {"strategy", {{"merge", {{"kind", "film"}}}}}},
       {{"name", "b"}, {"seed_offset", 7}, {"strategy", {{"merge", {{"kind", "alpha_blend"},
         {"alpha", {{"mode", "scheduled"}, {"schedule", {{"kind", "stage_switch"}, {"switch_step", 4}}}}}}}}}}});
  const json m = to_json(parse_experiment(methods));
  CHECK(to_json(parse_experiment(m)) == m);
  CHECK(m["methods"][1]["seed_offset"] == 7);
}

TEST_CASE("load_experiment maps unreadable and malformed files to config errors") {
  CHECK_THROWS_AS(load_experiment("/nonexistent/config.json"), ConfigError);
  const auto path = std::filesystem::temp_directory_path() / "sidetune_bad_config.json";
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(load_experiment(path), ConfigError);
  std::ofstream(path) << minimal().dump();
  CHECK(load_experiment(path).steps_per_task == 5);
  std::filesystem::remove(path);
}

TEST_CASE("embedded schema matches the schema file") {
  std::ifstream in(std::filesystem::path(SIDETUNE_SOURCE_DIR) / "schemas" / "experiment.schema.json");
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(json::parse(experiment_schema()) == json::parse(ss.str()));
}

TEST_CASE("validator keywords") {
  const json schema = json::parse(R"({
    "$defs": {"n": {"type": "integer", "minimum": 1, "maximum": 3}},
    "type": "object", "additionalProperties": false, "required": ["a"],
    "properties": {"a": {"$ref": "#/$defs/n"},
                   "b": {"type": "array", "items": {"type": "string", "minLength": 2}},
                   "c": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                   "d": {"enum": ["x", "y"]}}
  })");
  CHECK(validate_schema(json{{"a", 2}, {"b", {"ab"}}, {"c", 0.5}, {"d", "x"}}, schema).empty());
  CHECK(validate_schema(json{{"a", 4}}, schema).size() == 1);
  CHECK(validate_schema(json{{"a", 1.5}}, schema).size() == 1);
  CHECK(validate_schema(json{{"b", {"a"}}}, schema).size() == 2);
  CHECK(validate_schema(json{{"a", 1}, {"c", 1.0}}, schema).size() == 1);
  CHECK(validate_schema(json{{"a", 1}, {"d", "z"}}, schema).size() == 1);
  CHECK(validate_schema(json{{"a", 1}, {"e", 0}}, schema).size() == 1);
}

TEST_CASE("method lists are validated") {
  json doc = minimal();
  doc["methods"] = json::array({{{"name", "a"}}, {{"name", "a"}}});
  CHECK_THROWS_AS(ExperimentPlan(parse_experiment(doc)).compare_methods(), ConfigError);

  doc["methods"] = json::array({{{"name", "a"}}, {{"name", "b"}, {"steps_per_task", 9}}});
  CHECK_THROWS_AS(ExperimentPlan(parse_experiment(doc)).compare_methods(), ConfigError);

  doc["methods"] = json::array({{{"name", "a,b"}}});
  CHECK_THROWS_AS(ExperimentPlan(parse_experiment(doc)), ConfigError);

  doc["methods"] = json::array({{{"name", "a"}}, {{"name", "b"}, {"steps_per_task", 5}}});
  const auto ms = ExperimentPlan(parse_experiment(doc)).compare_methods();
  REQUIRE(ms.size() == 2);
  CHECK(ms[0].config.kind == StrategyKind::sidetune);

  json single = minimal();
  single["methods"] = json::array({{{"name", "only"}, {"steps_per_task", 9}, {"batch_size", 4}}});
  const ExperimentPlan plan(parse_experiment(single));
  CHECK(plan.run_method().name == "only");
  CHECK(plan.run_method().config.batch_size == 4);
  CHECK(plan.run_steps_per_task() == 9);
}

TEST_CASE("plans build deterministically per seed") {
  const ExperimentPlan plan(parse_experiment(minimal()));
  const Experiment a = plan.build(3);
  const Experiment b = plan.build(3);
  const Experiment c = plan.build(4);
  REQUIRE(a.sequence.size() == 2);
  CHECK(same(a.sequence.tasks[1].train.inputs.data(), b.sequence.tasks[1].train.inputs.data()));
  CHECK_FALSE(same(a.sequence.tasks[1].train.inputs.data(), c.sequence.tasks[1].train.inputs.data()));
  CHECK(a.base.params().checksum() == b.base.params().checksum());
  CHECK(a.base.params().checksum() != c.base.params().checksum());
  CHECK(count_params(a.base, true) == 0);
  CHECK(plan.input_shape() == Shape{4});
  CHECK(same(plan.build_sequence(3).tasks[0].train.inputs.data(), a.sequence.tasks[0].train.inputs.data()));
}

TEST_CASE("split_class with more tasks than classes is rejected") {
  json doc = minimal();
  doc["sequence"]["family"] = "split_class";
  doc["sequence"]["classes_per_task"] = 2;
  doc["sequence"]["num_tasks"] = 2;
  CHECK_THROWS_AS(ExperimentPlan(parse_experiment(doc)).build(0), ConfigError);
  doc["sequence"]["gaussian"]["classes"] = 4;
  CHECK(ExperimentPlan(parse_experiment(doc)).build(0).sequence.size() == 2);
}

TEST_CASE("layer architectures resolve against the input shape") {
  json doc = minimal();
  doc["strategy"] = {{"kind", "sidetune"}};
  doc["side"] = {{"type", "layers"}, {"layers", json::array({{{"kind", "linear"}, {"in", 4}, {"out", 4}}})}};
  const ExperimentPlan plan(parse_experiment(doc));
  const MethodSpec m = plan.run_method();
  REQUIRE(m.config.side.layers.size() == 1);
  CHECK(m.config.side.layers[0].out == 4);
  ArchConfig mlp;
  mlp.hidden = {3};
  mlp.features = 2;
  const NetworkSpec spec = mlp.build("n", NetworkRole::side, Shape{1, 2, 2});
  CHECK(spec.layers.front().kind == LayerKind::flatten);
}
