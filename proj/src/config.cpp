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

#include "sidetune/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "sidetune/error.hpp"

namespace sidetune {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Schema validation

std::string type_of(const json& v) {
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  if (v.is_string()) return "string";
  if (v.is_boolean()) return "boolean";
  if (v.is_null()) return "null";
  if (v.is_number_integer()) return "integer";
  return "number";
}

bool has_type(const json& v, const std::string& t) {
  if (t == "number") return v.is_number();
  if (t == "integer") return v.is_number_integer();
  return type_of(v) == t;
}

const json& resolve_ref(const json& schema, const json& root) {
  const std::string ref = schema.at("$ref").get<std::string>();
  constexpr std::string_view prefix = "#/$defs/";
  if (ref.rfind(prefix, 0) != 0) throw ConfigError("schema: unsupported $ref '" + ref + "'");
  return root.at("$defs").at(ref.substr(prefix.size()));
}

void validate_node(const json& v, const json& schema, const json& root, const std::string& path,
                   std::vector<std::string>& errors) {
  if (schema.contains("$ref")) {
    validate_node(v, resolve_ref(schema, root), root, path, errors);
    return;
  }
  const std::string where = path.empty() ? "/" : path;
  if (schema.contains("type")) {
    const json& t = schema["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = has_type(v, t.get<std::string>());
    } else {
      for (const auto& alt : t) ok = ok || has_type(v, alt.get<std::string>());
    }
    if (!ok) {
      errors.push_back(where + ": expected " + t.dump() + ", got " + type_of(v));
      return;
    }
  }
  if (schema.contains("enum")) {
    const json& options = schema["enum"];
    if (std::find(options.begin(), options.end(), v) == options.end()) {
      errors.push_back(where + ": " + v.dump() + " is not one of " + options.dump());
    }
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>()) {
      errors.push_back(where + ": " + v.dump() + " is below the minimum " + schema["minimum"].dump());
    }
    if (schema.contains("maximum") && x > schema["maximum"].get<double>()) {
      errors.push_back(where + ": " + v.dump() + " is above the maximum " + schema["maximum"].dump());
    }
    if (schema.contains("exclusiveMinimum") && !(x > schema["exclusiveMinimum"].get<double>())) {
      errors.push_back(where + ": " + v.dump() + " must be greater than " +
                       schema["exclusiveMinimum"].dump());
    }
    if (schema.contains("exclusiveMaximum") && !(x < schema["exclusiveMaximum"].get<double>())) {
      errors.push_back(where + ": " + v.dump() + " must be less than " +
                       schema["exclusiveMaximum"].dump());
    }
  }
  if (v.is_string() && schema.contains("minLength") &&
      v.get<std::string>().size() < schema["minLength"].get<std::size_t>()) {
    errors.push_back(where + ": string shorter than " + schema["minLength"].dump());
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>()) {
      errors.push_back(where + ": needs at least " + schema["minItems"].dump() + " items");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        validate_node(v[i], schema["items"], root, path + "/" + std::to_string(i), errors);
      }
    }
  }
  if (v.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema["required"]) {
        if (!v.contains(key.get<std::string>())) {
          errors.push_back(where + ": missing required key '" + key.get<std::string>() + "'");
        }
      }
    }
    const json* props = schema.contains("properties") ? &schema["properties"] : nullptr;
    const bool closed = schema.contains("additionalProperties") &&
                        schema["additionalProperties"].is_boolean() &&
                        !schema["additionalProperties"].get<bool>();
    for (auto it = v.begin(); it != v.end(); ++it) {
      if (props != nullptr && props->contains(it.key())) {
        validate_node(it.value(), (*props)[it.key()], root, path + "/" + it.key(), errors);
      } else if (closed) {
        errors.push_back(where + ": unknown key '" + it.key() + "'");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Enum names

template <typename E>
struct Named {
  const char* name;
  E value;
};

template <typename E, std::size_t N>
E from_name(const Named<E> (&table)[N], const std::string& name, const char* what) {
  for (const auto& entry : table) {
    if (name == entry.name) return entry.value;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + name + "'");
}

template <typename E, std::size_t N>
const char* to_name(const Named<E> (&table)[N], E value) {
  for (const auto& entry : table) {
    if (entry.value == value) return entry.name;
  }
  return "unknown";
}

const Named<StrategyKind> kStrategies[] = {
    {"sidetune", StrategyKind::sidetune}, {"finetune", StrategyKind::finetune},
    {"features", StrategyKind::features}, {"scratch", StrategyKind::scratch},
    {"ewc", StrategyKind::ewc},           {"psp", StrategyKind::psp},
    {"pnn_lite", StrategyKind::pnn_lite}, {"independent", StrategyKind::independent}};
const Named<MergeKind> kMerges[] = {{"alpha_blend", MergeKind::alpha_blend},
                                    {"product", MergeKind::product},
                                    {"mlp_adapter", MergeKind::mlp_adapter},
                                    {"film", MergeKind::film}};
const Named<AlphaMode> kAlphaModes[] = {{"learnable", AlphaMode::learnable},
                                        {"scheduled", AlphaMode::scheduled}};
const Named<CurriculumKind> kCurricula[] = {{"constant", CurriculumKind::constant},
                                            {"stage_switch", CurriculumKind::stage_switch},
                                            {"hyperbolic", CurriculumKind::hyperbolic}};
const Named<AlphaClock> kClocks[] = {{"steps", AlphaClock::steps}, {"epochs", AlphaClock::epochs}};
const Named<InitKind> kInits[] = {{"xavier", InitKind::xavier},
                                  {"copy_base", InitKind::copy_base},
                                  {"low_energy", InitKind::low_energy},
                                  {"distill", InitKind::distill}};
const Named<OptimizerKind> kOptimizers[] = {{"adam", OptimizerKind::adam},
                                            {"sgd", OptimizerKind::sgd}};
const Named<RegressionLoss> kRegressionLosses[] = {{"mse", RegressionLoss::mse},
                                                   {"l1", RegressionLoss::l1}};
const Named<SequenceFamily> kFamilies[] = {
    {"permuted", SequenceFamily::permuted},
    {"split_class", SequenceFamily::split_class},
    {"rotated_regression", SequenceFamily::rotated_regression},
    {"file_backed", SequenceFamily::file_backed}};
const Named<LayerKind> kLayers[] = {{"linear", LayerKind::linear},       {"conv2d", LayerKind::conv2d},
                                    {"relu", LayerKind::relu},           {"tanh", LayerKind::tanh},
                                    {"avgpool2d", LayerKind::avgpool2d}, {"flatten", LayerKind::flatten}};

// ---------------------------------------------------------------------------
// Parsing

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  return obj.contains(key) ? obj[key].get<T>() : fallback;
}

const json& child(const json& obj, const char* key) {
  static const json empty = json::object();
  return obj.contains(key) ? obj[key] : empty;
}

OptimizerConfig parse_optimizer(const json& j) {
  OptimizerConfig o;
  o.kind = from_name(kOptimizers, get_or<std::string>(j, "kind", "adam"), "optimizer");
  o.lr = get_or(j, "lr", o.lr);
  o.beta1 = get_or(j, "beta1", o.beta1);
  o.beta2 = get_or(j, "beta2", o.beta2);
  o.eps = get_or(j, "eps", o.eps);
  return o;
}

ArchConfig parse_arch(const json& j) {
  ArchConfig a;
  a.type = get_or<std::string>(j, "type", "mlp");
  a.hidden = get_or(j, "hidden", a.hidden);
  a.features = get_or(j, "features", a.features);
  a.activation = from_name(kLayers, get_or<std::string>(j, "activation", "relu"), "activation");
  if (j.contains("layers")) {
    for (const json& l : j["layers"]) {
      LayerSpec spec;
      spec.kind = from_name(kLayers, l["kind"].get<std::string>(), "layer kind");
      spec.in = get_or<std::size_t>(l, "in", 0);
      spec.out = get_or<std::size_t>(l, "out", 0);
      spec.kernel = get_or<std::size_t>(l, "kernel", 0);
      spec.stride = get_or<std::size_t>(l, "stride", 1);
      spec.pad = get_or<std::size_t>(l, "pad", 0);
      spec.bias = get_or(l, "bias", true);
      a.layers.push_back(spec);
    }
  }
  if (a.type == "layers" && a.layers.empty()) {
    throw ConfigError("arch: type 'layers' needs a non-empty 'layers' list");
  }
  return a;
}

StrategyEntry parse_strategy(const json& j) {
  StrategyEntry e;
  StrategyConfig& c = e.config;
  c.kind = from_name(kStrategies, get_or<std::string>(j, "kind", "sidetune"), "strategy");
  const json& merge = child(j, "merge");
  c.merge.kind = from_name(kMerges, get_or<std::string>(merge, "kind", "alpha_blend"), "merge");
  const json& alpha = child(merge, "alpha");
  c.merge.alpha.mode = from_name(kAlphaModes, get_or<std::string>(alpha, "mode", "learnable"), "alpha mode");
  c.merge.alpha.init = get_or(alpha, "init", 0.5);
  const json& sched = child(alpha, "schedule");
  c.merge.alpha.schedule.kind =
      from_name(kCurricula, get_or<std::string>(sched, "kind", "constant"), "alpha schedule");
  c.merge.alpha.schedule.value = get_or(sched, "value", 0.5);
  c.merge.alpha.schedule.switch_step = get_or<std::uint64_t>(sched, "switch_step", 0);
  c.merge.alpha.schedule.validate();
  c.alpha_clock = from_name(kClocks, get_or<std::string>(j, "alpha_clock", "steps"), "alpha clock");
  const json& init = child(j, "init");
  c.init.kind = from_name(kInits, get_or<std::string>(init, "kind", "xavier"), "init scheme");
  const json& distill = child(init, "distill");
  c.init.distill.steps = get_or(distill, "steps", c.init.distill.steps);
  c.init.distill.lr = get_or(distill, "lr", c.init.distill.lr);
  c.init.distill.batch = get_or(distill, "batch", c.init.distill.batch);
  const json& ewc = child(j, "ewc");
  c.ewc.lambda = get_or(ewc, "lambda", c.ewc.lambda);
  c.ewc.gamma = get_or(ewc, "gamma", c.ewc.gamma);
  c.ewc.fisher_samples = get_or(ewc, "fisher_samples", c.ewc.fisher_samples);
  c.ewc.fisher_batch = get_or(ewc, "fisher_batch", c.ewc.fisher_batch);
  c.zero_init_laterals = get_or(j, "zero_init_laterals", false);
  if (j.contains("side")) e.side = parse_arch(j["side"]);
  if (j.contains("fresh_net")) e.fresh_net = parse_arch(j["fresh_net"]);
  return e;
}

// ---------------------------------------------------------------------------
// Serialization

json arch_json(const ArchConfig& a) {
  json j;
  j["type"] = a.type;
  if (a.type == "mlp") {
    j["hidden"] = a.hidden;
    j["features"] = a.features;
    j["activation"] = to_name(kLayers, a.activation);
  } else {
    json layers = json::array();
    for (const LayerSpec& l : a.layers) {
      json lj;
      lj["kind"] = to_name(kLayers, l.kind);
      if (l.kind == LayerKind::linear || l.kind == LayerKind::conv2d) {
        lj["in"] = l.in;
        lj["out"] = l.out;
        lj["bias"] = l.bias;
      }
      if (l.kind == LayerKind::conv2d || l.kind == LayerKind::avgpool2d) {
        lj["kernel"] = l.kernel;
        lj["stride"] = l.stride;
      }
      if (l.kind == LayerKind::conv2d) lj["pad"] = l.pad;
      layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
  }
  return j;
}

json optimizer_json(const OptimizerConfig& o) {
  return json{{"kind", to_name(kOptimizers, o.kind)},
              {"lr", o.lr},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"eps", o.eps}};
}

json strategy_json(const StrategyEntry& e) {
  const StrategyConfig& c = e.config;
  json j;
  j["kind"] = to_name(kStrategies, c.kind);
  j["merge"] = {{"kind", to_name(kMerges, c.merge.kind)},
                {"alpha",
                 {{"mode", to_name(kAlphaModes, c.merge.alpha.mode)},
                  {"init", c.merge.alpha.init},
                  {"schedule",
                   {{"kind", to_name(kCurricula, c.merge.alpha.schedule.kind)},
                    {"value", c.merge.alpha.schedule.value},
                    {"switch_step", c.merge.alpha.schedule.switch_step}}}}}};
  j["alpha_clock"] = to_name(kClocks, c.alpha_clock);
  j["init"] = {{"kind", to_name(kInits, c.init.kind)},
               {"distill",
                {{"steps", c.init.distill.steps},
                 {"lr", c.init.distill.lr},
                 {"batch", c.init.distill.batch}}}};
  j["ewc"] = {{"lambda", c.ewc.lambda},
              {"gamma", c.ewc.gamma},
              {"fisher_samples", c.ewc.fisher_samples},
              {"fisher_batch", c.ewc.fisher_batch}};
  j["zero_init_laterals"] = c.zero_init_laterals;
  if (e.side) j["side"] = arch_json(*e.side);
  if (e.fresh_net) j["fresh_net"] = arch_json(*e.fresh_net);
  return j;
}

const json& schema_doc() {
  static const json doc = json::parse(experiment_schema());
  return doc;
}

}  // namespace

std::vector<std::string> validate_schema(const json& instance, const json& schema) {
  std::vector<std::string> errors;
  validate_node(instance, schema, schema, "", errors);
  return errors;
}

NetworkSpec ArchConfig::build(std::string name, NetworkRole role, const Shape& input_shape) const {
  NetworkSpec spec;
  if (type == "layers") {
    spec = NetworkSpec{std::move(name), role, input_shape, layers};
  } else {
    spec = NetworkSpec::mlp(std::move(name), role, numel(input_shape), hidden, features, activation);
    if (input_shape.size() > 1) {
      spec.layers.insert(spec.layers.begin(), LayerSpec::flatten());
      spec.input_shape = input_shape;
    }
  }
  spec.output_shape();
  return spec;
}

ExperimentConfig parse_experiment(const json& doc) {
  const std::vector<std::string> errors = validate_schema(doc, schema_doc());
  if (!errors.empty()) {
    std::string msg = "config does not match the experiment schema:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  ExperimentConfig c;
  c.seed = get_or<std::uint64_t>(doc, "seed", 0);
  c.seeds = get_or(doc, "seeds", std::vector<std::uint64_t>{c.seed});
  c.output_dir = get_or<std::string>(doc, "output_dir", c.output_dir);
  c.jobs = get_or(doc, "jobs", c.jobs);
  c.rigidity = get_or(doc, "rigidity", c.rigidity);
  c.checkpoints = get_or(doc, "checkpoints", c.checkpoints);
  c.steps_per_task = get_or(doc, "steps_per_task", c.steps_per_task);
  c.batch_size = get_or(doc, "batch_size", c.batch_size);
  c.optimizer = parse_optimizer(child(doc, "optimizer"));
  c.regression_loss =
      from_name(kRegressionLosses, get_or<std::string>(doc, "regression_loss", "mse"), "regression loss");

  const json& seq = child(doc, "sequence");
  SequenceConfig& s = c.sequence;
  s.family = from_name(kFamilies, get_or<std::string>(seq, "family", "permuted"), "sequence family");
  s.num_tasks = get_or(seq, "num_tasks", s.num_tasks);
  s.classes_per_task = get_or(seq, "classes_per_task", s.classes_per_task);
  const json& g = child(seq, "gaussian");
  s.gaussian.classes = get_or(g, "classes", s.gaussian.classes);
  s.gaussian.in_dim = get_or(g, "in_dim", s.gaussian.in_dim);
  s.gaussian.train_per_class = get_or(g, "train_per_class", s.gaussian.train_per_class);
  s.gaussian.val_per_class = get_or(g, "val_per_class", s.gaussian.val_per_class);
  s.gaussian.clusters_per_class = get_or(g, "clusters_per_class", s.gaussian.clusters_per_class);
  s.gaussian.separation = get_or(g, "separation", s.gaussian.separation);
  s.gaussian.noise = get_or(g, "noise", s.gaussian.noise);
  const json& r = child(seq, "regression");
  s.reg_in_dim = get_or(r, "in_dim", s.reg_in_dim);
  s.reg_out_dim = get_or(r, "out_dim", s.reg_out_dim);
  s.regression.train_size = get_or(r, "train_size", s.regression.train_size);
  s.regression.val_size = get_or(r, "val_size", s.regression.val_size);
  s.regression.noise = get_or(r, "noise", s.regression.noise);
  s.regression.max_angle = get_or(r, "max_angle", s.regression.max_angle);
  if (seq.contains("files")) {
    const json& f = seq["files"];
    FilesConfig files;
    files.format = f["format"].get<std::string>();
    files.train_inputs = get_or<std::string>(f, "train_inputs", "");
    files.train_labels = get_or<std::string>(f, "train_labels", "");
    files.val_inputs = get_or<std::string>(f, "val_inputs", "");
    files.val_labels = get_or<std::string>(f, "val_labels", "");
    files.train = get_or<std::string>(f, "train", "");
    files.val = get_or<std::string>(f, "val", "");
    files.derive = get_or<std::string>(f, "derive", files.derive);
    if (f.contains("max_train")) files.max_train = f["max_train"].get<std::size_t>();
    if (f.contains("max_val")) files.max_val = f["max_val"].get<std::size_t>();
    s.files = files;
  }
  if (s.family == SequenceFamily::file_backed && !s.files) {
    throw ConfigError("/sequence: family 'file_backed' needs a 'files' section");
  }
  if (s.family == SequenceFamily::split_class &&
      s.num_tasks * s.classes_per_task > s.gaussian.classes && !s.files) {
    throw ConfigError("/sequence: " + std::to_string(s.num_tasks) + " tasks of " +
                      std::to_string(s.classes_per_task) + " classes need more than " +
                      std::to_string(s.gaussian.classes) + " classes");
  }

  const json& base = child(doc, "base");
  c.base_arch = parse_arch(child(base, "arch"));
  const json& pre = child(base, "pretrain");
  c.pretrain.source = get_or<std::string>(pre, "source", c.pretrain.source);
  c.pretrain.steps = get_or(pre, "steps", c.pretrain.steps);
  c.pretrain.lr = get_or(pre, "lr", c.pretrain.lr);
  if (doc.contains("side")) c.side = parse_arch(doc["side"]);
  if (doc.contains("strategy")) c.strategy = parse_strategy(doc["strategy"]);
  if (doc.contains("methods")) {
    std::set<std::string> names;
    for (const json& m : doc["methods"]) {
      MethodConfig mc;
      mc.name = m["name"].get<std::string>();
      if (mc.name.find_first_of(",\"\r\n") != std::string::npos) {
        throw ConfigError("/methods: name '" + mc.name + "' may not contain commas, quotes or newlines");
      }
      if (!names.insert(mc.name).second) throw ConfigError("/methods: duplicate name '" + mc.name + "'");
      mc.strategy = parse_strategy(child(m, "strategy"));
      mc.seed_offset = get_or<std::uint64_t>(m, "seed_offset", 0);
      if (m.contains("steps_per_task")) mc.steps_per_task = m["steps_per_task"].get<std::size_t>();
      if (m.contains("batch_size")) mc.batch_size = m["batch_size"].get<std::size_t>();
      c.methods.push_back(std::move(mc));
    }
  }
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_experiment(doc);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["jobs"] = c.jobs;
  j["rigidity"] = c.rigidity;
  j["checkpoints"] = c.checkpoints;
  j["steps_per_task"] = c.steps_per_task;
  j["batch_size"] = c.batch_size;
  j["optimizer"] = optimizer_json(c.optimizer);
  j["regression_loss"] = to_name(kRegressionLosses, c.regression_loss);
  const SequenceConfig& s = c.sequence;
  json seq;
  seq["family"] = to_name(kFamilies, s.family);
  seq["num_tasks"] = s.num_tasks;
  seq["classes_per_task"] = s.classes_per_task;
  seq["gaussian"] = {{"classes", s.gaussian.classes},
                     {"in_dim", s.gaussian.in_dim},
                     {"train_per_class", s.gaussian.train_per_class},
                     {"val_per_class", s.gaussian.val_per_class},
                     {"clusters_per_class", s.gaussian.clusters_per_class},
                     {"separation", s.gaussian.separation},
                     {"noise", s.gaussian.noise}};
  seq["regression"] = {{"in_dim", s.reg_in_dim},
                       {"out_dim", s.reg_out_dim},
                       {"train_size", s.regression.train_size},
                       {"val_size", s.regression.val_size},
                       {"noise", s.regression.noise},
                       {"max_angle", s.regression.max_angle}};
  if (s.files) {
    const FilesConfig& f = *s.files;
    json fj{{"format", f.format}, {"derive", f.derive}};
    for (const auto& [key, value] : {std::pair{"train_inputs", &f.train_inputs},
                                     {"train_labels", &f.train_labels},
                                     {"val_inputs", &f.val_inputs},
                                     {"val_labels", &f.val_labels},
                                     {"train", &f.train},
                                     {"val", &f.val}}) {
      if (!value->empty()) fj[key] = *value;
    }
    if (f.max_train) fj["max_train"] = *f.max_train;
    if (f.max_val) fj["max_val"] = *f.max_val;
    seq["files"] = std::move(fj);
  }
  j["sequence"] = std::move(seq);
  j["base"] = {{"arch", arch_json(c.base_arch)},
               {"pretrain",
                {{"source", c.pretrain.source}, {"steps", c.pretrain.steps}, {"lr", c.pretrain.lr}}}};
  if (c.side) j["side"] = arch_json(*c.side);
  if (c.strategy) j["strategy"] = strategy_json(*c.strategy);
  if (!c.methods.empty()) {
    json methods = json::array();
    for (const MethodConfig& m : c.methods) {
      json mj{{"name", m.name}, {"strategy", strategy_json(m.strategy)}, {"seed_offset", m.seed_offset}};
      if (m.steps_per_task) mj["steps_per_task"] = *m.steps_per_task;
      if (m.batch_size) mj["batch_size"] = *m.batch_size;
      methods.push_back(std::move(mj));
    }
    j["methods"] = std::move(methods);
  }
  return j;
}

// ---------------------------------------------------------------------------
// ExperimentPlan

ExperimentPlan::ExperimentPlan(ExperimentConfig config) : config_(std::move(config)) {
  const SequenceConfig& s = config_.sequence;
  if (config_.pretrain.source != "none" && config_.pretrain.source != "source" &&
      config_.pretrain.source != "first_task") {
    throw ConfigError("/base/pretrain/source: unknown source '" + config_.pretrain.source + "'");
  }
  switch (s.family) {
    case SequenceFamily::permuted:
    case SequenceFamily::split_class:
      input_shape_ = {s.gaussian.in_dim};
      break;
    case SequenceFamily::rotated_regression:
      input_shape_ = {s.reg_in_dim};
      break;
    case SequenceFamily::file_backed:
      file_task_ = std::make_shared<const TaskSpec>(file_source());
      input_shape_ = file_task_->input_shape;
      break;
  }
  base_spec();
}

TaskSpec ExperimentPlan::file_source() const {
  const FilesConfig& f = *config_.sequence.files;
  Dataset train, val;
  if (f.format == "idx") {
    if (f.train_inputs.empty() || f.train_labels.empty() || f.val_inputs.empty() || f.val_labels.empty()) {
      throw ConfigError("/sequence/files: idx needs train_inputs, train_labels, val_inputs, val_labels");
    }
    train = load_idx(f.train_inputs, f.train_labels);
    val = load_idx(f.val_inputs, f.val_labels);
  } else {
    if (f.train.empty() || f.val.empty()) {
      throw ConfigError("/sequence/files: " + f.format + " needs 'train' and 'val' batch files");
    }
    const CifarVariant variant = f.format == "cifar100" ? CifarVariant::cifar100 : CifarVariant::cifar10;
    train = load_cifar_bin(f.train, variant);
    val = load_cifar_bin(f.val, variant);
  }
  auto truncate = [](Dataset& d, const std::optional<std::size_t>& max) {
    if (max && *max < d.size()) {
      std::vector<std::size_t> rows(*max);
      for (std::size_t i = 0; i < *max; ++i) rows[i] = i;
      d = d.subset(rows);
    }
  };
  truncate(train, f.max_train);
  truncate(val, f.max_val);
  TaskSpec task;
  task.task_id = 1;
  task.name = "files";
  task.kind = TaskKind::classification;
  task.input_shape = Shape(train.inputs.shape().begin() + 1, train.inputs.shape().end());
  double max_label = 0.0;
  for (double v : train.targets.data()) max_label = std::max(max_label, v);
  for (double v : val.targets.data()) max_label = std::max(max_label, v);
  task.outputs = static_cast<std::size_t>(max_label) + 1;
  task.train = std::move(train);
  task.val = std::move(val);
  task.seed = 0;
  normalize_task(task);
  task.validate();
  return task;
}

NetworkSpec ExperimentPlan::base_spec() const {
  return config_.base_arch.build("base", NetworkRole::base, input_shape_);
}

MethodSpec ExperimentPlan::resolve(const std::string& name, const StrategyEntry& entry,
                                   std::uint64_t seed_offset) const {
  MethodSpec m;
  m.name = name;
  m.seed_offset = seed_offset;
  m.config = entry.config;
  m.config.optimizer = config_.optimizer;
  m.config.batch_size = config_.batch_size;
  m.config.regression_loss = config_.regression_loss;
  const ArchConfig& side = entry.side ? *entry.side : config_.side ? *config_.side : config_.base_arch;
  m.config.side = side.build("side", NetworkRole::side, input_shape_);
  if (entry.fresh_net) m.config.fresh_net = entry.fresh_net->build("fresh", NetworkRole::side, input_shape_);
  return m;
}

MethodSpec ExperimentPlan::run_method() const {
  if (config_.strategy) {
    return resolve(to_string(config_.strategy->config.kind), *config_.strategy, 0);
  }
  if (config_.methods.size() == 1) {
    const MethodConfig& m = config_.methods.front();
    MethodSpec spec = resolve(m.name, m.strategy, m.seed_offset);
    if (m.batch_size) spec.config.batch_size = *m.batch_size;
    return spec;
  }
  throw ConfigError("run needs a 'strategy' section or exactly one entry in 'methods'");
}

std::size_t ExperimentPlan::run_steps_per_task() const {
  if (!config_.strategy && config_.methods.size() == 1 && config_.methods.front().steps_per_task) {
    return *config_.methods.front().steps_per_task;
  }
  return config_.steps_per_task;
}

std::vector<MethodSpec> ExperimentPlan::compare_methods() const {
  std::vector<MethodSpec> out;
  if (config_.methods.empty()) {
    if (!config_.strategy) throw ConfigError("compare needs a 'methods' list");
    out.push_back(run_method());
    return out;
  }
  for (const MethodConfig& m : config_.methods) {
    if (m.steps_per_task && *m.steps_per_task != config_.steps_per_task) {
      throw ConfigError("/methods: '" + m.name + "' uses " + std::to_string(*m.steps_per_task) +
                        " steps per task but the comparison budget is " +
                        std::to_string(config_.steps_per_task) + "; budgets must match");
    }
    if (m.batch_size && *m.batch_size != config_.batch_size) {
      throw ConfigError("/methods: '" + m.name + "' uses batch size " + std::to_string(*m.batch_size) +
                        " but the comparison uses " + std::to_string(config_.batch_size) +
                        "; budgets must match");
    }
    out.push_back(resolve(m.name, m.strategy, m.seed_offset));
  }
  return out;
}

std::pair<SequenceSpec, TaskSpec> ExperimentPlan::sequence_and_source(std::uint64_t seed) const {
  const SequenceConfig& s = config_.sequence;
  const Rng root(seed);
  Rng sequence_rng = root.fork("sequence");
  SequenceSpec sequence;
  TaskSpec source;
  switch (s.family) {
    case SequenceFamily::permuted:
    case SequenceFamily::split_class: {
      Rng source_rng = root.fork("source");
      source = make_gaussian_task(s.gaussian, source_rng);
      break;
    }
    case SequenceFamily::rotated_regression: {
      RotatedSequence rs =
          gen_rotated_regression(s.num_tasks, s.reg_in_dim, s.reg_out_dim, s.regression, sequence_rng);
      sequence = std::move(rs.sequence);
      source = sequence.tasks.front();
      return {std::move(sequence), std::move(source)};
    }
    case SequenceFamily::file_backed:
      source = *file_task_;
      break;
  }
  const bool split = s.family == SequenceFamily::split_class ||
                     (s.family == SequenceFamily::file_backed && s.files->derive == "split_class");
  if (split) {
    sequence = gen_split_class_tasks(source, s.classes_per_task, sequence_rng);
    if (s.num_tasks > sequence.size()) {
      throw ConfigError("/sequence/num_tasks: only " + std::to_string(sequence.size()) +
                        " split-class tasks are available");
    }
    sequence.tasks.resize(s.num_tasks);
  } else {
    sequence = gen_permuted_tasks(source, s.num_tasks, sequence_rng);
  }
  if (s.family == SequenceFamily::file_backed) sequence.family = SequenceFamily::file_backed;
  return {std::move(sequence), std::move(source)};
}

SequenceSpec ExperimentPlan::build_sequence(std::uint64_t seed) const {
  return sequence_and_source(seed).first;
}

Experiment ExperimentPlan::build(std::uint64_t seed) const {
  auto [sequence, source] = sequence_and_source(seed);
  Experiment ex;
  ex.sequence = std::move(sequence);
  const Rng root(seed);
  const NetworkSpec spec = base_spec();
  Rng pretrain_rng = root.fork("pretrain");
  if (config_.pretrain.source == "none" || config_.pretrain.steps == 0) {
    Rng net_rng = pretrain_rng.fork("net");
    ex.base = Network(spec, net_rng);
    ex.base.freeze();
  } else {
    OptimizerConfig opt = config_.optimizer;
    opt.lr = config_.pretrain.lr;
    const TaskSpec& task = config_.pretrain.source == "first_task" ? ex.sequence.tasks.front() : source;
    ex.base = pretrain_base(spec, task, config_.pretrain.steps, opt, config_.batch_size, pretrain_rng);
  }
  return ex;
}

ExperimentBuilder ExperimentPlan::builder() const {
  return [plan = *this](std::uint64_t seed) { return plan.build(seed); };
}

}  // namespace sidetune
