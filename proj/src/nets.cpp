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

#include "sidetune/nets.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "sidetune/error.hpp"
#include "sidetune/ops.hpp"

namespace sidetune {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

const char* to_string(NetworkRole role) {
  switch (role) {
    case NetworkRole::base: return "base";
    case NetworkRole::side: return "side";
    case NetworkRole::readout: return "readout";
    case NetworkRole::merge_internal: return "merge_internal";
  }
  return "?";
}

const char* to_string(InitKind kind) {
  switch (kind) {
    case InitKind::xavier: return "xavier";
    case InitKind::copy_base: return "copy_base";
    case InitKind::low_energy: return "low_energy";
    case InitKind::distill: return "distill";
  }
  return "?";
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::linear;
  s.in = in;
  s.out = out;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, std::size_t stride, std::size_t pad, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in = in_channels;
  s.out = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::relu;
  return s;
}

LayerSpec LayerSpec::tanh() {
  LayerSpec s;
  s.kind = LayerKind::tanh;
  return s;
}

LayerSpec LayerSpec::avgpool2d(std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::avgpool2d;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

namespace {

std::string boundary(const NetworkSpec& spec, std::size_t i, const std::string& detail) {
  return "network '" + spec.name + "': layer " + std::to_string(i) + " (" +
         to_string(spec.layers[i].kind) + ") " + detail;
}

Shape next_shape(const NetworkSpec& spec, std::size_t i, const Shape& in) {
  const LayerSpec& layer = spec.layers[i];
  switch (layer.kind) {
    case LayerKind::linear:
      if (layer.in == 0 || layer.out == 0) throw SpecError(boundary(spec, i, "needs in/out > 0"));
      if (in != Shape{layer.in}) {
        throw SpecError(boundary(spec, i, "expects [" + std::to_string(layer.in) + "], got " +
                                              to_string(in)));
      }
      return Shape{layer.out};
    case LayerKind::conv2d: {
      if (layer.in == 0 || layer.out == 0 || layer.kernel == 0 || layer.stride == 0) {
        throw SpecError(boundary(spec, i, "needs channels, kernel and stride > 0"));
      }
      if (in.size() != 3 || in[0] != layer.in) {
        throw SpecError(boundary(spec, i, "expects [" + std::to_string(layer.in) +
                                              ", h, w], got " + to_string(in)));
      }
      if (in[1] + 2 * layer.pad < layer.kernel || in[2] + 2 * layer.pad < layer.kernel) {
        throw SpecError(boundary(spec, i, "kernel larger than padded input " + to_string(in)));
      }
      return Shape{layer.out, (in[1] + 2 * layer.pad - layer.kernel) / layer.stride + 1,
                   (in[2] + 2 * layer.pad - layer.kernel) / layer.stride + 1};
    }
    case LayerKind::relu:
    case LayerKind::tanh:
      return in;
    case LayerKind::avgpool2d:
      if (layer.kernel == 0 || layer.stride == 0) {
        throw SpecError(boundary(spec, i, "needs kernel and stride > 0"));
      }
      if (in.size() != 3 || in[1] < layer.kernel || in[2] < layer.kernel) {
        throw SpecError(boundary(spec, i, "expects [c, h, w] with h, w >= " +
                                              std::to_string(layer.kernel) + ", got " +
                                              to_string(in)));
      }
      return Shape{in[0], (in[1] - layer.kernel) / layer.stride + 1,
                   (in[2] - layer.kernel) / layer.stride + 1};
    case LayerKind::flatten:
      return Shape{numel(in)};
  }
  throw SpecError(boundary(spec, i, "unknown layer kind"));
}

}  // namespace

Shape NetworkSpec::output_shape() const {
  if (layers.empty()) throw SpecError("network '" + name + "': empty layer list");
  if (input_shape.empty()) throw SpecError("network '" + name + "': empty input shape");
  for (std::size_t d : input_shape) {
    if (d == 0) throw SpecError("network '" + name + "': zero input dimension");
  }
  Shape shape = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) shape = next_shape(*this, i, shape);
  return shape;
}

NetworkSpec NetworkSpec::mlp(std::string name, NetworkRole role, std::size_t in,
                             const std::vector<std::size_t>& hidden, std::size_t out,
                             LayerKind activation) {
  NetworkSpec spec;
  spec.name = std::move(name);
  spec.role = role;
  spec.input_shape = Shape{in};
  std::size_t width = in;
  for (std::size_t h : hidden) {
    spec.layers.push_back(LayerSpec::linear(width, h));
    spec.layers.push_back(activation == LayerKind::tanh ? LayerSpec::tanh() : LayerSpec::relu());
    width = h;
  }
  spec.layers.push_back(LayerSpec::linear(width, out));
  return spec;
}

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::add(std::string name, Tensor value) {
  if (find(name) != nullptr) throw SpecError("param store: duplicate entry '" + name + "'");
  return entries_.emplace_back(std::move(name), std::move(value));
}

Parameter* ParamStore::find(std::string_view name) {
  for (Parameter& p : entries_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Parameter& ParamStore::at(std::string_view name) {
  if (Parameter* p = find(name)) return *p;
  throw KeyError("param store: no entry '" + std::string(name) + "'");
}

const Parameter& ParamStore::at(std::string_view name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

std::size_t ParamStore::count(bool trainable_only) const {
  std::size_t n = 0;
  for (const Parameter& p : entries_) {
    if (!trainable_only || !p.frozen) n += p.value.size();
  }
  return n;
}

std::vector<Parameter*> ParamStore::trainable() {
  std::vector<Parameter*> out;
  for (Parameter& p : entries_) {
    if (!p.frozen) out.push_back(&p);
  }
  return out;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (Parameter& p : entries_) out.push_back(&p);
  return out;
}

void ParamStore::freeze() {
  for (Parameter& p : entries_) p.frozen = true;
}

void ParamStore::zero_grad() {
  for (Parameter& p : entries_) p.zero_grad();
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      h ^= (word >> (8 * b)) & 0xFFU;
      h *= 0x100000001B3ULL;
    }
  };
  for (const Parameter& p : entries_) {
    for (unsigned char c : p.name) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    for (std::size_t d : p.value.shape()) feed(d);
    for (double v : p.value.data()) feed(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

std::vector<double> ParamStore::flat_values() const {
  std::vector<double> out;
  out.reserve(count());
  for (const Parameter& p : entries_) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.size() != size()) {
    throw SchemeError("param store: copying " + std::to_string(other.size()) + " entries into " +
                      std::to_string(size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].value.shape() != other.entries_[i].value.shape()) {
      throw SchemeError("param store: shape mismatch copying '" + other.entries_[i].name +
                        "' into '" + entries_[i].name + "'");
    }
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].value = other.entries_[i].value;
}

// ---------------------------------------------------------------------------
// Network

Network::Network(NetworkSpec spec, Rng& rng) : spec_(std::move(spec)) {
  output_shape_ = spec_.output_shape();
  weight_slot_.assign(spec_.layers.size(), kNone);
  bias_slot_.assign(spec_.layers.size(), kNone);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& layer = spec_.layers[i];
    if (!layer.has_params()) continue;
    const std::string prefix = spec_.name + "." + std::to_string(i) + ".";
    Shape wshape = layer.kind == LayerKind::linear
                       ? Shape{layer.in, layer.out}
                       : Shape{layer.out, layer.in, layer.kernel, layer.kernel};
    weight_slot_[i] = params_.size();
    params_.add(prefix + "weight", Tensor(std::move(wshape)));
    if (layer.bias) {
      bias_slot_[i] = params_.size();
      params_.add(prefix + "bias", Tensor(Shape{layer.out}));
    }
  }
  reinitialize(rng);
}

void Network::reinitialize(Rng& rng) {
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& layer = spec_.layers[i];
    if (!layer.has_params()) continue;
    const double receptive = layer.kind == LayerKind::conv2d
                                 ? static_cast<double>(layer.kernel * layer.kernel)
                                 : 1.0;
    const double fan_in = static_cast<double>(layer.in) * receptive;
    const double fan_out = static_cast<double>(layer.out) * receptive;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor& w = params_.entry(weight_slot_[i]).value;
    for (double& v : w.data()) v = rng.uniform(-limit, limit);
    if (bias_slot_[i] != kNone) params_.entry(bias_slot_[i]).value.fill(0.0);
  }
}

void Network::zero_final_layer() {
  for (std::size_t i = spec_.layers.size(); i-- > 0;) {
    if (!spec_.layers[i].has_params()) continue;
    params_.entry(weight_slot_[i]).value.fill(0.0);
    if (bias_slot_[i] != kNone) params_.entry(bias_slot_[i]).value.fill(0.0);
    return;
  }
}

void Network::check_input(const Shape& batch_shape) const {
  if (batch_shape.size() != spec_.input_shape.size() + 1 ||
      !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), batch_shape.begin() + 1)) {
    throw DimensionError("network '" + spec_.name + "': input " + to_string(batch_shape) +
                         " does not match [batch] + " + to_string(spec_.input_shape));
  }
}

Var Network::apply_layer(Tape& tape, std::size_t index, const Var& x) {
  const LayerSpec& layer = spec_.layers.at(index);
  switch (layer.kind) {
    case LayerKind::linear: {
      Var y = ops::matmul(x, tape.param(params_.entry(weight_slot_[index])));
      if (bias_slot_[index] != kNone) y = ops::add(y, tape.param(params_.entry(bias_slot_[index])));
      return y;
    }
    case LayerKind::conv2d: {
      Var bias;
      if (bias_slot_[index] != kNone) bias = tape.param(params_.entry(bias_slot_[index]));
      return ops::conv2d(x, tape.param(params_.entry(weight_slot_[index])), bias,
                         {layer.stride, layer.pad});
    }
    case LayerKind::relu: return ops::relu(x);
    case LayerKind::tanh: return ops::tanh(x);
    case LayerKind::avgpool2d: return ops::avgpool2d(x, layer.kernel, layer.stride);
    case LayerKind::flatten: return ops::flatten(x);
  }
  throw SpecError("network: unknown layer kind");
}

Network::Trace Network::forward_trace(Tape& tape, const Var& x) {
  check_input(x.shape());
  Trace trace;
  Var h = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    h = apply_layer(tape, i, h);
    if (spec_.layers[i].is_activation()) trace.hidden.push_back(h);
  }
  trace.output = h;
  return trace;
}

Var Network::forward(Tape& tape, const Var& x) {
  check_input(x.shape());
  Var h = x;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) h = apply_layer(tape, i, h);
  return h;
}

Tensor Network::predict(const Tensor& x) {
  Tape tape;
  return forward(tape, tape.constant_ref(x)).value();
}

Network build_network(const NetworkSpec& spec, Rng& rng) { return Network(spec, rng); }

std::size_t count_params(const Network& net, bool trainable_only) {
  return net.params().count(trainable_only);
}

// ---------------------------------------------------------------------------
// Side-network initialization

InitLog init_side(Network& side, Network& base, const InitScheme& scheme,
                  const InputSampler* sampler, Rng& rng) {
  InitLog log;
  switch (scheme.kind) {
    case InitKind::xavier:
      side.reinitialize(rng);
      return log;
    case InitKind::copy_base:
      if (!side.spec().same_architecture(base.spec())) {
        throw SchemeError("init copy_base: side '" + side.spec().name +
                          "' and base '" + base.spec().name + "' architectures differ");
      }
      side.params().copy_values_from(base.params());
      return log;
    case InitKind::low_energy:
      side.zero_final_layer();
      return log;
    case InitKind::distill:
      break;
  }
  if (sampler == nullptr || !*sampler) {
    throw SchemeError("init distill: an unlabeled input sampler is required");
  }
  if (side.output_shape() != base.output_shape()) {
    throw SchemeError("init distill: side output " + to_string(side.output_shape()) +
                      " differs from base output " + to_string(base.output_shape()));
  }
  if (scheme.distill.steps == 0 || scheme.distill.batch == 0) {
    throw SchemeError("init distill: budget needs steps > 0 and batch > 0");
  }
  Rng probe_rng = rng.fork("distill_probe");
  Rng batch_rng = rng.fork("distill_batches");
  const Tensor probe = (*sampler)(probe_rng, 256);
  const Tensor probe_target = base.predict(probe);
  auto probe_loss = [&] {
    Tape tape;
    return ops::mse_loss(side.forward(tape, tape.constant_ref(probe)), probe_target).value().item();
  };

  OptimizerConfig cfg;
  cfg.lr = scheme.distill.lr;
  Optimizer opt(cfg, side.params().trainable());
  for (std::size_t step = 0; step < scheme.distill.steps; ++step) {
    if (step % 100 == 0) log.distill_checkpoints.push_back(probe_loss());
    const Tensor x = (*sampler)(batch_rng, scheme.distill.batch);
    const Tensor target = base.predict(x);
    opt.zero_grad();
    Tape tape;
    tape.backward(ops::mse_loss(side.forward(tape, tape.constant_ref(x)), target));
    opt.step();
  }
  log.distill_checkpoints.push_back(probe_loss());
  opt.zero_grad();
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'S', 'T', 'N', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFU));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFU));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint: truncated " + std::string(what) + " at byte offset " +
                        std::to_string(pos_));
    }
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const CheckpointEntry& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.id.size()));
    out += e.id;
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) put_u64(out, d);
    for (double v : e.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("checkpoint: cannot open " + tmp.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  if (r.take(4, "magic") != std::string(kMagic, 4)) {
    throw FormatError("checkpoint: bad magic at byte offset 0");
  }
  const std::size_t version_at = r.offset();
  if (r.uint(4, "version") != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version at byte offset " +
                      std::to_string(version_at));
  }
  std::vector<CheckpointEntry> entries;
  while (!r.done()) {
    CheckpointEntry e;
    const std::size_t id_len = r.uint(4, "identifier length");
    e.id = r.take(id_len, "identifier");
    const std::size_t rank = r.uint(4, "rank");
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) {
      const std::size_t at = r.offset();
      const std::uint64_t d = r.uint(8, "dimension");
      if (d == 0) throw FormatError("checkpoint: zero dimension at byte offset " + std::to_string(at));
      shape.push_back(d);
    }
    std::vector<double> data(numel(shape));
    for (double& v : data) v = std::bit_cast<double>(r.uint(8, "tensor payload"));
    e.value = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<CheckpointEntry> checkpoint_entries(const ParamStore& store, std::string_view prefix) {
  std::vector<CheckpointEntry> out;
  for (const Parameter& p : store) out.push_back({std::string(prefix) + p.name, p.value});
  return out;
}

void restore_params(ParamStore& store, std::span<const CheckpointEntry> entries,
                    std::string_view prefix) {
  for (Parameter& p : store) {
    const std::string id = std::string(prefix) + p.name;
    const CheckpointEntry* hit = nullptr;
    for (const CheckpointEntry& e : entries) {
      if (e.id == id) hit = &e;
    }
    if (hit == nullptr) throw KeyError("checkpoint: missing entry '" + id + "'");
    if (hit->value.shape() != p.value.shape()) {
      throw FormatError("checkpoint: entry '" + id + "' has shape " + to_string(hit->value.shape()));
    }
    p.value = hit->value;
  }
}

}  // namespace sidetune
