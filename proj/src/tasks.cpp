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

#include "sidetune/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "sidetune/error.hpp"

namespace sidetune {

const char* to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "regression";
}

const char* to_string(SequenceFamily family) {
  switch (family) {
    case SequenceFamily::permuted: return "permuted";
    case SequenceFamily::split_class: return "split_class";
    case SequenceFamily::rotated_regression: return "rotated_regression";
    case SequenceFamily::file_backed: return "file_backed";
  }
  return "?";
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.inputs = inputs.gather_rows(rows);
  out.targets = targets.gather_rows(rows);
  out.stats = stats;
  out.normalized = normalized;
  return out;
}

void TaskSpec::validate() const {
  const std::string who = "task " + std::to_string(task_id);
  if (outputs == 0) throw TaskError(who + ": zero outputs");
  if (input_shape.empty()) throw TaskError(who + ": empty input shape");
  for (const Dataset* d : {&train, &val}) {
    const char* split = d == &train ? "train" : "val";
    if (d->size() == 0) throw TaskError(who + ": empty " + split + " split");
    Shape expect{d->size()};
    expect.insert(expect.end(), input_shape.begin(), input_shape.end());
    if (d->inputs.shape() != expect) {
      throw TaskError(who + ": " + split + " inputs " + to_string(d->inputs.shape()) +
                      " do not match " + to_string(expect));
    }
    if (kind == TaskKind::classification) {
      if (d->targets.shape() != Shape{d->size()}) {
        throw TaskError(who + ": " + split + " labels must have shape [n]");
      }
      for (double y : d->targets.data()) {
        if (!(y >= 0.0) || y >= static_cast<double>(outputs) || y != std::floor(y)) {
          throw TaskError(who + ": " + split + " label " + std::to_string(y) + " out of range");
        }
      }
    } else if (d->targets.shape() != Shape{d->size(), outputs}) {
      throw TaskError(who + ": " + split + " targets must have shape [n, " +
                      std::to_string(outputs) + "]");
    }
  }
}

void SequenceSpec::validate() const {
  if (tasks.empty()) throw ConfigError("sequence: needs at least one task");
  for (const TaskSpec& t : tasks) {
    t.validate();
    if (t.input_shape != tasks.front().input_shape) {
      throw TaskError("sequence: task " + std::to_string(t.task_id) + " input shape " +
                      to_string(t.input_shape) + " differs from " +
                      to_string(tasks.front().input_shape));
    }
  }
}

// ---------------------------------------------------------------------------
// Normalization

Normalization fit_normalization(const Tensor& inputs) {
  const std::size_t n = inputs.dim(0);
  const std::size_t width = inputs.size() / n;
  Normalization stats;
  stats.mean.assign(width, 0.0);
  stats.stddev.assign(width, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < width; ++f) stats.mean[f] += inputs[r * width + f];
  }
  for (double& m : stats.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < width; ++f) {
      const double d = inputs[r * width + f] - stats.mean[f];
      stats.stddev[f] += d * d;
    }
  }
  for (double& s : stats.stddev) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;  // constant feature
  }
  return stats;
}

void apply_normalization(Dataset& data, const Normalization& stats) {
  if (data.normalized) throw ContractError("normalization: dataset already normalized");
  const std::size_t n = data.size();
  const std::size_t width = data.inputs.size() / n;
  if (stats.mean.size() != width || stats.stddev.size() != width) {
    throw DimensionError("normalization: statistics for " + std::to_string(stats.mean.size()) +
                         " features applied to " + std::to_string(width));
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < width; ++f) {
      double& v = data.inputs[r * width + f];
      v = (v - stats.mean[f]) / stats.stddev[f];
    }
  }
  data.stats = stats;
  data.normalized = true;
}

void normalize_task(TaskSpec& task) {
  const Normalization stats = fit_normalization(task.train.inputs);
  apply_normalization(task.train, stats);
  apply_normalization(task.val, stats);
}

bool splits_disjoint(const TaskSpec& task) {
  auto row_hash = [](const Tensor& t, std::size_t r) {
    const std::size_t width = t.size() / t.dim(0);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t f = 0; f < width; ++f) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(t[r * width + f]);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFU;
        h *= 0x100000001B3ULL;
      }
    }
    return h;
  };
  const Tensor& tr = task.train.inputs;
  const Tensor& va = task.val.inputs;
  const std::size_t width = tr.size() / tr.dim(0);
  std::unordered_multiset<std::uint64_t> seen;
  for (std::size_t r = 0; r < tr.dim(0); ++r) seen.insert(row_hash(tr, r));
  for (std::size_t r = 0; r < va.dim(0); ++r) {
    const std::uint64_t h = row_hash(va, r);
    if (seen.count(h) == 0) continue;
    // Hash hit: confirm with an exact comparison.
    for (std::size_t q = 0; q < tr.dim(0); ++q) {
      if (std::memcmp(tr.raw() + q * width, va.raw() + r * width, width * sizeof(double)) == 0) {
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Synthetic families

TaskSpec make_gaussian_task(const GaussianTaskConfig& config, Rng& rng) {
  if (config.classes < 2 || config.in_dim == 0 || config.train_per_class == 0 ||
      config.val_per_class == 0 || config.clusters_per_class == 0) {
    throw ConfigError("gaussian task: classes >= 2 and positive sizes required");
  }
  Rng centers_rng = rng.fork("centers");
  std::vector<double> centers(config.classes * config.clusters_per_class * config.in_dim);
  for (double& c : centers) c = config.separation * centers_rng.normal();

  auto draw = [&](std::size_t per_class, Rng sample_rng) {
    const std::size_t n = per_class * config.classes;
    Dataset d;
    d.inputs = Tensor(Shape{n, config.in_dim});
    d.targets = Tensor(Shape{n});
    std::size_t r = 0;
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < config.classes; ++c, ++r) {
        const std::size_t cluster = static_cast<std::size_t>(sample_rng.below(config.clusters_per_class));
        const double* mu = centers.data() + (c * config.clusters_per_class + cluster) * config.in_dim;
        for (std::size_t f = 0; f < config.in_dim; ++f) {
          d.inputs[r * config.in_dim + f] = mu[f] + config.noise * sample_rng.normal();
        }
        d.targets[r] = static_cast<double>(c);
      }
    }
    return d;
  };

  TaskSpec task;
  task.task_id = 1;
  task.name = "gaussian";
  task.kind = TaskKind::classification;
  task.outputs = config.classes;
  task.input_shape = Shape{config.in_dim};
  task.seed = rng.seed();
  task.train = draw(config.train_per_class, rng.fork("train"));
  task.val = draw(config.val_per_class, rng.fork("val"));
  normalize_task(task);
  return task;
}

namespace {

Tensor permute_features(const Tensor& inputs, std::span<const std::size_t> perm) {
  const std::size_t n = inputs.dim(0);
  const std::size_t width = perm.size();
  Tensor out(inputs.shape());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < width; ++f) out[r * width + f] = inputs[r * width + perm[f]];
  }
  return out;
}

std::vector<double> permute_stats(const std::vector<double>& v, std::span<const std::size_t> perm) {
  if (v.empty()) return v;
  std::vector<double> out(perm.size());
  for (std::size_t f = 0; f < perm.size(); ++f) out[f] = v[perm[f]];
  return out;
}

Dataset permute_dataset(const Dataset& d, std::span<const std::size_t> perm) {
  Dataset out = d;
  out.inputs = permute_features(d.inputs, perm);
  out.stats.mean = permute_stats(d.stats.mean, perm);
  out.stats.stddev = permute_stats(d.stats.stddev, perm);
  return out;
}

}  // namespace

SequenceSpec gen_permuted_tasks(const TaskSpec& source, std::size_t m, Rng& rng) {
  if (m < 1) throw ConfigError("permuted tasks: m must be at least 1");
  source.validate();
  const std::size_t width = numel(source.input_shape);
  SequenceSpec seq;
  seq.family = SequenceFamily::permuted;
  seq.seed = rng.seed();
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<std::size_t> perm;
    if (j == 0) {
      perm.resize(width);
      for (std::size_t f = 0; f < width; ++f) perm[f] = f;
    } else {
      Rng prng = rng.fork(j);
      perm = prng.permutation(width);
    }
    TaskSpec t;
    t.task_id = j + 1;
    t.name = source.name + "/perm" + std::to_string(j + 1);
    t.kind = source.kind;
    t.outputs = source.outputs;
    t.input_shape = source.input_shape;
    t.seed = rng.fork(j).seed();
    t.train = permute_dataset(source.train, perm);
    t.val = permute_dataset(source.val, perm);
    t.permutation = std::move(perm);
    seq.tasks.push_back(std::move(t));
  }
  return seq;
}

SequenceSpec gen_split_class_tasks(const TaskSpec& source, std::size_t classes_per_task, Rng& rng) {
  if (source.kind != TaskKind::classification) {
    throw ConfigError("split-class tasks: source must be a classification task");
  }
  if (classes_per_task == 0 || source.outputs % classes_per_task != 0) {
    throw ConfigError("split-class tasks: " + std::to_string(source.outputs) +
                      " classes not divisible by " + std::to_string(classes_per_task));
  }
  source.validate();
  const std::vector<std::size_t> order = rng.permutation(source.outputs);
  const std::size_t m = source.outputs / classes_per_task;

  auto take = [](const Dataset& d, const std::vector<std::size_t>& classes) {
    std::vector<std::size_t> rows;
    std::vector<double> local;
    for (std::size_t r = 0; r < d.size(); ++r) {
      const auto label = static_cast<std::size_t>(d.targets[r]);
      auto it = std::find(classes.begin(), classes.end(), label);
      if (it == classes.end()) continue;
      rows.push_back(r);
      local.push_back(static_cast<double>(it - classes.begin()));
    }
    if (rows.empty()) throw TaskError("split-class tasks: a class partition has no examples");
    Dataset out = d.subset(rows);
    out.targets = Tensor(Shape{rows.size()}, std::move(local));
    return out;
  };

  SequenceSpec seq;
  seq.family = SequenceFamily::split_class;
  seq.seed = rng.seed();
  for (std::size_t j = 0; j < m; ++j) {
    TaskSpec t;
    t.task_id = j + 1;
    t.name = source.name + "/split" + std::to_string(j + 1);
    t.kind = TaskKind::classification;
    t.outputs = classes_per_task;
    t.input_shape = source.input_shape;
    t.seed = rng.fork(j).seed();
    t.source_classes.assign(order.begin() + static_cast<std::ptrdiff_t>(j * classes_per_task),
                            order.begin() + static_cast<std::ptrdiff_t>((j + 1) * classes_per_task));
    t.train = take(source.train, t.source_classes);
    t.val = take(source.val, t.source_classes);
    seq.tasks.push_back(std::move(t));
  }
  return seq;
}

namespace {

/// Gram-Schmidt on a Gaussian matrix; rows of the result are orthonormal.
Tensor random_orthogonal(std::size_t n, Rng& rng) {
  Tensor q(Shape{n, n});
  for (double& v : q.data()) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += q[i * n + k] * q[j * n + k];
      for (std::size_t k = 0; k < n; ++k) q[i * n + k] -= dot * q[j * n + k];
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) norm += q[i * n + k] * q[i * n + k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < n; ++k) q[i * n + k] /= norm;
  }
  return q;
}

}  // namespace

Tensor RotatedTeacher::rotation(std::size_t index) const {
  const std::size_t n = basis.dim(0);
  const double angle = angles.at(index);
  Tensor r(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) r[i * n + i] = 1.0;
  if (angle != 0.0) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (std::size_t i = 0; i + 1 < n; i += 2) {
      r[i * n + i] = c;
      r[i * n + i + 1] = -s;
      r[(i + 1) * n + i] = s;
      r[(i + 1) * n + i + 1] = c;
    }
  }
  // Q = U^T R U with the rows of `basis` as U's orthonormal vectors.
  Tensor tmp(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) tmp[i * n + j] += r[i * n + k] * basis[k * n + j];
  Tensor q(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) q[i * n + j] += basis[k * n + i] * tmp[k * n + j];
  return q;
}

Tensor RotatedTeacher::predict(std::size_t index, const Tensor& inputs) const {
  const std::size_t n = inputs.dim(0);
  const std::size_t in_dim = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  if (inputs.size() != n * in_dim) {
    throw DimensionError("rotated teacher: inputs " + to_string(inputs.shape()) +
                         " do not have width " + std::to_string(in_dim));
  }
  const bool identity = angles.at(index) == 0.0;
  const Tensor q = identity ? Tensor() : rotation(index);
  Tensor y(Shape{n, out_dim}, 0.0);
  std::vector<double> z(out_dim);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = 0.0;
      for (std::size_t f = 0; f < in_dim; ++f) acc += weight[o * in_dim + f] * inputs[r * in_dim + f];
      z[o] = acc;
    }
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = z[o];
      if (!identity) {
        acc = 0.0;
        for (std::size_t k = 0; k < out_dim; ++k) acc += q[o * out_dim + k] * z[k];
      }
      y[r * out_dim + o] = std::tanh(acc);
    }
  }
  return y;
}

RotatedSequence gen_rotated_regression(std::size_t m, std::size_t in_dim, std::size_t out_dim,
                                       const RotatedRegressionConfig& config, Rng& rng) {
  if (m < 1) throw ConfigError("rotated regression: m must be at least 1");
  if (in_dim == 0 || out_dim == 0 || config.train_size == 0 || config.val_size == 0) {
    throw ConfigError("rotated regression: dimensions and split sizes must be positive");
  }
  RotatedSequence out;
  RotatedTeacher& teacher = out.teacher;
  Rng wrng = rng.fork("teacher");
  teacher.weight = Tensor(Shape{out_dim, in_dim});
  const double wscale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& v : teacher.weight.data()) v = wscale * wrng.normal();
  Rng brng = rng.fork("basis");
  teacher.basis = random_orthogonal(out_dim, brng);
  for (std::size_t j = 0; j < m; ++j) {
    teacher.angles.push_back(m == 1 ? 0.0
                                    : config.max_angle * static_cast<double>(j) /
                                          static_cast<double>(m - 1));
  }

  // All tasks share one input sample; only the target map differs.
  Dataset train_base;
  Dataset val_base;
  Rng xrng = rng.fork("inputs");
  train_base.inputs = Tensor(Shape{config.train_size, in_dim});
  val_base.inputs = Tensor(Shape{config.val_size, in_dim});
  for (double& v : train_base.inputs.data()) v = xrng.normal();
  for (double& v : val_base.inputs.data()) v = xrng.normal();
  const Normalization stats = fit_normalization(train_base.inputs);
  apply_normalization(train_base, stats);
  apply_normalization(val_base, stats);

  out.sequence.family = SequenceFamily::rotated_regression;
  out.sequence.seed = rng.seed();
  for (std::size_t j = 0; j < m; ++j) {
    TaskSpec t;
    t.task_id = j + 1;
    t.name = "rotated/" + std::to_string(j + 1);
    t.kind = TaskKind::regression;
    t.outputs = out_dim;
    t.input_shape = Shape{in_dim};
    t.seed = rng.fork(j).seed();
    t.train = train_base;
    t.val = val_base;
    t.train.targets = teacher.predict(j, t.train.inputs);
    t.val.targets = teacher.predict(j, t.val.inputs);
    if (config.noise > 0.0) {
      Rng nrng = rng.fork("noise").fork(j);
      for (double& v : t.train.targets.data()) v += config.noise * nrng.normal();
      for (double& v : t.val.targets.data()) v += config.noise * nrng.normal();
    }
    out.sequence.tasks.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX and CIFAR

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::size_t idx_width(IdxType type) {
  switch (type) {
    case IdxType::u8:
    case IdxType::i8: return 1;
    case IdxType::i16: return 2;
    case IdxType::i32:
    case IdxType::f32: return 4;
    case IdxType::f64: return 8;
  }
  return 0;
}

std::uint64_t read_be(const unsigned char* p, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) v = (v << 8) | p[i];
  return v;
}

void write_be(std::string& out, std::uint64_t v, std::size_t width) {
  for (std::size_t i = width; i-- > 0;) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 4) throw FormatError(where + "truncated IDX header at byte offset " + std::to_string(bytes.size()));
  if (p[0] != 0 || p[1] != 0) throw FormatError(where + "bad IDX magic at byte offset 0");
  const std::uint8_t type_byte = p[2];
  IdxArray out;
  switch (type_byte) {
    case 0x08: case 0x09: case 0x0B: case 0x0C: case 0x0D: case 0x0E:
      out.type = static_cast<IdxType>(type_byte);
      break;
    default:
      throw FormatError(where + "unknown IDX element type at byte offset 2");
  }
  const std::size_t rank = p[3];
  if (rank == 0) throw FormatError(where + "IDX rank 0 at byte offset 3");
  std::size_t offset = 4;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (bytes.size() < offset + 4) {
      throw FormatError(where + "truncated IDX dimensions at byte offset " + std::to_string(offset));
    }
    const std::size_t d = read_be(p + offset, 4);
    if (d == 0) throw FormatError(where + "zero IDX dimension at byte offset " + std::to_string(offset));
    out.dims.push_back(d);
    count *= d;
    offset += 4;
  }
  const std::size_t width = idx_width(out.type);
  if (bytes.size() - offset < count * width) {
    throw FormatError(where + "truncated IDX payload at byte offset " + std::to_string(bytes.size()) +
                      ", expected " + std::to_string(offset + count * width) + " bytes");
  }
  if (bytes.size() - offset > count * width) {
    throw FormatError(where + "trailing bytes after IDX payload at byte offset " +
                      std::to_string(offset + count * width));
  }
  out.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* q = p + offset + i * width;
    const std::uint64_t raw = read_be(q, width);
    switch (out.type) {
      case IdxType::u8: out.values[i] = static_cast<double>(raw); break;
      case IdxType::i8: out.values[i] = static_cast<double>(static_cast<std::int8_t>(raw)); break;
      case IdxType::i16: out.values[i] = static_cast<double>(static_cast<std::int16_t>(raw)); break;
      case IdxType::i32: out.values[i] = static_cast<double>(static_cast<std::int32_t>(raw)); break;
      case IdxType::f32:
        out.values[i] = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(raw)));
        break;
      case IdxType::f64: out.values[i] = std::bit_cast<double>(raw); break;
    }
  }
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  if (array.dims.empty() || array.dims.size() > 255) throw FormatError("IDX: rank must be 1..255");
  std::size_t count = 1;
  for (std::size_t d : array.dims) count *= d;
  if (count != array.values.size()) throw FormatError("IDX: dims do not match value count");
  std::string out;
  out.push_back(0);
  out.push_back(0);
  out.push_back(static_cast<char>(array.type));
  out.push_back(static_cast<char>(array.dims.size()));
  for (std::size_t d : array.dims) write_be(out, d, 4);
  const std::size_t width = idx_width(array.type);
  for (double v : array.values) {
    std::uint64_t raw = 0;
    switch (array.type) {
      case IdxType::u8:
      case IdxType::i8:
      case IdxType::i16:
      case IdxType::i32:
        raw = static_cast<std::uint64_t>(static_cast<std::int64_t>(v));
        break;
      case IdxType::f32: raw = std::bit_cast<std::uint32_t>(static_cast<float>(v)); break;
      case IdxType::f64: raw = std::bit_cast<std::uint64_t>(v); break;
    }
    write_be(out, raw, width);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("IDX: cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("IDX: write failed for " + path.string());
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  IdxArray img = read_idx(images);
  IdxArray lab = read_idx(labels);
  if (img.dims.size() < 2 || img.dims.size() > 4) {
    throw FormatError(images.string() + ": expected an input file of rank 2 to 4, got rank " +
                      std::to_string(img.dims.size()));
  }
  if (lab.dims.size() != 1) {
    throw FormatError(labels.string() + ": expected a rank-1 label file (magic 0x00000801)");
  }
  if (img.dims[0] != lab.dims[0]) {
    throw FormatError("IDX: " + std::to_string(img.dims[0]) + " images but " +
                      std::to_string(lab.dims[0]) + " labels");
  }
  if (img.type == IdxType::u8) {
    for (double& v : img.values) v /= 255.0;
  }
  Dataset d;
  Shape shape = img.dims;
  if (shape.size() == 3) shape.insert(shape.begin() + 1, 1);
  d.inputs = Tensor(std::move(shape), std::move(img.values));
  d.targets = Tensor(Shape{lab.dims[0]}, std::move(lab.values));
  return d;
}

Dataset load_cifar_bin(const std::filesystem::path& path, CifarVariant variant) {
  const std::string bytes = slurp(path);
  const std::size_t label_bytes = variant == CifarVariant::cifar100 ? 2 : 1;
  constexpr std::size_t kPixels = 3 * 32 * 32;
  const std::size_t record = label_bytes + kPixels;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of the " + std::to_string(record) + "-byte record");
  }
  const std::size_t n = bytes.size() / record;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  Dataset d;
  d.inputs = Tensor(Shape{n, 3, 32, 32});
  d.targets = Tensor(Shape{n});
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = p + r * record;
    d.targets[r] = static_cast<double>(rec[label_bytes - 1]);
    for (std::size_t i = 0; i < kPixels; ++i) {
      d.inputs[r * kPixels + i] = static_cast<double>(rec[label_bytes + i]) / 255.0;
    }
  }
  return d;
}

}  // namespace sidetune
