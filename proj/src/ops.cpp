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

#include "sidetune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sidetune/error.hpp"
#include "sidetune/kernels.hpp"

namespace sidetune::ops {

namespace {

Tape& tape_of(const char* op, const Var& a) {
  if (!a.valid()) throw ContractError(std::string(op) + ": unbound input");
  return *a.tape();
}

Tape& tape_of(const char* op, const Var& a, const Var& b) {
  Tape& t = tape_of(op, a);
  if (b.tape() != &t) throw ContractError(std::string(op) + ": inputs live on different tapes");
  return t;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                       to_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& want) {
  throw DimensionError(std::string(op) + ": shape " + to_string(a) + " invalid, expected " + want);
}

Tensor transpose2d(const Tensor& t) {
  const std::size_t rows = t.dim(0);
  const std::size_t cols = t.dim(1);
  Tensor out(Shape{cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = t[r * cols + c];
  }
  return out;
}

void accumulate(Tape& tape, std::size_t id, const Tensor& g) {
  if (!tape.requires_grad(id)) return;
  Tensor& dst = tape.grad(id);
  kernels::active().add(dst.size(), dst.raw(), g.raw(), dst.raw());
}

void check_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_error("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.dim(0);
  const std::size_t k = av.dim(1);
  const std::size_t n = bv.dim(1);
  Tensor out(Shape{m, n}, 0.0);
  kernels::active().gemm(m, k, n, av.raw(), bv.raw(), out.raw());
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record("matmul", std::move(out), {ia, ib},
                     [ia, ib, m, k, n](Tape& t, const Tensor& g) {
                       const auto& kern = kernels::active();
                       if (t.requires_grad(ia)) {
                         const Tensor bt = transpose2d(t.value(ib));
                         kern.gemm(m, n, k, g.raw(), bt.raw(), t.grad(ia).raw());
                       }
                       if (t.requires_grad(ib)) {
                         const Tensor at = transpose2d(t.value(ia));
                         kern.gemm(k, m, n, at.raw(), g.raw(), t.grad(ib).raw());
                       }
                     });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = tape_of("add", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto& kern = kernels::active();
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  if (av.shape() == bv.shape()) {
    Tensor out(av.shape());
    kern.add(out.size(), av.raw(), bv.raw(), out.raw());
    return tape.record("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
      accumulate(t, ia, g);
      accumulate(t, ib, g);
    });
  }
  if (bv.rank() != 1 || av.rank() < 1 || av.shape().back() != bv.dim(0)) {
    shape_error("add", av.shape(), bv.shape());
  }
  const std::size_t width = bv.dim(0);
  const std::size_t rows = av.size() / width;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    kern.add(width, av.raw() + r * width, bv.raw(), out.raw() + r * width);
  }
  return tape.record("add", std::move(out), {ia, ib},
                     [ia, ib, rows, width](Tape& t, const Tensor& g) {
                       accumulate(t, ia, g);
                       if (t.requires_grad(ib)) {
                         Tensor& db = t.grad(ib);
                         for (std::size_t r = 0; r < rows; ++r) {
                           kernels::active().add(width, db.raw(), g.raw() + r * width, db.raw());
                         }
                       }
                     });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = tape_of("sub", a, b);
  check_same("sub", a, b);
  Tensor out(a.shape());
  kernels::active().sub(out.size(), a.value().raw(), b.value().raw(), out.raw());
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    accumulate(t, ia, g);
    if (t.requires_grad(ib)) {
      Tensor& db = t.grad(ib);
      kernels::active().sub(db.size(), db.raw(), g.raw(), db.raw());
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = tape_of("mul", a, b);
  check_same("mul", a, b);
  Tensor out(a.shape());
  kernels::active().mul(out.size(), a.value().raw(), b.value().raw(), out.raw());
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    const auto& kern = kernels::active();
    if (t.requires_grad(ia)) kern.mul_acc(g.size(), g.raw(), t.value(ib).raw(), t.grad(ia).raw());
    if (t.requires_grad(ib)) kern.mul_acc(g.size(), g.raw(), t.value(ia).raw(), t.grad(ib).raw());
  });
}

Var scale(const Var& a, double factor) {
  Tape& tape = tape_of("scale", a);
  if (!std::isfinite(factor)) throw NumericError("scale: non-finite factor");
  Tensor out(a.shape());
  kernels::active().scale(out.size(), factor, a.value().raw(), out.raw());
  const std::size_t ia = a.id();
  return tape.record("scale", std::move(out), {ia}, [ia, factor](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) kernels::active().axpy(g.size(), factor, g.raw(), t.grad(ia).raw());
  });
}

Var scalar_blend(const Var& alpha, const Var& b, const Var& s) {
  Tape& tape = tape_of("scalar_blend", b, s);
  if (alpha.tape() != &tape) throw ContractError("scalar_blend: alpha lives on a different tape");
  check_same("scalar_blend", b, s);
  if (alpha.value().size() != 1) shape_error("scalar_blend", alpha.shape(), "one-element alpha");
  const double a = alpha.value()[0];
  Tensor out(b.shape());
  kernels::active().blend(out.size(), a, b.value().raw(), 1.0 - a, s.value().raw(), out.raw());
  const std::size_t ialpha = alpha.id();
  const std::size_t ib = b.id();
  const std::size_t is = s.id();
  return tape.record("scalar_blend", std::move(out), {ialpha, ib, is},
                     [ialpha, ib, is, a](Tape& t, const Tensor& g) {
                       const auto& kern = kernels::active();
                       if (t.requires_grad(ib)) kern.axpy(g.size(), a, g.raw(), t.grad(ib).raw());
                       if (t.requires_grad(is)) {
                         kern.axpy(g.size(), 1.0 - a, g.raw(), t.grad(is).raw());
                       }
                       if (t.requires_grad(ialpha)) {
                         const Tensor& bv = t.value(ib);
                         const Tensor& sv = t.value(is);
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (bv[i] - sv[i]);
                         t.grad(ialpha)[0] += acc;
                       }
                     });
}

Var relu(const Var& x) {
  Tape& tape = tape_of("relu", x);
  Tensor out(x.shape());
  kernels::active().relu(out.size(), x.value().raw(), out.raw());
  const std::size_t ix = x.id();
  return tape.record("relu", std::move(out), {ix}, [ix](Tape& t, const Tensor& g) {
    if (t.requires_grad(ix)) {
      kernels::active().relu_backward(g.size(), t.value(ix).raw(), g.raw(), t.grad(ix).raw());
    }
  });
}

Var tanh(const Var& x) {
  Tape& tape = tape_of("tanh", x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  const std::size_t ix = x.id();
  Tensor y = out;
  return tape.record("tanh", std::move(out), {ix},
                     [ix, y = std::move(y)](Tape& t, const Tensor& g) {
                       if (!t.requires_grad(ix)) return;
                       Tensor& dx = t.grad(ix);
                       for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
                     });
}

Var sigmoid(const Var& x) {
  Tape& tape = tape_of("sigmoid", x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  const std::size_t ix = x.id();
  Tensor y = out;
  return tape.record("sigmoid", std::move(out), {ix},
                     [ix, y = std::move(y)](Tape& t, const Tensor& g) {
                       if (!t.requires_grad(ix)) return;
                       Tensor& dx = t.grad(ix);
                       for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
                     });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options) {
  Tape& tape = tape_of("conv2d", x, weight);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1)) {
    shape_error("conv2d", xv.shape(), wv.shape());
  }
  if (options.stride == 0) throw DimensionError("conv2d: stride must be positive");
  const bool has_bias = bias.valid();
  if (has_bias) {
    if (bias.tape() != &tape) throw ContractError("conv2d: bias lives on a different tape");
    if (bias.value().rank() != 1 || bias.value().dim(0) != wv.dim(0)) {
      shape_error("conv2d", bias.shape(), "bias [" + std::to_string(wv.dim(0)) + "]");
    }
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t o = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const std::size_t stride = options.stride, pad = options.pad;
  if (h + 2 * pad < kh || w + 2 * pad < kw) shape_error("conv2d", xv.shape(), wv.shape());
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;

  Tensor out(Shape{n, o, oh, ow}, 0.0);
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oc = 0; oc < o; ++oc) {
      double* dst = out.raw() + (in * o + oc) * oh * ow;
      const double b0 = has_bias ? bias.value()[oc] : 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) dst[i] = b0;
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* src = xv.raw() + (in * c + ic) * h * w;
        const double* ker = wv.raw() + (oc * c + ic) * kh * kw;
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            double acc = dst[y * ow + xx];
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += src[iy * static_cast<std::ptrdiff_t>(w) + ix] * ker[ky * kw + kx];
              }
            }
            dst[y * ow + xx] = acc;
          }
        }
      }
    }
  }

  const std::size_t ixv = x.id();
  const std::size_t iw = weight.id();
  std::vector<std::size_t> inputs{ixv, iw};
  const std::size_t ib = has_bias ? bias.id() : 0;
  if (has_bias) inputs.push_back(ib);
  return tape.record(
      "conv2d", std::move(out), std::move(inputs),
      [=](Tape& t, const Tensor& g) {
        const Tensor& xin = t.value(ixv);
        const Tensor& win = t.value(iw);
        const bool need_x = t.requires_grad(ixv);
        const bool need_w = t.requires_grad(iw);
        double* dx = need_x ? t.grad(ixv).raw() : nullptr;
        double* dw = need_w ? t.grad(iw).raw() : nullptr;
        if (has_bias && t.requires_grad(ib)) {
          Tensor& db = t.grad(ib);
          for (std::size_t in = 0; in < n; ++in) {
            for (std::size_t oc = 0; oc < o; ++oc) {
              const double* go = g.raw() + (in * o + oc) * oh * ow;
              double acc = 0.0;
              for (std::size_t i = 0; i < oh * ow; ++i) acc += go[i];
              db[oc] += acc;
            }
          }
        }
        if (!need_x && !need_w) return;
        for (std::size_t in = 0; in < n; ++in) {
          for (std::size_t oc = 0; oc < o; ++oc) {
            const double* go = g.raw() + (in * o + oc) * oh * ow;
            for (std::size_t ic = 0; ic < c; ++ic) {
              const std::size_t xoff = (in * c + ic) * h * w;
              const std::size_t woff = (oc * c + ic) * kh * kw;
              for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t xx = 0; xx < ow; ++xx) {
                  const double gv = go[y * ow + xx];
                  for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx * stride + kx) -
                                                static_cast<std::ptrdiff_t>(pad);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                      const std::size_t xi = xoff + static_cast<std::size_t>(iy) * w +
                                             static_cast<std::size_t>(ix);
                      const std::size_t wi = woff + ky * kw + kx;
                      if (dx != nullptr) dx[xi] += gv * win[wi];
                      if (dw != nullptr) dw[wi] += gv * xin[xi];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var avgpool2d(const Var& x, std::size_t kernel, std::size_t stride) {
  Tape& tape = tape_of("avgpool2d", x);
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || kernel == 0 || stride == 0 || xv.dim(2) < kernel || xv.dim(3) < kernel) {
    shape_error("avgpool2d", xv.shape(),
                "[n, c, h, w] with h, w >= kernel " + std::to_string(kernel));
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = (h - kernel) / stride + 1;
  const std::size_t ow = (w - kernel) / stride + 1;
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  Tensor out(Shape{n, c, oh, ow}, 0.0);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = xv.raw() + plane * h * w;
    double* dst = out.raw() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            acc += src[(y * stride + ky) * w + xx * stride + kx];
          }
        }
        dst[y * ow + xx] = acc * inv;
      }
    }
  }
  const std::size_t ix = x.id();
  return tape.record("avgpool2d", std::move(out), {ix}, [=](Tape& t, const Tensor& g) {
    if (!t.requires_grad(ix)) return;
    Tensor& dx = t.grad(ix);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      double* dst = dx.raw() + plane * h * w;
      const double* go = g.raw() + plane * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double share = go[y * ow + xx] * inv;
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              dst[(y * stride + ky) * w + xx * stride + kx] += share;
            }
          }
        }
      }
    }
  });
}

Var flatten(const Var& x) {
  Tape& tape = tape_of("flatten", x);
  const Tensor& xv = x.value();
  if (xv.rank() < 1) shape_error("flatten", xv.shape(), "rank >= 1");
  const std::size_t rows = xv.dim(0);
  Tensor out = xv.reshaped(Shape{rows, xv.size() / rows});
  const std::size_t ix = x.id();
  return tape.record("flatten", std::move(out), {ix}, [ix](Tape& t, const Tensor& g) {
    accumulate(t, ix, g);
  });
}

Var sum(const Var& x) {
  Tape& tape = tape_of("sum", x);
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  const std::size_t ix = x.id();
  return tape.record("sum", Tensor::scalar(acc), {ix}, [ix](Tape& t, const Tensor& g) {
    if (!t.requires_grad(ix)) return;
    Tensor& dx = t.grad(ix);
    const double gv = g[0];
    for (double& v : dx.data()) v += gv;
  });
}

Var mse_loss(const Var& pred, const Tensor& target) {
  Tape& tape = tape_of("mse_loss", pred);
  const Tensor& pv = pred.value();
  if (pv.shape() != target.shape()) shape_error("mse_loss", pv.shape(), target.shape());
  if (!target.all_finite()) throw NumericError("mse_loss: non-finite target");
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  Tensor diff(pv.shape());
  kernels::active().sub(diff.size(), pv.raw(), target.raw(), diff.raw());
  double acc = 0.0;
  for (double d : diff.data()) acc += d * d;
  const std::size_t ip = pred.id();
  return tape.record("mse_loss", Tensor::scalar(acc * inv_n), {ip},
                     [ip, inv_n, diff = std::move(diff)](Tape& t, const Tensor& g) {
                       if (!t.requires_grad(ip)) return;
                       kernels::active().axpy(diff.size(), 2.0 * inv_n * g[0], diff.raw(),
                                              t.grad(ip).raw());
                     });
}

Var l1_loss(const Var& pred, const Tensor& target) {
  Tape& tape = tape_of("l1_loss", pred);
  const Tensor& pv = pred.value();
  if (pv.shape() != target.shape()) shape_error("l1_loss", pv.shape(), target.shape());
  if (!target.all_finite()) throw NumericError("l1_loss: non-finite target");
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  Tensor sign(pv.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - target[i];
    acc += std::abs(d);
    sign[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  }
  const std::size_t ip = pred.id();
  return tape.record("l1_loss", Tensor::scalar(acc * inv_n), {ip},
                     [ip, inv_n, sign = std::move(sign)](Tape& t, const Tensor& g) {
                       if (!t.requires_grad(ip)) return;
                       kernels::active().axpy(sign.size(), inv_n * g[0], sign.raw(),
                                              t.grad(ip).raw());
                     });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& labels) {
  Tape& tape = tape_of("softmax_cross_entropy", logits);
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || labels.rank() != 1 || labels.dim(0) != lv.dim(0)) {
    shape_error("softmax_cross_entropy", lv.shape(), labels.shape());
  }
  const std::size_t n = lv.dim(0);
  const std::size_t classes = lv.dim(1);
  Tensor probs(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double label_f = labels[r];
    if (!(label_f >= 0.0) || label_f >= static_cast<double>(classes) ||
        label_f != std::floor(label_f)) {
      throw DimensionError("softmax_cross_entropy: label " + std::to_string(label_f) +
                           " outside [0, " + std::to_string(classes) + ")");
    }
    const std::size_t label = static_cast<std::size_t>(label_f);
    const double* row = lv.raw() + r * classes;
    double* prow = probs.raw() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      prow[c] = std::exp(row[c] - peak);
      denom += prow[c];
    }
    for (std::size_t c = 0; c < classes; ++c) prow[c] /= denom;
    total += std::log(denom) + peak - row[label];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t il = logits.id();
  Tensor targets = labels;
  return tape.record(
      "softmax_cross_entropy", Tensor::scalar(total * inv_n), {il},
      [il, n, classes, inv_n, probs = std::move(probs), targets = std::move(targets)](
          Tape& t, const Tensor& g) {
        if (!t.requires_grad(il)) return;
        Tensor& dl = t.grad(il);
        const double scale_by = g[0] * inv_n;
        for (std::size_t r = 0; r < n; ++r) {
          const std::size_t label = static_cast<std::size_t>(targets[r]);
          for (std::size_t c = 0; c < classes; ++c) {
            const double p = probs[r * classes + c] - (c == label ? 1.0 : 0.0);
            dl[r * classes + c] += scale_by * p;
          }
        }
      });
}

}  // namespace sidetune::ops
