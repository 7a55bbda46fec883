// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.hpp
 * @brief  Differentiable tensor operations.
 *
 * Layout conventions: row-major storage, channel-first maps. Convolution and
 * pooling ops accept an optional leading batch axis ([C,L] or [N,C,L] for
 * 1D, [C,S,H,W] or [N,C,S,H,W] for 3D). Convolutions use the
 * cross-correlation convention (no kernel flip).
 */
#ifndef CFNSR_OPS_HPP_
#define CFNSR_OPS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace cfnsr {

enum class Mode { train, eval };
enum class Activation { relu, tanh };

/// Per-axis (depth/time, height, width) parameter of a 3D op.
struct Triple {
  std::size_t s = 1, h = 1, w = 1;
  friend bool operator==(const Triple &, const Triple &) = default;
};

namespace detail {

inline void require_same_shape(const Tensor &a, const Tensor &b,
                               const std::string &op) {
  if (a.shape() != b.shape())
    throw DimensionError(op + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
}

inline std::size_t prod(const Shape &shape, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i)
    p *= shape[i];
  return p;
}

/// Output positions [lo, hi) whose tap `offset` lands inside the input.
inline std::pair<std::size_t, std::size_t>
valid_range(std::size_t out_len, std::size_t in_len, std::size_t stride,
            std::size_t pad, std::size_t offset) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t need_lo =
      static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(offset);
  const std::ptrdiff_t need_hi = static_cast<std::ptrdiff_t>(in_len) - 1 +
                                 static_cast<std::ptrdiff_t>(pad) -
                                 static_cast<std::ptrdiff_t>(offset);
  std::ptrdiff_t lo = need_lo <= 0 ? 0 : (need_lo + s - 1) / s;
  std::ptrdiff_t hi = need_hi < 0 ? 0 : need_hi / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_len));
  if (lo > hi)
    lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline std::size_t conv_out_len(std::size_t in, std::size_t k,
                                std::size_t stride, std::size_t pad,
                                const std::string &op, const char *axis) {
  if (stride == 0)
    throw ConfigError(op + ": stride must be >= 1");
  if (k > in + 2 * pad)
    throw DimensionError(op + ": kernel extent " + std::to_string(k) +
                         " exceeds padded input extent " +
                         std::to_string(in + 2 * pad) + " on axis " + axis);
  return (in + 2 * pad - k) / stride + 1;
}

/// y[t] += sum_j w[j] * x_j[t] for `m` rows x_j = x + j * ldx, in blocks
/// of four rows so y is loaded and stored once per block.
inline void accumulate_rows(double *y, const double *w, std::size_t wstep,
                            const double *x, std::size_t ldx, std::size_t m,
                            std::size_t len) {
  std::size_t j = 0;
  for (; j + 4 <= m; j += 4) {
    const double w0 = w[j * wstep], w1 = w[(j + 1) * wstep],
                 w2 = w[(j + 2) * wstep], w3 = w[(j + 3) * wstep];
    const double *x0 = x + j * ldx, *x1 = x0 + ldx, *x2 = x1 + ldx,
                 *x3 = x2 + ldx;
    for (std::size_t t = 0; t < len; ++t)
      y[t] += w0 * x0[t] + w1 * x1[t] + w2 * x2[t] + w3 * x3[t];
  }
  for (; j < m; ++j) {
    const double wj = w[j * wstep];
    const double *xj = x + j * ldx;
    for (std::size_t t = 0; t < len; ++t)
      y[t] += wj * xj[t];
  }
}

/// Dot product with four independent partial sums.
inline double dot(const double *a, const double *b, std::size_t len) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t t = 0;
  for (; t + 4 <= len; t += 4) {
    s0 += a[t] * b[t];
    s1 += a[t + 1] * b[t + 1];
    s2 += a[t + 2] * b[t + 2];
    s3 += a[t + 3] * b[t + 3];
  }
  for (; t < len; ++t)
    s0 += a[t] * b[t];
  return (s0 + s1) + (s2 + s3);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b},
                             [](detail::Node &self) {
                               for (std::size_t k = 0; k < 2; ++k)
                                 if (double *g = detail::input_grad(self, k))
                                   for (std::size_t i = 0; i < self.grad.size();
                                        ++i)
                                     g[i] += self.grad[i];
                             });
}

inline Tensor sub(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(out), {a, b},
                             [](detail::Node &self) {
                               const std::size_t n = self.grad.size();
                               if (double *g = detail::input_grad(self, 0))
                                 for (std::size_t i = 0; i < n; ++i)
                                   g[i] += self.grad[i];
                               if (double *g = detail::input_grad(self, 1))
                                 for (std::size_t i = 0; i < n; ++i)
                                   g[i] -= self.grad[i];
                             });
}

inline Tensor mul(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] * b[i];
  return detail::make_result(
      "mul", a.shape(), std::move(out), {a, b}, [](detail::Node &self) {
        const auto &x = self.inputs[0]->data;
        const auto &y = self.inputs[1]->data;
        const std::size_t n = self.grad.size();
        if (double *g = detail::input_grad(self, 0))
          for (std::size_t i = 0; i < n; ++i)
            g[i] += self.grad[i] * y[i];
        if (double *g = detail::input_grad(self, 1))
          for (std::size_t i = 0; i < n; ++i)
            g[i] += self.grad[i] * x[i];
      });
}

inline Tensor scale(const Tensor &x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[i] * factor;
  return detail::make_result("scale", x.shape(), std::move(out), {x},
                             [factor](detail::Node &self) {
                               if (double *g = detail::input_grad(self, 0))
                                 for (std::size_t i = 0; i < self.grad.size();
                                      ++i)
                                   g[i] += factor * self.grad[i];
                             });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor &x, Shape shape) {
  if (numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) +
                         " as " + to_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {x},
                             [](detail::Node &self) {
                               if (double *g = detail::input_grad(self, 0))
                                 for (std::size_t i = 0; i < self.grad.size();
                                      ++i)
                                   g[i] += self.grad[i];
                             });
}

/// Inserts a unit axis at position 0.
inline Tensor unsqueeze0(const Tensor &x) {
  Shape s = x.shape();
  s.insert(s.begin(), 1);
  return reshape(x, std::move(s));
}

/// Removes a unit leading axis.
inline Tensor squeeze0(const Tensor &x) {
  if (x.rank() == 0 || x.dim(0) != 1)
    throw DimensionError("squeeze0: leading extent of " +
                         to_string(x.shape()) + " is not 1");
  return reshape(x, Shape(x.shape().begin() + 1, x.shape().end()));
}

/// Swaps the last two axes.
inline Tensor transpose(const Tensor &x) {
  if (x.rank() < 2)
    throw DimensionError("transpose: needs rank >= 2, got " +
                         to_string(x.shape()));
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  const std::size_t batch = x.size() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out[b * r * c + j * r + i] = in[b * r * c + i * c + j];
  return detail::make_result(
      "transpose", std::move(shape), std::move(out), {x},
      [batch, r, c](detail::Node &self) {
        if (double *g = detail::input_grad(self, 0))
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < c; ++j)
                g[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
      });
}

/// Concatenates tensors of equal rank along `axis`.
inline Tensor concat(const std::vector<Tensor> &parts, std::size_t axis) {
  if (parts.empty())
    throw DimensionError("concat: no inputs");
  const Shape &ref = parts.front().shape();
  if (axis >= ref.size())
    throw DimensionError("concat: axis out of range for " + to_string(ref));
  Shape shape = ref;
  shape[axis] = 0;
  for (const Tensor &p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t d = 0; ok && d < ref.size(); ++d)
      ok = d == axis || p.dim(d) == ref[d];
    if (!ok)
      throw DimensionError("concat: incompatible shapes " + to_string(ref) +
                           " and " + to_string(p.shape()));
    shape[axis] += p.dim(axis);
  }
  const std::size_t outer = detail::prod(ref, 0, axis);
  const std::size_t inner = detail::prod(ref, axis + 1, ref.size());
  const std::size_t row = shape[axis] * inner;
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor &p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * inner;
    auto in = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(in.begin() + o * chunk, chunk,
                  out.begin() + o * row + offset);
    offset += chunk;
  }
  return detail::make_result(
      "concat", std::move(shape), std::move(out), parts,
      [outer, row, offsets](detail::Node &self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          double *g = detail::input_grad(self, k);
          if (!g)
            continue;
          const std::size_t chunk = self.inputs[k]->data.size() / outer;
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < chunk; ++i)
              g[o * chunk + i] += self.grad[o * row + offsets[k] + i];
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product. Rank-3 operands are batched; a rank-2 operand paired
/// with a rank-3 one is broadcast over the batch.
inline Tensor matmul(const Tensor &a, const Tensor &b) {
  const std::size_t ra = a.rank(), rb = b.rank();
  if (ra < 2 || ra > 3 || rb < 2 || rb > 3)
    throw DimensionError("matmul: operands must be rank 2 or 3, got " +
                         to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t m = a.dim(ra - 2), k = a.dim(ra - 1);
  const std::size_t k2 = b.dim(rb - 2), n = b.dim(rb - 1);
  std::size_t batch = 1;
  if (ra == 3 && rb == 3 && a.dim(0) != b.dim(0))
    throw DimensionError("matmul: batch extents disagree " +
                         to_string(a.shape()) + " x " + to_string(b.shape()));
  if (ra == 3)
    batch = a.dim(0);
  else if (rb == 3)
    batch = b.dim(0);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree " +
                         to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t a_step = ra == 3 ? m * k : 0;
  const std::size_t b_step = rb == 3 ? k * n : 0;
  Shape shape = (ra == 3 || rb == 3) ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const double *ap = A.data() + bi * a_step;
    const double *bp = B.data() + bi * b_step;
    double *cp = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ap[i * k + p];
        const double *brow = bp + p * n;
        double *crow = cp + i * n;
        for (std::size_t j = 0; j < n; ++j)
          crow[j] += av * brow[j];
      }
  }
  return detail::make_result(
      "matmul", std::move(shape), std::move(out), {a, b},
      [=](detail::Node &self) {
        const double *A = self.inputs[0]->data.data();
        const double *B = self.inputs[1]->data.data();
        double *ga = detail::input_grad(self, 0);
        double *gb = detail::input_grad(self, 1);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const double *gc = self.grad.data() + bi * m * n;
          const double *ap = A + bi * a_step;
          const double *bp = B + bi * b_step;
          if (ga) {
            double *gap = ga + bi * a_step;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p)
                gap[i * k + p] += detail::dot(gc + i * n, bp + p * n, n);
          }
          if (gb) {
            double *gbp = gb + bi * b_step;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                const double av = ap[i * k + p];
                for (std::size_t j = 0; j < n; ++j)
                  gbp[p * n + j] += av * gc[i * n + j];
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Broadcasting

/// Adds `v` to every trailing block of `t`; v's shape must be a leading
/// prefix of t's shape (v[c] is added to all of channel c).
inline Tensor broadcast_add(const Tensor &t, const Tensor &v) {
  bool ok = v.rank() <= t.rank();
  for (std::size_t d = 0; ok && d < v.rank(); ++d)
    ok = v.dim(d) == t.dim(d);
  if (!ok)
    throw DimensionError("broadcast_add: vector " + to_string(v.shape()) +
                         " does not match leading extents of " +
                         to_string(t.shape()));
  const std::size_t inner = t.size() / v.size();
  std::vector<double> out(t.size());
  auto td = t.data();
  auto vd = v.data();
  for (std::size_t j = 0; j < v.size(); ++j)
    for (std::size_t i = 0; i < inner; ++i)
      out[j * inner + i] = td[j * inner + i] + vd[j];
  return detail::make_result(
      "broadcast_add", t.shape(), std::move(out), {t, v},
      [inner](detail::Node &self) {
        if (double *g = detail::input_grad(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] += self.grad[i];
        if (double *g = detail::input_grad(self, 1)) {
          const std::size_t outer = self.grad.size() / inner;
          for (std::size_t j = 0; j < outer; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < inner; ++i)
              acc += self.grad[j * inner + i];
            g[j] += acc;
          }
        }
      });
}

/// Adds `b` to every leading slice of `t`; b's shape must be a trailing
/// suffix of t's shape (the usual dense-layer bias).
inline Tensor bias_add(const Tensor &t, const Tensor &b) {
  bool ok = b.rank() <= t.rank();
  for (std::size_t d = 0; ok && d < b.rank(); ++d)
    ok = b.dim(b.rank() - 1 - d) == t.dim(t.rank() - 1 - d);
  if (!ok)
    throw DimensionError("bias_add: bias " + to_string(b.shape()) +
                         " does not match trailing extents of " +
                         to_string(t.shape()));
  const std::size_t width = b.size();
  const std::size_t outer = t.size() / width;
  std::vector<double> out(t.size());
  auto td = t.data();
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < width; ++j)
      out[o * width + j] = td[o * width + j] + bd[j];
  return detail::make_result(
      "bias_add", t.shape(), std::move(out), {t, b},
      [outer, width](detail::Node &self) {
        if (double *g = detail::input_grad(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] += self.grad[i];
        if (double *g = detail::input_grad(self, 1))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < width; ++j)
              g[j] += self.grad[o * width + j];
      });
}

// ---------------------------------------------------------------------------
// Nonlinearities and reductions

inline Tensor activation(const Tensor &x, Activation kind) {
  std::vector<double> out(x.size());
  auto in = x.data();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return detail::make_result(
        "relu", x.shape(), std::move(out), {x}, [](detail::Node &self) {
          const auto &xin = self.inputs[0]->data;
          if (double *g = detail::input_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
              if (xin[i] > 0.0)
                g[i] += self.grad[i];
        });
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::tanh(in[i]);
  return detail::make_result(
      "tanh", x.shape(), std::move(out), {x}, [](detail::Node &self) {
        if (double *g = detail::input_grad(self, 0))
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.data[i];
            g[i] += self.grad[i] * (1.0 - y * y);
          }
      });
}

inline Tensor relu(const Tensor &x) { return activation(x, Activation::relu); }
inline Tensor tanh(const Tensor &x) { return activation(x, Activation::tanh); }

/// Numerically stabilised softmax along `axis`.
inline Tensor softmax(const Tensor &x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + to_string(x.shape()));
  const std::size_t outer = detail::prod(x.shape(), 0, axis);
  const std::size_t len = x.dim(axis);
  const std::size_t inner = detail::prod(x.shape(), axis + 1, x.rank());
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < len; ++l)
        mx = std::max(mx, in[base + l * inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(in[base + l * inner] - mx);
        out[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l)
        out[base + l * inner] /= total;
    }
  return detail::make_result(
      "softmax", x.shape(), std::move(out), {x},
      [outer, len, inner](detail::Node &self) {
        double *g = detail::input_grad(self, 0);
        if (!g)
          return;
        const auto &y = self.data;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double dot = 0.0;
            for (std::size_t l = 0; l < len; ++l)
              dot += self.grad[base + l * inner] * y[base + l * inner];
            for (std::size_t l = 0; l < len; ++l) {
              const std::size_t idx = base + l * inner;
              g[idx] += y[idx] * (self.grad[idx] - dot);
            }
          }
      });
}

inline Tensor sum(const Tensor &x) {
  double total = 0.0;
  for (double v : x.data())
    total += v;
  return detail::make_result("sum", {}, {total}, {x}, [](detail::Node &self) {
    if (double *g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i)
        g[i] += self.grad[0];
  });
}

inline Tensor mean(const Tensor &x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

/// Mean along `axis`; the axis is removed from the result.
inline Tensor mean_axis(const Tensor &x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("mean_axis: axis " + std::to_string(axis) +
                         " out of range for " + to_string(x.shape()));
  const std::size_t outer = detail::prod(x.shape(), 0, axis);
  const std::size_t len = x.dim(axis);
  const std::size_t inner = detail::prod(x.shape(), axis + 1, x.rank());
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner, 0.0);
  auto in = x.data();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += in[(o * len + l) * inner + i];
  for (double &v : out)
    v *= inv;
  return detail::make_result(
      "mean_axis", std::move(shape), std::move(out), {x},
      [outer, len, inner, inv](detail::Node &self) {
        if (double *g = detail::input_grad(self, 0))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
              for (std::size_t i = 0; i < inner; ++i)
                g[(o * len + l) * inner + i] += self.grad[o * inner + i] * inv;
      });
}

// ---------------------------------------------------------------------------
// Convolution

/// 1D cross-correlation. x: [C_in, L] or [N, C_in, L];
/// kernel: [C_out, C_in, k]; optional bias: [C_out].
inline Tensor conv1d(const Tensor &x, const Tensor &kernel, const Tensor &bias,
                     std::size_t stride = 1, std::size_t padding = 0) {
  const bool batched = x.rank() == 3;
  if ((x.rank() != 2 && !batched) || kernel.rank() != 3)
    throw DimensionError("conv1d: expected x [C,L] or [N,C,L] and kernel "
                         "[Co,Ci,k], got " +
                         to_string(x.shape()) + " and " +
                         to_string(kernel.shape()));
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t cin = x.dim(x.rank() - 2), len = x.dim(x.rank() - 1);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin)
    throw DimensionError("conv1d: kernel " + to_string(kernel.shape()) +
                         " expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input " + to_string(x.shape()) +
                         " has " + std::to_string(cin));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw DimensionError("conv1d: bias " + to_string(bias.shape()) +
                         " does not match " + std::to_string(cout) +
                         " output channels");
  const std::size_t lout =
      detail::conv_out_len(len, k, stride, padding, "conv1d", "L");
  Shape shape = batched ? Shape{n, cout, lout} : Shape{cout, lout};
  std::vector<double> out(n * cout * lout, 0.0);
  auto X = x.data();
  auto K = kernel.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < cout; ++oc) {
      double *orow = out.data() + (b * cout + oc) * lout;
      if (bias.defined())
        std::fill_n(orow, lout, bias[oc]);
      for (std::size_t ic = 0; ic < cin; ++ic) {
        const double *xrow = X.data() + (b * cin + ic) * len;
        for (std::size_t t = 0; t < k; ++t) {
          const double wv = K[(oc * cin + ic) * k + t];
          auto [lo, hi] = detail::valid_range(lout, len, stride, padding, t);
          for (std::size_t o = lo; o < hi; ++o)
            orow[o] += wv * xrow[o * stride + t - padding];
        }
      }
    }
  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined())
    inputs.push_back(bias);
  return detail::make_result(
      "conv1d", std::move(shape), std::move(out), inputs,
      [=](detail::Node &self) {
        const double *X = self.inputs[0]->data.data();
        const double *K = self.inputs[1]->data.data();
        double *gx = detail::input_grad(self, 0);
        double *gk = detail::input_grad(self, 1);
        double *gbias =
            self.inputs.size() > 2 ? detail::input_grad(self, 2) : nullptr;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t oc = 0; oc < cout; ++oc) {
            const double *grow = self.grad.data() + (b * cout + oc) * lout;
            if (gbias)
              for (std::size_t o = 0; o < lout; ++o)
                gbias[oc] += grow[o];
            for (std::size_t ic = 0; ic < cin; ++ic) {
              const double *xrow = X + (b * cin + ic) * len;
              for (std::size_t t = 0; t < k; ++t) {
                const std::size_t widx = (oc * cin + ic) * k + t;
                auto [lo, hi] =
                    detail::valid_range(lout, len, stride, padding, t);
                if (gk) {
                  double acc = 0.0;
                  for (std::size_t o = lo; o < hi; ++o)
                    acc += grow[o] * xrow[o * stride + t - padding];
                  gk[widx] += acc;
                }
                if (gx) {
                  double *gxrow = gx + (b * cin + ic) * len;
                  const double wv = K[widx];
                  for (std::size_t o = lo; o < hi; ++o)
                    gxrow[o * stride + t - padding] += wv * grow[o];
                }
              }
            }
          }
      });
}

inline Tensor conv1d(const Tensor &x, const Tensor &kernel,
                     std::size_t stride = 1, std::size_t padding = 0) {
  return conv1d(x, kernel, Tensor{}, stride, padding);
}

/// Grouped 3D cross-correlation. x: [C_in, S, H, W] or [N, C_in, S, H, W];
/// kernel: [C_out, C_in/groups, kS, kH, kW]; optional bias: [C_out].
/// Output channel block j (of C_out/groups) reads only input block j.
inline Tensor conv3d_grouped(const Tensor &x, const Tensor &kernel,
                             const Tensor &bias, std::size_t groups,
                             Triple stride = {}, Triple padding = {0, 0, 0}) {
  const bool batched = x.rank() == 5;
  if ((x.rank() != 4 && !batched) || kernel.rank() != 5)
    throw DimensionError("conv3d: expected x [C,S,H,W] or [N,C,S,H,W] and "
                         "kernel [Co,Ci/g,kS,kH,kW], got " +
                         to_string(x.shape()) + " and " +
                         to_string(kernel.shape()));
  const std::size_t off = batched ? 1 : 0;
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t cin = x.dim(off), S = x.dim(off + 1), H = x.dim(off + 2),
                    W = x.dim(off + 3);
  const std::size_t cout = kernel.dim(0);
  if (groups == 0 || cin % groups != 0 || cout % groups != 0)
    throw ConfigError("conv3d: channels in=" + std::to_string(cin) +
                      " out=" + std::to_string(cout) +
                      " not divisible by groups=" + std::to_string(groups));
  const std::size_t cin_g = cin / groups, cout_g = cout / groups;
  if (kernel.dim(1) != cin_g)
    throw DimensionError("conv3d: kernel " + to_string(kernel.shape()) +
                         " expects " + std::to_string(kernel.dim(1)) +
                         " channels per group, input gives " +
                         std::to_string(cin_g));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw DimensionError("conv3d: bias " + to_string(bias.shape()) +
                         " does not match " + std::to_string(cout) +
                         " output channels");
  const std::size_t kS = kernel.dim(2), kH = kernel.dim(3), kW = kernel.dim(4);
  const std::size_t oS =
      detail::conv_out_len(S, kS, stride.s, padding.s, "conv3d", "S");
  const std::size_t oH =
      detail::conv_out_len(H, kH, stride.h, padding.h, "conv3d", "H");
  const std::size_t oW =
      detail::conv_out_len(W, kW, stride.w, padding.w, "conv3d", "W");
  Shape shape = batched ? Shape{n, cout, oS, oH, oW} : Shape{cout, oS, oH, oW};
  const std::size_t in_plane = S * H * W, out_plane = oS * oH * oW;
  const std::size_t ksize = kS * kH * kW;

  // Column matrix of one (sample, group): rows are (ic_local, tap), columns
  // are output positions. Padding taps stay zero.
  const std::size_t rows = cin_g * ksize;
  const std::size_t sw = stride.w;
  auto for_each_tap = [=](auto &&fn) {
    for (std::size_t icl = 0; icl < cin_g; ++icl)
      for (std::size_t a = 0; a < kS; ++a) {
        auto [s_lo, s_hi] = detail::valid_range(oS, S, stride.s, padding.s, a);
        for (std::size_t b = 0; b < kH; ++b) {
          auto [h_lo, h_hi] =
              detail::valid_range(oH, H, stride.h, padding.h, b);
          for (std::size_t c = 0; c < kW; ++c) {
            auto [w_lo, w_hi] =
                detail::valid_range(oW, W, stride.w, padding.w, c);
            const std::size_t row = icl * ksize + (a * kH + b) * kW + c;
            if (w_lo >= w_hi)
              continue;
            for (std::size_t os = s_lo; os < s_hi; ++os) {
              const std::size_t is = os * stride.s + a - padding.s;
              for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
                const std::size_t ih = oh * stride.h + b - padding.h;
                fn(icl, row * out_plane + (os * oH + oh) * oW + w_lo,
                   (is * H + ih) * W + (w_lo * stride.w + c - padding.w),
                   w_hi - w_lo);
              }
            }
          }
        }
      }
  };
  // A 1^3 kernel with unit stride and no padding reads the input directly.
  const bool pointwise = ksize == 1 && stride == Triple{} &&
                         padding == Triple{0, 0, 0};
  auto im2col = [=](const double *xg,
                    std::vector<double> &col) -> const double * {
    if (pointwise)
      return xg;
    col.assign(rows * out_plane, 0.0);
    for_each_tap([&](std::size_t icl, std::size_t cpos, std::size_t ipos,
                     std::size_t count) {
      const double *ip = xg + icl * in_plane + ipos;
      double *cp = col.data() + cpos;
      for (std::size_t t = 0; t < count; ++t)
        cp[t] = ip[t * sw];
    });
    return col.data();
  };

  std::vector<double> out(n * cout * out_plane, 0.0);
  auto X = x.data();
  auto K = kernel.data();
  std::vector<double> col;
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t g = 0; g < groups; ++g) {
      const double *cols =
          im2col(X.data() + (bn * cin + g * cin_g) * in_plane, col);
      for (std::size_t ocl = 0; ocl < cout_g; ++ocl) {
        const std::size_t oc = g * cout_g + ocl;
        double *op = out.data() + (bn * cout + oc) * out_plane;
        if (bias.defined())
          std::fill_n(op, out_plane, bias[oc]);
        detail::accumulate_rows(op, K.data() + oc * rows, 1, cols,
                                out_plane, rows, out_plane);
      }
    }

  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined())
    inputs.push_back(bias);
  return detail::make_result(
      "conv3d_grouped", std::move(shape), std::move(out), inputs,
      [=](detail::Node &self) {
        const double *X = self.inputs[0]->data.data();
        const double *K = self.inputs[1]->data.data();
        double *gx = detail::input_grad(self, 0);
        double *gk = detail::input_grad(self, 1);
        double *gbias =
            self.inputs.size() > 2 ? detail::input_grad(self, 2) : nullptr;
        std::vector<double> col, gcol;
        for (std::size_t bn = 0; bn < n; ++bn)
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t first = (bn * cin + g * cin_g) * in_plane;
            const double *cols = gk ? im2col(X + first, col) : nullptr;
            double *gcols = nullptr;
            if (gx && pointwise) {
              gcols = gx + first;
            } else if (gx) {
              gcol.assign(rows * out_plane, 0.0);
              gcols = gcol.data();
            }
            const double *gp0 =
                self.grad.data() + (bn * cout + g * cout_g) * out_plane;
            const double *kp0 = K + g * cout_g * rows;
            for (std::size_t ocl = 0; ocl < cout_g; ++ocl) {
              const std::size_t oc = g * cout_g + ocl;
              const double *gp = gp0 + ocl * out_plane;
              if (gbias)
                for (std::size_t t = 0; t < out_plane; ++t)
                  gbias[oc] += gp[t];
              if (gk)
                for (std::size_t r = 0; r < rows; ++r)
                  gk[oc * rows + r] +=
                      detail::dot(gp, cols + r * out_plane, out_plane);
            }
            if (gx)
              for (std::size_t r = 0; r < rows; ++r)
                detail::accumulate_rows(gcols + r * out_plane, kp0 + r,
                                        rows, gp0, out_plane, cout_g,
                                        out_plane);
            if (gx && !pointwise)
              for_each_tap([&](std::size_t icl, std::size_t cpos,
                               std::size_t ipos, std::size_t count) {
                double *gip = gx + first + icl * in_plane + ipos;
                const double *gc = gcol.data() + cpos;
                for (std::size_t t = 0; t < count; ++t)
                  gip[t * sw] += gc[t];
              });
          }
      });
}

inline Tensor conv3d_grouped(const Tensor &x, const Tensor &kernel,
                             std::size_t groups, Triple stride = {},
                             Triple padding = {0, 0, 0}) {
  return conv3d_grouped(x, kernel, Tensor{}, groups, stride, padding);
}

// ---------------------------------------------------------------------------
// Pooling

/// Max pooling over the last axis; ties route to the first index.
inline Tensor maxpool1d(const Tensor &x, std::size_t window,
                        std::size_t stride) {
  if (x.rank() == 0)
    throw DimensionError("maxpool1d: scalar input");
  if (window == 0 || stride == 0)
    throw ConfigError("maxpool1d: window and stride must be >= 1");
  const std::size_t len = x.dim(x.rank() - 1);
  if (window > len)
    throw DimensionError("maxpool1d: window " + std::to_string(window) +
                         " larger than input extent " + std::to_string(len));
  const std::size_t lout = (len - window) / stride + 1;
  const std::size_t rows = x.size() / len;
  Shape shape = x.shape();
  shape.back() = lout;
  std::vector<double> out(rows * lout);
  std::vector<std::size_t> argmax(rows * lout);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < lout; ++o) {
      std::size_t best = r * len + o * stride;
      for (std::size_t t = 1; t < window; ++t)
        if (in[r * len + o * stride + t] > in[best])
          best = r * len + o * stride + t;
      out[r * lout + o] = in[best];
      argmax[r * lout + o] = best;
    }
  return detail::make_result("maxpool1d", std::move(shape), std::move(out),
                             {x}, [argmax](detail::Node &self) {
                               if (double *g = detail::input_grad(self, 0))
                                 for (std::size_t i = 0; i < argmax.size(); ++i)
                                   g[argmax[i]] += self.grad[i];
                             });
}

/// Average pooling over the trailing three axes (no padding).
inline Tensor avgpool3d(const Tensor &x, Triple window, Triple stride) {
  if (x.rank() < 3)
    throw DimensionError("avgpool3d: needs rank >= 3, got " +
                         to_string(x.shape()));
  if (window.s * window.h * window.w == 0 ||
      stride.s * stride.h * stride.w == 0)
    throw ConfigError("avgpool3d: window and stride must be >= 1");
  const std::size_t r = x.rank();
  const std::size_t S = x.dim(r - 3), H = x.dim(r - 2), W = x.dim(r - 1);
  if (window.s > S || window.h > H || window.w > W)
    throw DimensionError("avgpool3d: window larger than input " +
                         to_string(x.shape()));
  const std::size_t oS = (S - window.s) / stride.s + 1;
  const std::size_t oH = (H - window.h) / stride.h + 1;
  const std::size_t oW = (W - window.w) / stride.w + 1;
  const std::size_t outer = x.size() / (S * H * W);
  Shape shape = x.shape();
  shape[r - 3] = oS;
  shape[r - 2] = oH;
  shape[r - 1] = oW;
  const double inv = 1.0 / static_cast<double>(window.s * window.h * window.w);
  std::vector<double> out(outer * oS * oH * oW);
  auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < oS; ++a)
      for (std::size_t b = 0; b < oH; ++b)
        for (std::size_t c = 0; c < oW; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < window.s; ++i)
            for (std::size_t j = 0; j < window.h; ++j)
              for (std::size_t k = 0; k < window.w; ++k)
                acc += in[((o * S + a * stride.s + i) * H + b * stride.h + j) *
                              W +
                          c * stride.w + k];
          out[((o * oS + a) * oH + b) * oW + c] = acc * inv;
        }
  return detail::make_result(
      "avgpool3d", std::move(shape), std::move(out), {x},
      [=](detail::Node &self) {
        double *g = detail::input_grad(self, 0);
        if (!g)
          return;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t a = 0; a < oS; ++a)
            for (std::size_t b = 0; b < oH; ++b)
              for (std::size_t c = 0; c < oW; ++c) {
                const double gv =
                    self.grad[((o * oS + a) * oH + b) * oW + c] * inv;
                for (std::size_t i = 0; i < window.s; ++i)
                  for (std::size_t j = 0; j < window.h; ++j)
                    for (std::size_t k = 0; k < window.w; ++k)
                      g[((o * S + a * stride.s + i) * H + b * stride.h + j) *
                            W +
                        c * stride.w + k] += gv;
              }
      });
}

// ---------------------------------------------------------------------------
// Normalisation

/// Running statistics of one batch-norm layer (not learnable).
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::size_t batches_tracked = 0;
};

/// Batch normalisation over axis 1 of x [N, C, ...]; statistics pool the
/// batch axis and every trailing axis.
inline Tensor batchnorm(const Tensor &x, const Tensor &gamma,
                        const Tensor &beta, BatchNormState &state, Mode mode,
                        double momentum = 0.1, double eps = 1e-5) {
  if (x.rank() < 2)
    throw DimensionError("batchnorm: expected [N,C,...], got " +
                         to_string(x.shape()));
  const std::size_t n = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.size() / (n * channels);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})
    throw DimensionError("batchnorm: affine parameters must be [" +
                         std::to_string(channels) + "]");
  if (state.running_mean.empty()) {
    state.running_mean.assign(channels, 0.0);
    state.running_var.assign(channels, 1.0);
  }
  if (state.running_mean.size() != channels)
    throw StateError("batchnorm: running statistics sized for " +
                     std::to_string(state.running_mean.size()) +
                     " channels, input has " + std::to_string(channels));
  if (mode == Mode::eval && state.batches_tracked == 0)
    throw StateError("batchnorm: eval mode before any running statistics "
                     "were recorded");

  const std::size_t count = n * inner;
  std::vector<double> xhat(x.size()), inv_std(channels), out(x.size());
  auto in = x.data();
  auto idx = [&](std::size_t b, std::size_t c, std::size_t i) {
    return (b * channels + c) * inner + i;
  };
  for (std::size_t c = 0; c < channels; ++c) {
    double mu, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < inner; ++i)
          s += in[idx(b, c, i)];
      mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = in[idx(b, c, i)] - mu;
          ss += d * d;
        }
      var = ss / static_cast<double>(count);
      const double unbiased =
          count > 1 ? ss / static_cast<double>(count - 1) : var;
      state.running_mean[c] =
          (1.0 - momentum) * state.running_mean[c] + momentum * mu;
      state.running_var[c] =
          (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = idx(b, c, i);
        xhat[k] = (in[k] - mu) * inv_std[c];
        out[k] = gamma[c] * xhat[k] + beta[c];
      }
  }
  if (mode == Mode::train)
    ++state.batches_tracked;

  const bool batch_stats = mode == Mode::train;
  return detail::make_result(
      "batchnorm", x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node &self) {
        const double *gam = self.inputs[1]->data.data();
        double *gx = detail::input_grad(self, 0);
        double *gg = detail::input_grad(self, 1);
        double *gb = detail::input_grad(self, 2);
        const double m = static_cast<double>(count);
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = (b * channels + c) * inner + i;
              sum_g += self.grad[k];
              sum_gx += self.grad[k] * xhat[k];
            }
          if (gg)
            gg[c] += sum_gx;
          if (gb)
            gb[c] += sum_g;
          if (!gx)
            continue;
          const double scale_c = gam[c] * inv_std[c];
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = (b * channels + c) * inner + i;
              if (batch_stats)
                gx[k] += scale_c / m *
                         (m * self.grad[k] - sum_g - xhat[k] * sum_gx);
              else
                gx[k] += scale_c * self.grad[k];
            }
        }
      });
}

/// Layer normalisation over the last axis.
inline Tensor layernorm(const Tensor &x, const Tensor &gamma,
                        const Tensor &beta, double eps = 1e-5) {
  if (x.rank() == 0)
    throw DimensionError("layernorm: scalar input");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw DimensionError("layernorm: affine parameters must be [" +
                         std::to_string(d) + "]");
  const std::size_t rows = x.size() / d;
  std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      mu += in[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double t = in[r * d + j] - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = r * d + j;
      xhat[k] = (in[k] - mu) * inv_std[r];
      out[k] = gamma[j] * xhat[k] + beta[j];
    }
  }
  return detail::make_result(
      "layernorm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node &self) {
        const double *gam = self.inputs[1]->data.data();
        double *gx = detail::input_grad(self, 0);
        double *gg = detail::input_grad(self, 1);
        double *gb = detail::input_grad(self, 2);
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dx = 0.0, sum_dx_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t k = r * d + j;
            const double dxhat = self.grad[k] * gam[j];
            sum_dx += dxhat;
            sum_dx_xhat += dxhat * xhat[k];
            if (gg)
              gg[j] += self.grad[k] * xhat[k];
            if (gb)
              gb[j] += self.grad[k];
          }
          if (!gx)
            continue;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t k = r * d + j;
            const double dxhat = self.grad[k] * gam[j];
            gx[k] +=
                inv_std[r] / dd * (dd * dxhat - sum_dx - xhat[k] * sum_dx_xhat);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Regularisation and loss

/// Inverted dropout. The keep mask is a pure function of `seed`.
inline Tensor dropout(const Tensor &x, double rate, Mode mode,
                      std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout: rate must lie in [0, 1), got " +
                      std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0)
    return x;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size()), out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : 0.0;
    out[i] = in[i] * mask[i];
  }
  return detail::make_result("dropout", x.shape(), std::move(out), {x},
                             [mask = std::move(mask)](detail::Node &self) {
                               if (double *g = detail::input_grad(self, 0))
                                 for (std::size_t i = 0; i < mask.size(); ++i)
                                   g[i] += self.grad[i] * mask[i];
                             });
}

/// Mean cross-entropy of softmax(logits) against class indices, in the
/// log-sum-exp form. logits: [d] (one label) or [N, d].
inline Tensor cross_entropy(const Tensor &logits,
                            std::span<const std::size_t> labels) {
  if (logits.rank() != 1 && logits.rank() != 2)
    throw DimensionError("cross_entropy: logits must be [d] or [N,d], got " +
                         to_string(logits.shape()));
  const std::size_t n = logits.rank() == 2 ? logits.dim(0) : 1;
  const std::size_t d = logits.dim(logits.rank() - 1);
  if (labels.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  for (std::size_t y : labels)
    if (y >= d)
      throw DimensionError("cross_entropy: label " + std::to_string(y) +
                           " out of range for " + std::to_string(d) +
                           " classes");
  auto z = logits.data();
  std::vector<double> probs(n * d);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j)
      mx = std::max(mx, z[r * d + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      s += std::exp(z[r * d + j] - mx);
    const double lse = mx + std::log(s);
    total += lse - z[r * d + labels[r]];
    for (std::size_t j = 0; j < d; ++j)
      probs[r * d + j] = std::exp(z[r * d + j] - lse);
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return detail::make_result(
      "cross_entropy", {}, {total / static_cast<double>(n)}, {logits},
      [n, d, y = std::move(y), probs = std::move(probs)](detail::Node &self) {
        double *g = detail::input_grad(self, 0);
        if (!g)
          return;
        const double scale_n = self.grad[0] / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < d; ++j)
            g[r * d + j] +=
                scale_n * (probs[r * d + j] - (j == y[r] ? 1.0 : 0.0));
      });
}

} // namespace cfnsr

#endif // CFNSR_OPS_HPP_
