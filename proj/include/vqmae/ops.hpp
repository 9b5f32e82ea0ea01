#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "vqmae/gemm.hpp"
#include "vqmae/tensor.hpp"

// Differentiable primitives. Each op validates shapes, rejects non-finite
// inputs, computes the forward value, and (when a tape is active and an input
// requires grad) records a closure that accumulates input gradients from the
// output gradient.

namespace vqmae {

namespace detail {

inline void shape_eq(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

inline void want_2d(const char* op, const Tensor& a) {
  if (a.ndim() != 2)
    throw TensorError(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape()));
}

inline Tensor make_out(Shape shape, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  if (requires_grad) t.grad();  // pre-size so downstream closures can accumulate
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::shape_eq("add", a, b);
  check_finite("add", a);
  check_finite("add", b);
  bool rec = tracing({&a, &b});
  Tensor out = detail::make_out(a.shape(), rec);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::current()->record([an, bn, on] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::shape_eq("sub", a, b);
  check_finite("sub", a);
  check_finite("sub", b);
  bool rec = tracing({&a, &b});
  Tensor out = detail::make_out(a.shape(), rec);
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::current()->record([an, bn, on] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::shape_eq("mul", a, b);
  check_finite("mul", a);
  check_finite("mul", b);
  bool rec = tracing({&a, &b});
  Tensor out = detail::make_out(a.shape(), rec);
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::current()->record([an, bn, on] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

// m*x + c
inline Tensor affine_const(const Tensor& a, double m, double c) {
  check_finite("affine_const", a);
  if (!std::isfinite(m) || !std::isfinite(c))
    throw TensorError("affine_const: non-finite coefficient");
  bool rec = tracing({&a});
  Tensor out = detail::make_out(a.shape(), rec);
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = m * a.data()[i] + c;
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on, m] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += m * on->grad[i];
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double m) { return affine_const(a, m, 0.0); }
inline Tensor add_const(const Tensor& a, double c) { return affine_const(a, 1.0, c); }

// a: [n, w], bias: [w]
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  detail::want_2d("add_bias", a);
  if (bias.ndim() != 1 || bias.dim(0) != a.dim(1))
    throw TensorError("add_bias: bias shape " + shape_str(bias.shape()) +
                      " does not match row width " + std::to_string(a.dim(1)));
  check_finite("add_bias", a);
  check_finite("add_bias", bias);
  bool rec = tracing({&a, &bias});
  Tensor out = detail::make_out(a.shape(), rec);
  const std::int64_t n = a.dim(0), w = a.dim(1);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      out.data()[i * w + j] = a.data()[i * w + j] + bias.data()[j];
  if (rec) {
    auto an = a.node(), bn = bias.node(), on = out.node();
    Tape::current()->record([an, bn, on, n, w] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < w; ++j) bn->grad[j] += on->grad[i * w + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra / layout

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::want_2d("matmul", a);
  detail::want_2d("matmul", b);
  if (a.dim(1) != b.dim(0))
    throw TensorError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                      " x " + shape_str(b.shape()));
  check_finite("matmul", a);
  check_finite("matmul", b);
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  bool rec = tracing({&a, &b});
  Tensor out = detail::make_out({m, n}, rec);
  gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::current()->record([an, bn, on, m, k, n] {
      if (an->requires_grad) {
        an->ensure_grad();
        gemm_nt(on->grad.data(), bn->value.data(), an->grad.data(), m, n, k, true);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        gemm_tn(an->value.data(), on->grad.data(), bn->grad.data(), k, m, n, true);
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::want_2d("transpose", a);
  check_finite("transpose", a);
  const std::int64_t m = a.dim(0), n = a.dim(1);
  bool rec = tracing({&a});
  Tensor out = detail::make_out({n, m}, rec);
  transpose_into(a.data(), out.data(), m, n);
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on, m, n] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j * m + i];
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw TensorError("reshape: element count mismatch " + shape_str(a.shape()) +
                      " -> " + shape_str(shape));
  check_finite("reshape", a);
  bool rec = tracing({&a});
  Tensor out = detail::make_out(std::move(shape), rec);
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

inline Tensor vcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("vcat: empty input list");
  std::int64_t w = -1, rows = 0;
  bool rec = false;
  for (const auto& p : parts) {
    detail::want_2d("vcat", p);
    check_finite("vcat", p);
    if (w < 0) w = p.dim(1);
    if (p.dim(1) != w) throw TensorError("vcat: column widths differ");
    rows += p.dim(0);
    if (Tape::current() && p.requires_grad()) rec = true;
  }
  Tensor out = detail::make_out({rows, w}, rec);
  std::int64_t r = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.data() + r * w);
    r += p.dim(0);
  }
  if (rec) {
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    Tape::current()->record([nodes, on, w] {
      std::int64_t r = 0;
      for (auto& nd : nodes) {
        std::int64_t cnt = nd->shape[0] * w;
        if (nd->requires_grad) {
          nd->ensure_grad();
          for (std::int64_t i = 0; i < cnt; ++i) nd->grad[i] += on->grad[r * w + i];
        }
        r += nd->shape[0];
      }
    });
  }
  return out;
}

inline Tensor hcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("hcat: empty input list");
  std::int64_t n = -1, w = 0;
  bool rec = false;
  for (const auto& p : parts) {
    detail::want_2d("hcat", p);
    check_finite("hcat", p);
    if (n < 0) n = p.dim(0);
    if (p.dim(0) != n) throw TensorError("hcat: row counts differ");
    w += p.dim(1);
    if (Tape::current() && p.requires_grad()) rec = true;
  }
  Tensor out = detail::make_out({n, w}, rec);
  std::int64_t c = 0;
  for (const auto& p : parts) {
    const std::int64_t pw = p.dim(1);
    for (std::int64_t i = 0; i < n; ++i)
      std::copy(p.data() + i * pw, p.data() + (i + 1) * pw, out.data() + i * w + c);
    c += pw;
  }
  if (rec) {
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    Tape::current()->record([nodes, on, n, w] {
      std::int64_t c = 0;
      for (auto& nd : nodes) {
        const std::int64_t pw = nd->shape[1];
        if (nd->requires_grad) {
          nd->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < pw; ++j)
              nd->grad[i * pw + j] += on->grad[i * w + c + j];
        }
        c += pw;
      }
    });
  }
  return out;
}

inline Tensor take_rows(const Tensor& a, std::vector<std::int64_t> idx) {
  detail::want_2d("take_rows", a);
  check_finite("take_rows", a);
  const std::int64_t n = a.dim(0), w = a.dim(1);
  for (auto i : idx)
    if (i < 0 || i >= n)
      throw TensorError("take_rows: index " + std::to_string(i) + " out of range [0," +
                        std::to_string(n) + ")");
  const std::int64_t m = static_cast<std::int64_t>(idx.size());
  bool rec = tracing({&a});
  Tensor out = detail::make_out({m, w}, rec);
  for (std::int64_t i = 0; i < m; ++i)
    std::copy(a.data() + idx[i] * w, a.data() + (idx[i] + 1) * w, out.data() + i * w);
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on, idx = std::move(idx), m, w] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < w; ++j) an->grad[idx[i] * w + j] += on->grad[i * w + j];
    });
  }
  return out;
}

// column slice [c0, c1)
inline Tensor cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
  detail::want_2d("cols", a);
  check_finite("cols", a);
  const std::int64_t n = a.dim(0), w = a.dim(1);
  if (c0 < 0 || c1 > w || c0 >= c1)
    throw TensorError("cols: bad slice [" + std::to_string(c0) + "," + std::to_string(c1) +
                      ") for width " + std::to_string(w));
  const std::int64_t sw = c1 - c0;
  bool rec = tracing({&a});
  Tensor out = detail::make_out({n, sw}, rec);
  for (std::int64_t i = 0; i < n; ++i)
    std::copy(a.data() + i * w + c0, a.data() + i * w + c1, out.data() + i * sw);
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on, n, w, c0, sw] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < sw; ++j) an->grad[i * w + c0 + j] += on->grad[i * sw + j];
    });
  }
  return out;
}

// Scatter `visible` rows to positions vis_idx of an [n_rows, w] output; every
// other row is a copy of fill_row. Used to rebuild the full token sequence for
// the decoder from encoder outputs plus the trainable mask vector.
inline Tensor assemble_rows(std::int64_t n_rows, std::vector<std::int64_t> vis_idx,
                            const Tensor& visible, const Tensor& fill_row) {
  detail::want_2d("assemble_rows", visible);
  const std::int64_t w = visible.dim(1);
  if (!(fill_row.ndim() == 2 && fill_row.dim(0) == 1 && fill_row.dim(1) == w))
    throw TensorError("assemble_rows: fill_row must be [1," + std::to_string(w) + "], got " +
                      shape_str(fill_row.shape()));
  if (static_cast<std::int64_t>(vis_idx.size()) != visible.dim(0))
    throw TensorError("assemble_rows: index count " + std::to_string(vis_idx.size()) +
                      " != visible rows " + std::to_string(visible.dim(0)));
  std::vector<char> seen(static_cast<size_t>(n_rows), 0);
  for (auto i : vis_idx) {
    if (i < 0 || i >= n_rows)
      throw TensorError("assemble_rows: index " + std::to_string(i) + " out of range");
    if (seen[static_cast<size_t>(i)]) throw TensorError("assemble_rows: duplicate index");
    seen[static_cast<size_t>(i)] = 1;
  }
  check_finite("assemble_rows", visible);
  check_finite("assemble_rows", fill_row);
  bool rec = tracing({&visible, &fill_row});
  Tensor out = detail::make_out({n_rows, w}, rec);
  for (std::int64_t r = 0; r < n_rows; ++r)
    std::copy(fill_row.data(), fill_row.data() + w, out.data() + r * w);
  for (size_t i = 0; i < vis_idx.size(); ++i)
    std::copy(visible.data() + i * w, visible.data() + (i + 1) * w,
              out.data() + vis_idx[i] * w);
  if (rec) {
    auto vn = visible.node(), fn = fill_row.node(), on = out.node();
    Tape::current()->record([vn, fn, on, vis_idx = std::move(vis_idx), n_rows, w] {
      std::vector<char> is_vis(static_cast<size_t>(n_rows), 0);
      for (auto i : vis_idx) is_vis[static_cast<size_t>(i)] = 1;
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (size_t i = 0; i < vis_idx.size(); ++i)
          for (std::int64_t j = 0; j < w; ++j)
            vn->grad[i * w + j] += on->grad[vis_idx[i] * w + j];
      }
      if (fn->requires_grad) {
        fn->ensure_grad();
        for (std::int64_t r = 0; r < n_rows; ++r)
          if (!is_vis[static_cast<size_t>(r)])
            for (std::int64_t j = 0; j < w; ++j) fn->grad[j] += on->grad[r * w + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities

namespace detail {

template <typename Fwd, typename Dfn>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Dfn dfn) {
  check_finite(name, a);
  bool rec = tracing({&a});
  Tensor out = make_out(a.shape(), rec);
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = fwd(a.data()[i]);
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on, dfn] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += dfn(an->value[i], on->value[i]) * on->grad[i];
    });
  }
  return out;
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary_op(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      "sigmoid", a, [](double x) { return detail::sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return detail::sigmoid_scalar(x); });
}

// log(1+x), defined for x > -1
inline Tensor log1p_of(const Tensor& a) {
  check_finite("log1p", a);
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a.data()[i] <= -1.0) throw TensorError("log1p: input <= -1");
  return detail::unary_op(
      "log1p", a, [](double x) { return std::log1p(x); },
      [](double x, double) { return 1.0 / (1.0 + x); });
}

// x^p for x >= 0, exponent fixed. Derivative at x == 0 is defined as 0 for
// p != 1 (the p < 1 kink sits outside every gradient-checked region).
inline Tensor pow_const(const Tensor& a, double p) {
  check_finite("pow_const", a);
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a.data()[i] < 0.0) throw TensorError("pow_const: negative base");
  return detail::unary_op(
      "pow_const", a, [p](double x) { return p == 0.0 ? 1.0 : std::pow(x, p); },
      [p](double x, double) {
        if (p == 0.0) return 0.0;
        if (p == 1.0) return 1.0;
        if (x == 0.0) return 0.0;
        return p * std::pow(x, p - 1.0);
      });
}

// ---------------------------------------------------------------------------
// rows-structured ops

// softmax over the last axis of a 2-D tensor, max-subtracted per row
inline Tensor softmax_rows(const Tensor& a) {
  detail::want_2d("softmax", a);
  check_finite("softmax", a);
  const std::int64_t n = a.dim(0), w = a.dim(1);
  bool rec = tracing({&a});
  Tensor out = detail::make_out({n, w}, rec);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* x = a.data() + i * w;
    double* y = out.data() + i * w;
    double mx = x[0];
    for (std::int64_t j = 1; j < w; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < w; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    const double inv = 1.0 / s;
    for (std::int64_t j = 0; j < w; ++j) y[j] *= inv;
  }
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on, n, w] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double* y = on->value.data() + i * w;
        const double* g = on->grad.data() + i * w;
        double dot = 0.0;
        for (std::int64_t j = 0; j < w; ++j) dot += y[j] * g[j];
        double* da = an->grad.data() + i * w;
        for (std::int64_t j = 0; j < w; ++j) da[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// per-row layer normalization with affine parameters gamma, beta (shape [w])
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-10) {
  detail::want_2d("layer_norm", x);
  const std::int64_t n = x.dim(0), w = x.dim(1);
  if (gamma.ndim() != 1 || gamma.dim(0) != w || beta.ndim() != 1 || beta.dim(0) != w)
    throw TensorError("layer_norm: gamma/beta must be [" + std::to_string(w) + "]");
  check_finite("layer_norm", x);
  check_finite("layer_norm", gamma);
  check_finite("layer_norm", beta);
  bool rec = tracing({&x, &gamma, &beta});
  Tensor out = detail::make_out({n, w}, rec);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(n * w));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * w;
    double mu = 0.0;
    for (std::int64_t j = 0; j < w; ++j) mu += xi[j];
    mu /= static_cast<double>(w);
    double var = 0.0;
    for (std::int64_t j = 0; j < w; ++j) {
      double d = xi[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(w);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(i)] = inv;
    double* h = xhat->data() + i * w;
    double* y = out.data() + i * w;
    for (std::int64_t j = 0; j < w; ++j) {
      h[j] = (xi[j] - mu) * inv;
      y[j] = gamma.data()[j] * h[j] + beta.data()[j];
    }
  }
  if (rec) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    Tape::current()->record([xn, gn, bn, on, xhat, inv_std, n, w] {
      for (std::int64_t i = 0; i < n; ++i) {
        const double* g = on->grad.data() + i * w;
        const double* h = xhat->data() + i * w;
        if (xn->requires_grad) {
          xn->ensure_grad();
          double m1 = 0.0, m2 = 0.0;
          for (std::int64_t j = 0; j < w; ++j) {
            const double gg = g[j] * gn->value[j];
            m1 += gg;
            m2 += gg * h[j];
          }
          m1 /= static_cast<double>(w);
          m2 /= static_cast<double>(w);
          const double inv = (*inv_std)[static_cast<size_t>(i)];
          double* dx = xn->grad.data() + i * w;
          for (std::int64_t j = 0; j < w; ++j)
            dx[j] += inv * (g[j] * gn->value[j] - m1 - h[j] * m2);
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::int64_t j = 0; j < w; ++j) gn->grad[j] += g[j] * h[j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::int64_t j = 0; j < w; ++j) bn->grad[j] += g[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum_all(const Tensor& a) {
  check_finite("sum", a);
  bool rec = tracing({&a});
  Tensor out = detail::make_out({1}, rec);
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a.data()[i];
  out.data()[0] = s;
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const double g = on->grad[0];
      for (auto& v : an->grad) v += g;
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  check_finite("mean", a);
  bool rec = tracing({&a});
  Tensor out = detail::make_out({1}, rec);
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += a.data()[i];
  const double inv = 1.0 / static_cast<double>(a.size());
  out.data()[0] = s * inv;
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape::current()->record([an, on, inv] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const double g = on->grad[0] * inv;
      for (auto& v : an->grad) v += g;
    });
  }
  return out;
}

// per-row dot product of two [n, w] tensors -> [n]
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail::shape_eq("row_dot", a, b);
  detail::want_2d("row_dot", a);
  check_finite("row_dot", a);
  check_finite("row_dot", b);
  const std::int64_t n = a.dim(0), w = a.dim(1);
  bool rec = tracing({&a, &b});
  Tensor out = detail::make_out({n}, rec);
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < w; ++j) s += a.data()[i * w + j] * b.data()[i * w + j];
    out.data()[i] = s;
  }
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::current()->record([an, bn, on, n, w] {
      for (std::int64_t i = 0; i < n; ++i) {
        const double g = on->grad[i];
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::int64_t j = 0; j < w; ++j) an->grad[i * w + j] += g * bn->value[i * w + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::int64_t j = 0; j < w; ++j) bn->grad[i * w + j] += g * an->value[i * w + j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// lookup / classification

// gather rows of table [k, e] at idx -> [m, e]; backward scatter-adds into the
// dense table gradient
inline Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& idx) {
  detail::want_2d("embedding", table);
  check_finite("embedding", table);
  const std::int64_t k = table.dim(0), e = table.dim(1);
  for (auto i : idx)
    if (i < 0 || i >= k)
      throw TensorError("embedding: index " + std::to_string(i) + " out of range [0," +
                        std::to_string(k) + ")");
  const std::int64_t m = static_cast<std::int64_t>(idx.size());
  bool rec = tracing({&table});
  Tensor out = detail::make_out({m, e}, rec);
  for (std::int64_t i = 0; i < m; ++i)
    std::copy(table.data() + idx[i] * e, table.data() + (idx[i] + 1) * e, out.data() + i * e);
  if (rec) {
    auto tn = table.node(), on = out.node();
    Tape::current()->record([tn, on, idx, m, e] {
      if (!tn->requires_grad) return;
      tn->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < e; ++j) tn->grad[idx[i] * e + j] += on->grad[i * e + j];
    });
  }
  return out;
}

// mean cross-entropy over rows of logits [n, k] against integer targets [n]
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::int64_t>& targets) {
  detail::want_2d("cross_entropy", logits);
  check_finite("cross_entropy", logits);
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n)
    throw TensorError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                      std::to_string(n) + " rows");
  for (auto t : targets)
    if (t < 0 || t >= k) throw TensorError("cross_entropy: target out of range");
  if (n == 0) throw TensorError("cross_entropy: empty batch");
  bool rec = tracing({&logits});
  Tensor out = detail::make_out({1}, rec);
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * k));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* x = logits.data() + i * k;
    double mx = x[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    double* p = probs->data() + i * k;
    for (std::int64_t j = 0; j < k; ++j) {
      p[j] = std::exp(x[j] - mx);
      s += p[j];
    }
    const double inv = 1.0 / s;
    for (std::int64_t j = 0; j < k; ++j) p[j] *= inv;
    total += std::log(s) + mx - x[targets[i]];
  }
  out.data()[0] = total / static_cast<double>(n);
  if (rec) {
    auto ln = logits.node(), on = out.node();
    Tape::current()->record([ln, on, probs, targets, n, k] {
      if (!ln->requires_grad) return;
      ln->ensure_grad();
      const double g = on->grad[0] / static_cast<double>(n);
      for (std::int64_t i = 0; i < n; ++i) {
        const double* p = probs->data() + i * k;
        double* d = ln->grad.data() + i * k;
        for (std::int64_t j = 0; j < k; ++j) d[j] += g * p[j];
        d[targets[i]] -= g;
      }
    });
  }
  return out;
}

// Forward takes the values of `quantized`; backward routes the gradient to
// `src` unchanged. The quantized tensor's own graph (if any) is not involved.
inline Tensor straight_through(const Tensor& src, const Tensor& quantized) {
  detail::shape_eq("straight_through", src, quantized);
  check_finite("straight_through", quantized);
  bool rec = tracing({&src});
  Tensor out = detail::make_out(src.shape(), rec);
  std::copy(quantized.values().begin(), quantized.values().end(), out.values().begin());
  if (rec) {
    auto sn = src.node(), on = out.node();
    Tape::current()->record([sn, on] {
      if (!sn->requires_grad) return;
      sn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) sn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1-D convolutions (channels x length layout)

namespace detail {

inline void im2col_1d(const double* x, double* col, std::int64_t cin, std::int64_t len,
                      std::int64_t ksize, std::int64_t stride, std::int64_t pad,
                      std::int64_t lout) {
  for (std::int64_t ci = 0; ci < cin; ++ci)
    for (std::int64_t kk = 0; kk < ksize; ++kk) {
      double* crow = col + (ci * ksize + kk) * lout;
      for (std::int64_t o = 0; o < lout; ++o) {
        const std::int64_t t = o * stride + kk - pad;
        crow[o] = (t >= 0 && t < len) ? x[ci * len + t] : 0.0;
      }
    }
}

}  // namespace detail

// x: [cin, len], w: [cout, cin, k], bias: [cout] (or undefined), zero padding
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     std::int64_t stride, std::int64_t pad) {
  if (x.ndim() != 2 || w.ndim() != 3)
    throw TensorError("conv1d: expected x [cin,len] and w [cout,cin,k], got " +
                      shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const std::int64_t cin = x.dim(0), len = x.dim(1);
  const std::int64_t cout = w.dim(0), ksize = w.dim(2);
  if (w.dim(1) != cin)
    throw TensorError("conv1d: weight expects " + std::to_string(w.dim(1)) +
                      " input channels, data has " + std::to_string(cin));
  if (stride < 1 || pad < 0) throw TensorError("conv1d: bad stride/pad");
  const std::int64_t lpad = len + 2 * pad;
  if (lpad < ksize)
    throw TensorError("conv1d: input length " + std::to_string(len) + " shorter than kernel");
  const std::int64_t lout = (lpad - ksize) / stride + 1;
  check_finite("conv1d", x);
  check_finite("conv1d", w);
  const bool has_bias = bias.defined();
  if (has_bias) {
    if (bias.ndim() != 1 || bias.dim(0) != cout) throw TensorError("conv1d: bias must be [cout]");
    check_finite("conv1d", bias);
  }
  bool rec = has_bias ? tracing({&x, &w, &bias}) : tracing({&x, &w});

  auto col = std::make_shared<std::vector<double>>(static_cast<size_t>(cin * ksize * lout));
  detail::im2col_1d(x.data(), col->data(), cin, len, ksize, stride, pad, lout);
  Tensor out = detail::make_out({cout, lout}, rec);
  gemm_nn(w.data(), col->data(), out.data(), cout, cin * ksize, lout, false);
  if (has_bias)
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t o = 0; o < lout; ++o) out.data()[co * lout + o] += bias.data()[co];

  if (rec) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    std::shared_ptr<detail::Node> bn = has_bias ? bias.node() : nullptr;
    Tape::current()->record([xn, wn, bn, on, col, cin, len, cout, ksize, stride, pad, lout] {
      const double* g = on->grad.data();
      if (wn->requires_grad) {
        wn->ensure_grad();
        gemm_nt(g, col->data(), wn->grad.data(), cout, lout, cin * ksize, true);
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        std::vector<double> dcol(static_cast<size_t>(cin * ksize * lout));
        gemm_tn(wn->value.data(), g, dcol.data(), cin * ksize, cout, lout, true);
        for (std::int64_t ci = 0; ci < cin; ++ci)
          for (std::int64_t kk = 0; kk < ksize; ++kk) {
            const double* crow = dcol.data() + (ci * ksize + kk) * lout;
            for (std::int64_t o = 0; o < lout; ++o) {
              const std::int64_t t = o * stride + kk - pad;
              if (t >= 0 && t < len) xn->grad[ci * len + t] += crow[o];
            }
          }
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t co = 0; co < cout; ++co) {
          double s = 0.0;
          for (std::int64_t o = 0; o < lout; ++o) s += g[co * lout + o];
          bn->grad[co] += s;
        }
      }
    });
  }
  return out;
}

// x: [cin, len], w: [cin, cout, k]; output length (len-1)*stride + k - 2*pad
inline Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                               std::int64_t stride, std::int64_t pad) {
  if (x.ndim() != 2 || w.ndim() != 3)
    throw TensorError("conv_transpose1d: expected x [cin,len] and w [cin,cout,k], got " +
                      shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const std::int64_t cin = x.dim(0), len = x.dim(1);
  const std::int64_t cout = w.dim(1), ksize = w.dim(2);
  if (w.dim(0) != cin)
    throw TensorError("conv_transpose1d: weight expects " + std::to_string(w.dim(0)) +
                      " input channels, data has " + std::to_string(cin));
  if (stride < 1 || pad < 0) throw TensorError("conv_transpose1d: bad stride/pad");
  const std::int64_t lout = (len - 1) * stride + ksize - 2 * pad;
  if (lout < 1) throw TensorError("conv_transpose1d: empty output");
  check_finite("conv_transpose1d", x);
  check_finite("conv_transpose1d", w);
  const bool has_bias = bias.defined();
  if (has_bias) {
    if (bias.ndim() != 1 || bias.dim(0) != cout)
      throw TensorError("conv_transpose1d: bias must be [cout]");
    check_finite("conv_transpose1d", bias);
  }
  bool rec = has_bias ? tracing({&x, &w, &bias}) : tracing({&x, &w});

  // tmp[co*k + kk, t] = sum_ci w[ci, co, kk] * x[ci, t]
  std::vector<double> tmp(static_cast<size_t>(cout * ksize * len));
  gemm_tn(w.data(), x.data(), tmp.data(), cout * ksize, cin, len, false);
  Tensor out = detail::make_out({cout, lout}, rec);
  for (std::int64_t co = 0; co < cout; ++co) {
    double* yrow = out.data() + co * lout;
    if (has_bias)
      for (std::int64_t o = 0; o < lout; ++o) yrow[o] += bias.data()[co];
    for (std::int64_t kk = 0; kk < ksize; ++kk) {
      const double* trow = tmp.data() + (co * ksize + kk) * len;
      for (std::int64_t t = 0; t < len; ++t) {
        const std::int64_t o = t * stride + kk - pad;
        if (o >= 0 && o < lout) yrow[o] += trow[t];
      }
    }
  }

  if (rec) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    std::shared_ptr<detail::Node> bn = has_bias ? bias.node() : nullptr;
    Tape::current()->record([xn, wn, bn, on, cin, len, cout, ksize, stride, pad, lout] {
      const double* g = on->grad.data();
      std::vector<double> dtmp(static_cast<size_t>(cout * ksize * len), 0.0);
      for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t kk = 0; kk < ksize; ++kk) {
          double* trow = dtmp.data() + (co * ksize + kk) * len;
          for (std::int64_t t = 0; t < len; ++t) {
            const std::int64_t o = t * stride + kk - pad;
            if (o >= 0 && o < lout) trow[t] = g[co * lout + o];
          }
        }
      if (xn->requires_grad) {
        xn->ensure_grad();
        // dx[ci, t] = sum_{co,kk} w[ci, co, kk] * dtmp[co*k+kk, t]
        gemm_nn(wn->value.data(), dtmp.data(), xn->grad.data(), cin, cout * ksize, len, true);
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        // dw[ci, co, kk] = sum_t x[ci, t] * dtmp[co*k+kk, t]
        gemm_nt(xn->value.data(), dtmp.data(), wn->grad.data(), cin, len, cout * ksize, true);
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t co = 0; co < cout; ++co) {
          double s = 0.0;
          for (std::int64_t o = 0; o < lout; ++o) s += g[co * lout + o];
          bn->grad[co] += s;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// composites

inline Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

}  // namespace vqmae
