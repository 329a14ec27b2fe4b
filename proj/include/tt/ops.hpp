// Differentiable operations on tt::Tensor.
//
// Matrix ops take rank-2 operands; rank-0/1 tensors are read as one row where
// noted. Every op checks its output for NaN/Inf and throws NumericalError.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tt/rng.hpp"
#include "tt/tensor.hpp"

namespace tt {

namespace detail {

// Gradient buffer of parent i, or nullptr when it does not need one.
inline std::vector<double>* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

inline const std::vector<double>& parent_value(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got shape " + to_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

// out[m x n] += a[m x k] * b[k x n]; loop order keeps each output row a
// function of its own input row only.
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* out_row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
    }
  }
}

}  // namespace detail

using detail::log_add_exp;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& g = self.grad;
    const auto& av = detail::parent_value(self, 0);
    const auto& bv = detail::parent_value(self, 1);
    if (auto* ga = detail::parent_grad(self, 0)) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          (*ga)[i * k + p] += s;
        }
    }
    if (auto* gb = detail::parent_grad(self, 1)) {
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += av_ip * g[i * n + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j * m + i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* gp = detail::parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gp)[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = detail::parent_value(self, 0);
    const auto& bv = detail::parent_value(self, 1);
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += s * self.grad[i];
  });
}

// a[m x n] + b broadcast over rows; b has n elements (any rank).
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), n = a.cols();
  if (b.numel() != n) {
    throw DimensionError("add_row: row vector " + to_string(b.shape()) + " does not fit " +
                         to_string(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return make_result("add_row", a.shape(), std::move(out), {a, b}, [m, n](detail::Node& self) {
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += self.grad[i * n + j];
  });
}

// a[m x n] * g broadcast over rows; g has n elements.
inline Tensor mul_row(const Tensor& a, const Tensor& g) {
  const std::size_t m = a.rows(), n = a.cols();
  if (g.numel() != n) {
    throw DimensionError("mul_row: row vector " + to_string(g.shape()) + " does not fit " +
                         to_string(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto gv = g.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= gv[j];
  return make_result("mul_row", a.shape(), std::move(out), {a, g}, [m, n](detail::Node& self) {
    const auto& av = detail::parent_value(self, 0);
    const auto& gv = detail::parent_value(self, 1);
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[i * n + j] * gv[j];
    if (auto* gg = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gg)[j] += self.grad[i * n + j] * av[i * n + j];
  });
}

namespace detail {

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [deriv](Node& self) {
    if (auto* ga = parent_grad(self, 0)) {
      const auto& x = parent_value(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        (*ga)[i] += self.grad[i] * deriv(x[i], self.value[i]);
    }
  });
}

}  // namespace detail

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result("sum", {}, {s}, {a}, [](detail::Node& self) {
    if (auto* ga = detail::parent_grad(self, 0))
      for (double& g : *ga) g += self.grad[0];
  });
}

// Sum of several scalars in argument order.
inline Tensor sum_scalars(std::span<const Tensor> xs) {
  std::vector<double> acc{0.0};
  std::vector<Tensor> parents;
  parents.reserve(xs.size());
  for (const auto& x : xs) {
    acc[0] += x.item();
    parents.push_back(x);
  }
  return make_result("sum_scalars", {}, std::move(acc), std::move(parents), [](detail::Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p)
      if (auto* gp = detail::parent_grad(self, p)) (*gp)[0] += self.grad[0];
  });
}

// log(sum(exp(x))) along `axis`; axis 0 reduces rows, axis 1 (or -1) reduces
// columns. A rank-1 input reduces to a scalar.
inline Tensor logsumexp(const Tensor& x, int axis = -1) {
  if (x.rank() == 0 || x.rank() > 2) {
    throw DimensionError("logsumexp expects rank 1 or 2, got " + to_string(x.shape()));
  }
  const bool along_rows = x.rank() == 2 && axis == 0;
  if (x.rank() == 2 && axis != 0 && axis != 1 && axis != -1) {
    throw DimensionError("logsumexp: invalid axis " + std::to_string(axis));
  }
  if (x.rank() == 1 && axis != 0 && axis != -1) {
    throw DimensionError("logsumexp: invalid axis " + std::to_string(axis));
  }
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t groups = along_rows ? n : m;
  const std::size_t len = along_rows ? m : n;
  if (len == 0) throw DimensionError("logsumexp over an empty axis");
  auto index = [&](std::size_t g, std::size_t i) {
    return along_rows ? i * n + g : g * n + i;
  };
  const auto xv = x.values();
  std::vector<double> out(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[index(g, i)]);
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += std::exp(xv[index(g, i)] - mx);
    out[g] = mx + std::log(s);
  }
  Shape shape = x.rank() == 1 ? Shape{} : Shape{groups};
  return make_result("logsumexp", std::move(shape), std::move(out), {x},
                     [along_rows, n, groups, len](detail::Node& self) {
                       auto* gx = detail::parent_grad(self, 0);
                       if (!gx) return;
                       const auto& xv = detail::parent_value(self, 0);
                       for (std::size_t g = 0; g < groups; ++g)
                         for (std::size_t i = 0; i < len; ++i) {
                           const std::size_t k = along_rows ? i * n + g : g * n + i;
                           (*gx)[k] += self.grad[g] * std::exp(xv[k] - self.value[g]);
                         }
                     });
}

// Row-wise log-softmax over the last axis.
inline Tensor log_softmax(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("log_softmax over an empty axis");
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    auto* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        (*gx)[i * n + j] += self.grad[i * n + j] - std::exp(self.value[i * n + j]) * gs;
    }
  });
}

// Row-wise softmax restricted to entries where `allowed` is nonzero; other
// entries come out as exactly 0 and receive no gradient. `allowed` may be
// empty, meaning every entry is allowed. Each row needs at least one allowed
// entry.
inline Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> allowed = {}) {
  const std::size_t m = x.rows(), n = x.cols();
  if (!allowed.empty() && allowed.size() != m * n) {
    throw DimensionError("masked_softmax: mask size " + std::to_string(allowed.size()) +
                         " does not match " + to_string(x.shape()));
  }
  auto ok = [&](std::size_t k) { return allowed.empty() || allowed[k] != 0; };
  const auto xv = x.values();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (ok(i * n + j)) mx = std::max(mx, xv[i * n + j]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw NumericalError("masked_softmax: row " + std::to_string(i) + " has no allowed entry");
    }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (ok(i * n + j)) {
        out[i * n + j] = std::exp(xv[i * n + j] - mx);
        s += out[i * n + j];
      }
    for (std::size_t j = 0; j < n; ++j)
      if (ok(i * n + j)) out[i * n + j] /= s;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    auto* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        (*gx)[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

inline Tensor softmax(const Tensor& x) { return masked_softmax(x); }

// Row-wise normalization over the last axis followed by gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + to_string(gain.shape()) + "/" +
                         to_string(bias.shape()) + " do not fit " + to_string(x.shape()));
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(x.numel());
  // Normalized values and inverse std per row, kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xv[i * n + j] - mean) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [m, n, xhat, inv_std](detail::Node& self) {
        const auto& gv = detail::parent_value(self, 1);
        if (auto* gx = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = self.grad[i * n + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[i * n + j];
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = self.grad[i * n + j] * gv[j];
              (*gx)[i * n + j] += (*inv_std)[i] * (dh - mean_dh - (*xhat)[i * n + j] * mean_dh_h);
            }
          }
        }
        if (auto* gg = detail::parent_grad(self, 1))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              (*gg)[j] += self.grad[i * n + j] * (*xhat)[i * n + j];
        if (auto* gb = detail::parent_grad(self, 2))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += self.grad[i * n + j];
      });
}

// Inverted dropout: zeroes each element with probability `ratio` and scales
// survivors by 1/(1-ratio) when training; identity otherwise.
inline Tensor dropout(const Tensor& x, double ratio, Rng& rng, bool training) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("dropout ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  if (!training || ratio == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - ratio);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < ratio ? 0.0 : keep_scale;
    out[i] = xv[i] * (*mask)[i];
  }
  return make_result("dropout", x.shape(), std::move(out), {x}, [mask](detail::Node& self) {
    if (auto* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * (*mask)[i];
  });
}

// Columns [begin, end) of a matrix; rank-1 inputs slice to rank-1.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin > end || end > n) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + to_string(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * n + begin + j];
  Shape shape = a.rank() == 2 ? Shape{m, w} : Shape{w};
  return make_result("slice_cols", std::move(shape), std::move(out), {a},
                     [m, n, w, begin](detail::Node& self) {
                       if (auto* ga = detail::parent_grad(self, 0))
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < w; ++j)
                             (*ga)[i * n + begin + j] += self.grad[i * w + j];
                     });
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts disagree");
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(m * total);
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const auto pv = parts[q].values();
    const std::size_t w = parts[q].cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + offsets[q] + j] = pv[i * w + j];
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result("concat_cols", {m, total}, std::move(out), std::move(parents),
                     [m, total, offsets](detail::Node& self) {
                       for (std::size_t q = 0; q < self.parents.size(); ++q) {
                         auto* gp = detail::parent_grad(self, q);
                         if (!gp) continue;
                         const std::size_t w = self.parents[q]->value.size() / m;
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < w; ++j)
                             (*gp)[i * w + j] += self.grad[i * total + offsets[q] + j];
                       }
                     });
}

// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (begin > end || end > m) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + to_string(a.shape()));
  }
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.values().begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_result("slice_rows", {end - begin, n}, std::move(out), {a},
                     [begin, n](detail::Node& self) {
                       if (auto* ga = detail::parent_grad(self, 0))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           (*ga)[begin * n + i] += self.grad[i];
                     });
}

// Row i of the result is row idx[i] of `a`.
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx) {
  detail::require_matrix(a, "gather_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(idx.size() * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) throw DimensionError("gather_rows: index out of range");
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(idx[i] * n), n, out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return make_result("gather_rows", {idx.size(), n}, std::move(out), {a},
                     [rows, n](detail::Node& self) {
                       if (auto* ga = detail::parent_grad(self, 0))
                         for (std::size_t i = 0; i < rows.size(); ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             (*ga)[rows[i] * n + j] += self.grad[i * n + j];
                     });
}

// out[i][j] = a[i][idx[i * width + j]]: per-row column lookup.
inline Tensor gather_cols(const Tensor& a, std::span<const std::size_t> idx, std::size_t width) {
  detail::require_matrix(a, "gather_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (idx.size() != m * width) throw DimensionError("gather_cols: index table size mismatch");
  std::vector<double> out(m * width);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t c = idx[i * width + j];
      if (c >= n) throw DimensionError("gather_cols: index out of range");
      out[i * width + j] = av[i * n + c];
    }
  std::vector<std::size_t> table(idx.begin(), idx.end());
  return make_result("gather_cols", {m, width}, std::move(out), {a},
                     [table, m, n, width](detail::Node& self) {
                       if (auto* ga = detail::parent_grad(self, 0))
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < width; ++j)
                             (*ga)[i * n + table[i * width + j]] += self.grad[i * width + j];
                     });
}

// All pairwise row sums: out row (i * b.rows() + j) = a[i] + b[j].
inline Tensor outer_add(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "outer_add");
  detail::require_matrix(b, "outer_add");
  const std::size_t ma = a.shape()[0], mb = b.shape()[0], n = a.shape()[1];
  if (b.shape()[1] != n) {
    throw DimensionError("outer_add: widths disagree, " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  std::vector<double> out(ma * mb * n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < ma; ++i)
    for (std::size_t j = 0; j < mb; ++j)
      for (std::size_t c = 0; c < n; ++c) out[(i * mb + j) * n + c] = av[i * n + c] + bv[j * n + c];
  return make_result("outer_add", {ma * mb, n}, std::move(out), {a, b},
                     [ma, mb, n](detail::Node& self) {
                       auto* ga = detail::parent_grad(self, 0);
                       auto* gb = detail::parent_grad(self, 1);
                       for (std::size_t i = 0; i < ma; ++i)
                         for (std::size_t j = 0; j < mb; ++j)
                           for (std::size_t c = 0; c < n; ++c) {
                             const double g = self.grad[(i * mb + j) * n + c];
                             if (ga) (*ga)[i * n + c] += g;
                             if (gb) (*gb)[j * n + c] += g;
                           }
                     });
}

}  // namespace tt
