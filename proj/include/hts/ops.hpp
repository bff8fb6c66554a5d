#pragma once

// Differentiable tensor operations. Matrices are row-major; image stacks are
// channels-last (N, H, W, C).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hts/error.hpp"
#include "hts/tensor.hpp"

namespace hts::ops {

namespace detail {

using hts::detail::input_grad;
using hts::detail::input_value;
using hts::detail::make_result;
using hts::detail::Node;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

// c[m,n] += a[m,k] * b[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

inline std::vector<double> transpose(std::span<const double> x, std::size_t rows,
                                     std::size_t cols) {
  std::vector<double> t(x.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = x[i * cols + j];
  return t;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& xv = input_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      (*gx)[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

}  // namespace detail

using detail::make_result;
using detail::Node;

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(),
                  "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (auto* gx = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* ga = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = detail::input_value(self, 0);
    const auto& bv = detail::input_value(self, 1);
    if (auto* ga = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    if (auto* gb = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

// NaN passes through so divergence stays visible in the loss.
inline Tensor relu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v < 0.0 ? 0.0 : v; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
  return detail::unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                       [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {x}, [](Node& self) {
    if (auto* gx = detail::input_grad(self, 0))
      for (double& g : *gx) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  detail::require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// a[m,k] @ b[k,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                                     shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& av = detail::input_value(self, 0);
    const auto& bv = detail::input_value(self, 1);
    if (auto* ga = detail::input_grad(self, 0)) {
      // dA = dC @ B^T
      const auto bt = detail::transpose(bv, k, n);
      detail::gemm_nn(self.grad.data(), bt.data(), ga->data(), m, n, k);
    }
    if (auto* gb = detail::input_grad(self, 1)) {
      // dB = A^T @ dC
      detail::gemm_tn(av.data(), self.grad.data(), gb->data(), m, k, n);
    }
  });
}

// x[m,in] @ w[out,in]^T (+ bias[out]). The weight layout matches the usual
// (out, in) convention of linear maps.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor()) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(w, "linear");
  const std::size_t m = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  detail::require(w.dim(1) == in, "linear: input width " + std::to_string(in) +
                                      " does not match weight " + shape_str(w.shape()));
  const bool has_bias = bias.defined();
  if (has_bias)
    detail::require(bias.rank() == 1 && bias.dim(0) == out_dim,
                    "linear: bias shape " + shape_str(bias.shape()));
  std::vector<double> out(m * out_dim, 0.0);
  if (has_bias)
    for (std::size_t i = 0; i < m; ++i)
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * out_dim);
  const auto wt = detail::transpose(w.data(), out_dim, in);
  detail::gemm_nn(x.data().data(), wt.data(), out.data(), m, in, out_dim);
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result({m, out_dim}, std::move(out), std::move(inputs),
                     [m, in, out_dim, has_bias](Node& self) {
                       const auto& xv = detail::input_value(self, 0);
                       const auto& wv = detail::input_value(self, 1);
                       if (auto* gx = detail::input_grad(self, 0))
                         detail::gemm_nn(self.grad.data(), wv.data(), gx->data(), m, out_dim, in);
                       if (auto* gw = detail::input_grad(self, 1))
                         detail::gemm_tn(self.grad.data(), xv.data(), gw->data(), m, out_dim, in);
                       if (has_bias)
                         if (auto* gb = detail::input_grad(self, 2))
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t o = 0; o < out_dim; ++o)
                               (*gb)[o] += self.grad[i * out_dim + o];
                     });
}

// a[m,d] @ b[n,d]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) { return linear(a, b); }

inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  detail::require(x.rank() >= 1, "gather_rows: scalar input");
  const std::size_t width = x.row_size();
  Shape shape = x.shape();
  shape[0] = index.size();
  std::vector<double> out(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    detail::require(index[r] < x.rows(), "gather_rows: index " + std::to_string(index[r]) +
                                             " out of range " + std::to_string(x.rows()));
    const auto src = x.row(index[r]);
    std::copy(src.begin(), src.end(), out.begin() + r * width);
  }
  return make_result(std::move(shape), std::move(out), {x},
                     [index = std::move(index), width](Node& self) {
                       auto* gx = detail::input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < index.size(); ++r)
                         for (std::size_t j = 0; j < width; ++j)
                           (*gx)[index[r] * width + j] += self.grad[r * width + j];
                     });
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require(begin + count <= x.rows(), "slice_rows: range [" + std::to_string(begin) + ", " +
                                                 std::to_string(begin + count) + ") exceeds " +
                                                 std::to_string(x.rows()));
  std::vector<std::size_t> index(count);
  for (std::size_t i = 0; i < count; ++i) index[i] = begin + i;
  return gather_rows(x, std::move(index));
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  Shape shape = parts.front().shape();
  detail::require(!shape.empty(), "concat_rows: scalar input");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape tail_a(shape.begin() + 1, shape.end());
    Shape tail_b(p.shape().begin() + 1, p.shape().end());
    detail::require(p.rank() == shape.size() && tail_a == tail_b,
                    "concat_rows: incompatible shapes " + shape_str(shape) + " and " +
                        shape_str(p.shape()));
    total += p.rows();
  }
  shape[0] = total;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  return make_result(std::move(shape), std::move(out), parts, [sizes](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (auto* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < sizes[k]; ++i) (*g)[i] += self.grad[offset + i];
      offset += sizes[k];
    }
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    detail::require(p.dim(0) == m, "concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto r = parts[k].row(i);
      std::copy(r.begin(), r.end(), out.begin() + i * total + col);
      col += widths[k];
    }
  }
  return make_result({m, total}, std::move(out), parts, [m, widths, total](Node& self) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            (*g)[i * widths[k] + j] += self.grad[i * total + col + j];
      col += widths[k];
    }
  });
}

// Mean over contiguous row segments: segment s covers rows
// [offsets[s], offsets[s+1]). Each column is summed in ascending value order,
// so the result does not depend on the order of rows inside a segment.
inline Tensor segment_mean(const Tensor& x, std::vector<std::size_t> offsets) {
  detail::require_matrix(x, "segment_mean");
  detail::require(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == x.rows(),
                  "segment_mean: offsets do not cover the input");
  const std::size_t segments = offsets.size() - 1, width = x.dim(1);
  std::vector<double> out(segments * width);
  std::vector<double> column;
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t lo = offsets[s], hi = offsets[s + 1];
    detail::require(hi > lo, "segment_mean: empty segment " + std::to_string(s));
    for (std::size_t j = 0; j < width; ++j) {
      column.clear();
      for (std::size_t r = lo; r < hi; ++r) column.push_back(x.data()[r * width + j]);
      std::sort(column.begin(), column.end());
      double acc = 0.0;
      for (double v : column) acc += v;
      out[s * width + j] = acc / static_cast<double>(hi - lo);
    }
  }
  return make_result({segments, width}, std::move(out), {x},
                     [offsets = std::move(offsets), width](Node& self) {
                       auto* gx = detail::input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                         const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
                         for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
                           for (std::size_t j = 0; j < width; ++j)
                             (*gx)[r * width + j] += self.grad[s * width + j] * inv;
                       }
                     });
}

// out[i,j] = ||a_i - b_j||^2
inline Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "pairwise_sqdist");
  detail::require_matrix(b, "pairwise_sqdist");
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  detail::require(b.dim(1) == d, "pairwise_sqdist: feature widths differ");
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a.data()[i * d + k] - b.data()[j * d + k];
        acc += diff * diff;
      }
      out[i * n + j] = acc;
    }
  return make_result({m, n}, std::move(out), {a, b}, [m, n, d](Node& self) {
    const auto& av = detail::input_value(self, 0);
    const auto& bv = detail::input_value(self, 1);
    auto* ga = detail::input_grad(self, 0);
    auto* gb = detail::input_grad(self, 1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double g = 2.0 * self.grad[i * n + j];
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = av[i * d + k] - bv[j * d + k];
          if (ga) (*ga)[i * d + k] += g * diff;
          if (gb) (*gb)[j * d + k] -= g * diff;
        }
      }
  });
}

// Rows scaled to unit Euclidean norm. A zero row has no direction.
inline Tensor l2_normalize_rows(const Tensor& x) {
  detail::require_matrix(x, "l2_normalize_rows");
  const std::size_t m = x.dim(0), d = x.dim(1);
  std::vector<double> norms(m), out(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += x.data()[i * d + k] * x.data()[i * d + k];
    norms[i] = std::sqrt(acc);
    if (!(norms[i] > 0.0)) throw ShapeError("l2_normalize_rows: row " + std::to_string(i) +
                                            " has zero norm");
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = x.data()[i * d + k] / norms[i];
  }
  return make_result({m, d}, std::move(out), {x}, [m, d, norms](Node& self) {
    auto* gx = detail::input_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += self.grad[i * d + k] * self.value[i * d + k];
      for (std::size_t k = 0; k < d; ++k)
        (*gx)[i * d + k] += (self.grad[i * d + k] - dot * self.value[i * d + k]) / norms[i];
    }
  });
}

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return make_result({m, n}, std::move(out), {x}, [m, n](Node& self) {
    auto* gx = detail::input_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        (*gx)[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

// Mean over rows of -log softmax(logits)[label].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  detail::require(labels.size() == m, "cross_entropy: " + std::to_string(labels.size()) +
                                          " labels for " + std::to_string(m) + " rows");
  detail::require(m > 0, "cross_entropy: empty batch");
  std::vector<double> probs(m * n);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    detail::require(labels[i] < n, "cross_entropy: label " + std::to_string(labels[i]) +
                                       " out of range for " + std::to_string(n) + " classes");
    const double* row = logits.data().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(row[j] - log_z);
    loss += log_z - row[labels[i]];
  }
  loss /= static_cast<double>(m);
  return make_result({}, {loss}, {logits}, [m, n, labels, probs = std::move(probs)](Node& self) {
    auto* gx = detail::input_grad(self, 0);
    if (!gx) return;
    const double g = self.grad[0] / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        (*gx)[i * n + j] += g * (probs[i * n + j] - (j == labels[i] ? 1.0 : 0.0));
  });
}

// out[i] = x[i, labels[i]]
inline Tensor pick(const Tensor& x, const std::vector<std::size_t>& labels) {
  detail::require_matrix(x, "pick");
  const std::size_t m = x.dim(0), n = x.dim(1);
  detail::require(labels.size() == m, "pick: label count mismatch");
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    detail::require(labels[i] < n, "pick: label out of range");
    out[i] = x.data()[i * n + labels[i]];
  }
  return make_result({m}, std::move(out), {x}, [n, labels](Node& self) {
    if (auto* gx = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < labels.size(); ++i) (*gx)[i * n + labels[i]] += self.grad[i];
  });
}

// Rows divided by their sums; entries must be positive.
inline Tensor row_normalize(const Tensor& x) {
  detail::require_matrix(x, "row_normalize");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> sums(m, 0.0), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) sums[i] += x.data()[i * n + j];
    detail::require(sums[i] > 0.0, "row_normalize: non-positive row sum");
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] / sums[i];
  }
  return make_result({m, n}, std::move(out), {x}, [m, n, sums](Node& self) {
    auto* gx = detail::input_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        (*gx)[i * n + j] += (self.grad[i * n + j] - dot) / sums[i];
    }
  });
}

// Row (u * N + v) holds |x_u - x_v| elementwise.
inline Tensor pairwise_absdiff(const Tensor& x) {
  detail::require_matrix(x, "pairwise_absdiff");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(n * n * d);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t k = 0; k < d; ++k)
        out[(u * n + v) * d + k] = std::abs(x.data()[u * d + k] - x.data()[v * d + k]);
  return make_result({n * n, d}, std::move(out), {x}, [n, d](Node& self) {
    auto* gx = detail::input_grad(self, 0);
    if (!gx) return;
    const auto& xv = detail::input_value(self, 0);
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = 0; v < n; ++v)
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = xv[u * d + k] - xv[v * d + k];
          const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          const double g = self.grad[(u * n + v) * d + k] * s;
          (*gx)[u * d + k] += g;
          (*gx)[v * d + k] -= g;
        }
  });
}

// (N,H,W,C) -> (N*H*W, k*k*C) patches for a stride-1 convolution with
// symmetric zero padding k/2. Patch layout is (dy, dx, c).
inline Tensor im2col(const Tensor& x, std::size_t kernel) {
  detail::require(x.rank() == 4, "im2col: expected (N,H,W,C), got " + shape_str(x.shape()));
  detail::require(kernel % 2 == 1, "im2col: kernel must be odd");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const std::size_t patch = kernel * kernel * c;
  std::vector<double> out(n * h * w * patch, 0.0);
  const auto xv = x.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double* dst = out.data() + ((b * h + y) * w + xx) * patch;
        for (std::size_t dy = 0; dy < kernel; ++dy) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t dx = 0; dx < kernel; ++dx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* src = xv.data() + ((b * h + sy) * w + sx) * c;
            std::copy(src, src + c, dst + (dy * kernel + dx) * c);
          }
        }
      }
  return make_result({n * h * w, patch}, std::move(out), {x},
                     [n, h, w, c, kernel, pad, patch](Node& self) {
                       auto* gx = detail::input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t y = 0; y < h; ++y)
                           for (std::size_t xx = 0; xx < w; ++xx) {
                             const double* src = self.grad.data() + ((b * h + y) * w + xx) * patch;
                             for (std::size_t dy = 0; dy < kernel; ++dy) {
                               const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
                               if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                               for (std::size_t dx = 0; dx < kernel; ++dx) {
                                 const std::ptrdiff_t sx =
                                     static_cast<std::ptrdiff_t>(xx + dx) - pad;
                                 if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                                 double* dst = gx->data() + ((b * h + sy) * w + sx) * c;
                                 const double* g = src + (dy * kernel + dx) * c;
                                 for (std::size_t k = 0; k < c; ++k) dst[k] += g[k];
                               }
                             }
                           }
                     });
}

// Stride-1 "same" convolution. weight is (F, k*k*C) in im2col patch layout.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t kernel,
                     const Tensor& bias = Tensor()) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor cols = im2col(x, kernel);
  Tensor y = linear(cols, weight, bias);
  return reshape(y, {n, h, w, weight.dim(0)});
}

// Per-channel statistics used by batch normalization.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased (population) variance
};

// Batch normalization over all leading positions of a channels-last tensor,
// using the batch's own statistics. `stats` receives the batch statistics
// (unbiased variance is derived by the caller for running averages).
inline Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                               ChannelStats* stats = nullptr) {
  const std::size_t c = x.shape().back();
  detail::require(gamma.numel() == c && beta.numel() == c, "batch_norm: affine width mismatch");
  const std::size_t rows = x.numel() / c;
  detail::require(rows > 0, "batch_norm: empty input");
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) mu[k] += xv[r * c + k];
  for (double& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const double d = xv[r * c + k] - mu[k];
      var[k] += d * d;
    }
  for (double& v : var) v /= static_cast<double>(rows);
  std::vector<double> inv_std(c), xhat(x.numel()), out(x.numel());
  for (std::size_t k = 0; k < c; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + eps);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      xhat[i] = (xv[i] - mu[k]) * inv_std[k];
      out[i] = gamma.data()[k] * xhat[i] + beta.data()[k];
    }
  if (stats) *stats = ChannelStats{mu, var};
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [rows, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
                       const auto& gv = detail::input_value(self, 1);
                       std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t k = 0; k < c; ++k) {
                           sum_g[k] += self.grad[r * c + k];
                           sum_gx[k] += self.grad[r * c + k] * xhat[r * c + k];
                         }
                       if (auto* gx = detail::input_grad(self, 0)) {
                         const double inv_rows = 1.0 / static_cast<double>(rows);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t k = 0; k < c; ++k) {
                             const std::size_t i = r * c + k;
                             (*gx)[i] += gv[k] * inv_std[k] *
                                         (self.grad[i] - inv_rows * sum_g[k] -
                                          xhat[i] * inv_rows * sum_gx[k]);
                           }
                       }
                       if (auto* gg = detail::input_grad(self, 1))
                         for (std::size_t k = 0; k < c; ++k) (*gg)[k] += sum_gx[k];
                       if (auto* gb = detail::input_grad(self, 2))
                         for (std::size_t k = 0; k < c; ++k) (*gb)[k] += sum_g[k];
                     });
}

// Batch normalization with fixed (running) statistics.
inline Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              std::span<const double> running_mean,
                              std::span<const double> running_var, double eps) {
  const std::size_t c = x.shape().back();
  detail::require(gamma.numel() == c && beta.numel() == c && running_mean.size() == c &&
                      running_var.size() == c,
                  "batch_norm: channel width mismatch");
  const std::size_t rows = x.numel() / c;
  std::vector<double> inv_std(c), mu(running_mean.begin(), running_mean.end()),
      xhat(x.numel()), out(x.numel());
  for (std::size_t k = 0; k < c; ++k) inv_std[k] = 1.0 / std::sqrt(running_var[k] + eps);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      xhat[i] = (x.data()[i] - mu[k]) * inv_std[k];
      out[i] = gamma.data()[k] * xhat[i] + beta.data()[k];
    }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [rows, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
                       const auto& gv = detail::input_value(self, 1);
                       auto* gx = detail::input_grad(self, 0);
                       auto* gg = detail::input_grad(self, 1);
                       auto* gb = detail::input_grad(self, 2);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t k = 0; k < c; ++k) {
                           const std::size_t i = r * c + k;
                           if (gx) (*gx)[i] += self.grad[i] * gv[k] * inv_std[k];
                           if (gg) (*gg)[k] += self.grad[i] * xhat[i];
                           if (gb) (*gb)[k] += self.grad[i];
                         }
                     });
}

// 2x2 max pooling, stride 2, floor semantics. Ties go to the first maximum
// in (dy, dx) scan order.
inline Tensor max_pool2(const Tensor& x) {
  detail::require(x.rank() == 4, "max_pool2: expected (N,H,W,C)");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  detail::require(oh > 0 && ow > 0, "max_pool2: input " + shape_str(x.shape()) + " too small");
  std::vector<double> out(n * oh * ow * c);
  std::vector<std::size_t> argmax(out.size());
  const auto xv = x.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t k = 0; k < c; ++k) {
          std::size_t best = ((b * h + 2 * y) * w + 2 * xx) * c + k;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i = ((b * h + 2 * y + dy) * w + 2 * xx + dx) * c + k;
              if (xv[i] > xv[best]) best = i;
            }
          const std::size_t o = ((b * oh + y) * ow + xx) * c + k;
          out[o] = xv[best];
          argmax[o] = best;
        }
  return make_result({n, oh, ow, c}, std::move(out), {x},
                     [argmax = std::move(argmax)](Node& self) {
                       if (auto* gx = detail::input_grad(self, 0))
                         for (std::size_t o = 0; o < argmax.size(); ++o)
                           (*gx)[argmax[o]] += self.grad[o];
                     });
}

// (N,H,W,C) -> (N,C)
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require(x.rank() == 4, "global_avg_pool: expected (N,H,W,C)");
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  std::vector<double> out(n * c, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t k = 0; k < c; ++k) out[b * c + k] += x.data()[(b * hw + p) * c + k];
  for (double& v : out) v /= static_cast<double>(hw);
  return make_result({n, c}, std::move(out), {x}, [n, hw, c](Node& self) {
    auto* gx = detail::input_grad(self, 0);
    if (!gx) return;
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < c; ++k) (*gx)[(b * hw + p) * c + k] += self.grad[b * c + k] * inv;
  });
}

}  // namespace hts::ops
