#include "pbtts/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pbtts/error.hpp"

namespace pbtts {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T, typename F>
Tensor<T> finish(Shape shape, std::vector<T> value, bool track, F&& backward_fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (track) {
    node->requires_grad = true;
    node->backward_fn = std::forward<F>(backward_fn);
    Tape<T>::active()->record(node);
  }
  return Tensor<T>(std::move(node));
}

// Gradient buffer of an input, or nullptr when it does not need one.
template <typename T>
T* grad_buffer(const NodePtr<T>& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

template <typename T>
void require_matrix(const Tensor<T>& x, const char* what) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(x.shape()));
  }
}

template <typename T>
std::size_t row_vector_len(const Tensor<T>& row, const char* what) {
  if (row.rank() == 1) return row.dim(0);
  if (row.rank() == 2 && row.dim(0) == 1) return row.dim(1);
  throw DimensionError(std::string(what) + ": expected a row vector, got " + shape_str(row.shape()));
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// c[M,N] += a[M,K] * b[K,N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[K,N] += a[M,K]^T * b[M,N]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* x, std::size_t m, std::size_t n) {
  std::vector<T> t(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = x[i * n + j];
  return t;
}

template <typename T>
T softplus(T z) {
  return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) mismatch("matmul", a.shape(), b.shape());
  std::vector<T> out(m * n, T(0));
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish<T>({m, n}, std::move(out), tracking<T>({&a, &b}),
                   [an, bn, m, k, n](const TensorNode<T>& self) {
                     const T* dc = self.grad.data();
                     if (T* da = grad_buffer(an)) {
                       auto bt = transposed(bn->value.data(), k, n);
                       gemm_acc(dc, bt.data(), da, m, n, k);
                     }
                     if (T* db = grad_buffer(bn)) gemm_tn_acc(an->value.data(), dc, db, m, k, n);
                   });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_matrix(x, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto xn = x.node_ptr();
  return finish<T>({n, m}, transposed(x.data().data(), m, n), tracking<T>({&x}),
                   [xn, m, n](const TensorNode<T>& self) {
                     if (T* dx = grad_buffer(xn)) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += self.grad[j * m + i];
                     }
                   });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish<T>(a.shape(), std::move(out), tracking<T>({&a, &b}), [an, bn](const TensorNode<T>& self) {
    const std::size_t n = self.grad.size();
    if (T* da = grad_buffer(an))
      for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i];
    if (T* db = grad_buffer(bn))
      for (std::size_t i = 0; i < n; ++i) db[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch("sub", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish<T>(a.shape(), std::move(out), tracking<T>({&a, &b}), [an, bn](const TensorNode<T>& self) {
    const std::size_t n = self.grad.size();
    if (T* da = grad_buffer(an))
      for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i];
    if (T* db = grad_buffer(bn))
      for (std::size_t i = 0; i < n; ++i) db[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish<T>(a.shape(), std::move(out), tracking<T>({&a, &b}), [an, bn](const TensorNode<T>& self) {
    const std::size_t n = self.grad.size();
    if (T* da = grad_buffer(an))
      for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i] * bn->value[i];
    if (T* db = grad_buffer(bn))
      for (std::size_t i = 0; i < n; ++i) db[i] += self.grad[i] * an->value[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  auto xn = x.node_ptr();
  return finish<T>(x.shape(), std::move(out), tracking<T>({&x}), [xn, factor](const TensorNode<T>& self) {
    if (T* dx = grad_buffer(xn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& row) {
  require_matrix(x, "add_rowwise");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (row_vector_len(row, "add_rowwise") != n) mismatch("add_rowwise", x.shape(), row.shape());
  std::vector<T> out(m * n);
  const T* xv = x.data().data();
  const T* rv = row.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + rv[j];
  auto xn = x.node_ptr(), rn = row.node_ptr();
  return finish<T>({m, n}, std::move(out), tracking<T>({&x, &row}),
                   [xn, rn, m, n](const TensorNode<T>& self) {
                     if (T* dx = grad_buffer(xn))
                       for (std::size_t i = 0; i < m * n; ++i) dx[i] += self.grad[i];
                     if (T* dr = grad_buffer(rn))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) dr[j] += self.grad[i * n + j];
                   });
}

template <typename T>
Tensor<T> mul_rowwise(const Tensor<T>& x, const Tensor<T>& row) {
  require_matrix(x, "mul_rowwise");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (row_vector_len(row, "mul_rowwise") != n) mismatch("mul_rowwise", x.shape(), row.shape());
  std::vector<T> out(m * n);
  const T* xv = x.data().data();
  const T* rv = row.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * rv[j];
  auto xn = x.node_ptr(), rn = row.node_ptr();
  return finish<T>({m, n}, std::move(out), tracking<T>({&x, &row}),
                   [xn, rn, m, n](const TensorNode<T>& self) {
                     if (T* dx = grad_buffer(xn))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += self.grad[i * n + j] * rn->value[j];
                     if (T* dr = grad_buffer(rn))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) dr[j] += self.grad[i * n + j] * xn->value[i * n + j];
                   });
}

template <typename T>
Tensor<T> broadcast_rows(const Tensor<T>& row, std::size_t m) {
  const std::size_t n = row_vector_len(row, "broadcast_rows");
  if (m == 0) throw DimensionError("broadcast_rows: row count must be positive");
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy(row.data().begin(), row.data().end(), out.begin() + i * n);
  auto rn = row.node_ptr();
  return finish<T>({m, n}, std::move(out), tracking<T>({&row}), [rn, m, n](const TensorNode<T>& self) {
    if (T* dr = grad_buffer(rn))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dr[j] += self.grad[i * n + j];
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_matrix(x, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x.data()[i * n + j];
  for (auto& v : out) v /= T(m);
  auto xn = x.node_ptr();
  return finish<T>({1, n}, std::move(out), tracking<T>({&x}), [xn, m, n](const TensorNode<T>& self) {
    if (T* dx = grad_buffer(xn))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += self.grad[j] / T(m);
  });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  const std::size_t m = a.dim(0), na = a.dim(1), nb = b.dim(1);
  if (b.dim(0) != m) mismatch("concat_cols", a.shape(), b.shape());
  const std::size_t n = na + nb;
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * na, na, out.data() + i * n);
    std::copy_n(b.data().data() + i * nb, nb, out.data() + i * n + na);
  }
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish<T>({m, n}, std::move(out), tracking<T>({&a, &b}),
                   [an, bn, m, na, nb, n](const TensorNode<T>& self) {
                     if (T* da = grad_buffer(an))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < na; ++j) da[i * na + j] += self.grad[i * n + j];
                     if (T* db = grad_buffer(bn))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < nb; ++j) db[i * nb + j] += self.grad[i * n + na + j];
                   });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (len == 0 || start + len > n) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(len) +
                         ") out of range for " + shape_str(x.shape()));
  }
  std::vector<T> out(m * len);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data().data() + i * n + start, len, out.data() + i * len);
  auto xn = x.node_ptr();
  return finish<T>({m, len}, std::move(out), tracking<T>({&x}),
                   [xn, m, n, start, len](const TensorNode<T>& self) {
                     if (T* dx = grad_buffer(xn))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < len; ++j) dx[i * n + start + j] += self.grad[i * len + j];
                   });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.cols() != n) mismatch("concat_rows", parts.front().shape(), p.shape());
    m += p.rows();
    track = track || tracking<T>({&p});
  }
  std::vector<T> out;
  out.reserve(m * n);
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node_ptr());
  }
  return finish<T>({m, n}, std::move(out), track, [nodes](const TensorNode<T>& self) {
    std::size_t offset = 0;
    for (const auto& pn : nodes) {
      const std::size_t count = pn->value.size();
      if (T* dp = grad_buffer(pn))
        for (std::size_t i = 0; i < count; ++i) dp[i] += self.grad[offset + i];
      offset += count;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t len) {
  require_matrix(x, "slice_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (len == 0 || start + len > m) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(len) +
                         ") out of range for " + shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin() + start * n, x.data().begin() + (start + len) * n);
  auto xn = x.node_ptr();
  return finish<T>({len, n}, std::move(out), tracking<T>({&x}), [xn, start, n](const TensorNode<T>& self) {
    if (T* dx = grad_buffer(xn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[start * n + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  const std::size_t n = x.numel();
  const T* xv = x.data().data();
  std::vector<T> out(n);
  const std::size_t d = x.shape().back();
  switch (kind) {
    case Activation::kTanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(xv[i]);
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
      break;
    case Activation::kSoftmaxLastDim:
      for (std::size_t r = 0; r < n / d; ++r) {
        const T* row = xv + r * d;
        T* o = out.data() + r * d;
        const T mx = *std::max_element(row, row + d);
        T total = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          o[j] = std::exp(row[j] - mx);
          total += o[j];
        }
        for (std::size_t j = 0; j < d; ++j) o[j] /= total;
      }
      break;
  }
  auto xn = x.node_ptr();
  auto fn = [xn, kind, d](const TensorNode<T>& self) {
    T* dx = grad_buffer(xn);
    if (!dx) return;
    const std::size_t count = self.grad.size();
    const T* y = self.value.data();
    const T* g = self.grad.data();
    switch (kind) {
      case Activation::kTanh:
        for (std::size_t i = 0; i < count; ++i) dx[i] += g[i] * (T(1) - y[i] * y[i]);
        break;
      case Activation::kSigmoid:
        for (std::size_t i = 0; i < count; ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
        break;
      case Activation::kRelu:
        for (std::size_t i = 0; i < count; ++i)
          if (xn->value[i] > T(0)) dx[i] += g[i];
        break;
      case Activation::kSoftmaxLastDim:
        for (std::size_t r = 0; r < count / d; ++r) {
          T dot = T(0);
          for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
          for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
        }
        break;
    }
  };
  return finish<T>(x.shape(), std::move(out), tracking<T>({&x}), std::move(fn));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) mismatch("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = x.numel() / d;
  const T* xv = x.data().data();
  const T* g = gamma.data().data();
  const T* b = beta.data().data();
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T denom = std::sqrt(var + eps);
    const T inv = denom > T(0) ? T(1) / denom : T(0);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv;
      out[r * d + j] = g[j] * xhat[r * d + j] + b[j];
    }
  }
  auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
  auto fn = [xn, gn, bn, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorNode<T>& self) {
    const T* gy = self.grad.data();
    if (T* dg = grad_buffer(gn))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) dg[j] += gy[r * d + j] * xhat[r * d + j];
    if (T* db = grad_buffer(bn))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) db[j] += gy[r * d + j];
    if (T* dx = grad_buffer(xn)) {
      const T* g = gn->value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dxh = T(0), mean_dxh_xh = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          const T dxh = gy[r * d + j] * g[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xhat[r * d + j];
        }
        mean_dxh /= T(d);
        mean_dxh_xh /= T(d);
        for (std::size_t j = 0; j < d; ++j) {
          const T dxh = gy[r * d + j] * g[j];
          dx[r * d + j] += inv_std[r] * (dxh - mean_dxh - xhat[r * d + j] * mean_dxh_xh);
        }
      }
    }
  };
  return finish<T>(x.shape(), std::move(out), tracking<T>({&x, &gamma, &beta}), std::move(fn));
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride) {
  require_matrix(x, "conv1d");
  if (w.rank() != 3) throw DimensionError("conv1d: weight must be [k, Cin, Cout], got " + shape_str(w.shape()));
  const std::size_t k = w.dim(0), cin = w.dim(1), cout = w.dim(2);
  if (k % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(k));
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  if (x.dim(1) != cin) mismatch("conv1d", x.shape(), w.shape());
  if (bias.numel() != cout) mismatch("conv1d", w.shape(), bias.shape());
  const std::size_t steps = x.dim(0);
  const std::size_t out_steps = (steps - 1) / stride + 1;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  std::vector<T> out(out_steps * cout);
  for (std::size_t t = 0; t < out_steps; ++t) {
    T* o = out.data() + t * cout;
    std::copy_n(bias.data().data(), cout, o);
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
      gemm_acc(xv + src * cin, wv + j * cin * cout, o, 1, cin, cout);
    }
  }
  auto xn = x.node_ptr(), wn = w.node_ptr(), bn = bias.node_ptr();
  auto fn = [xn, wn, bn, k, cin, cout, steps, out_steps, stride, pad](const TensorNode<T>& self) {
    const T* gy = self.grad.data();
    if (T* db = grad_buffer(bn))
      for (std::size_t t = 0; t < out_steps; ++t)
        for (std::size_t c = 0; c < cout; ++c) db[c] += gy[t * cout + c];
    T* dw = grad_buffer(wn);
    T* dx = grad_buffer(xn);
    std::vector<T> wt;
    if (dx) {
      // per-tap transpose [k][cout][cin]
      wt.resize(k * cin * cout);
      for (std::size_t j = 0; j < k; ++j) {
        auto tj = transposed(wn->value.data() + j * cin * cout, cin, cout);
        std::copy(tj.begin(), tj.end(), wt.begin() + j * cin * cout);
      }
    }
    for (std::size_t t = 0; t < out_steps; ++t) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
        if (dw) gemm_tn_acc(xn->value.data() + src * cin, gy + t * cout, dw + j * cin * cout, 1, cin, cout);
        if (dx) gemm_acc(gy + t * cout, wt.data() + j * cin * cout, dx + src * cin, 1, cout, cin);
      }
    }
  };
  return finish<T>({out_steps, cout}, std::move(out), tracking<T>({&x, &w, &bias}), std::move(fn));
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw InputError("embedding: empty id sequence");
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InputError("embedding: id " + std::to_string(ids[i]) + " at index " + std::to_string(i) +
                       " is outside table of size " + std::to_string(vocab));
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  auto tn = table.node_ptr();
  std::vector<int> idv(ids.begin(), ids.end());
  return finish<T>({ids.size(), d}, std::move(out), tracking<T>({&table}),
                   [tn, idv = std::move(idv), d](const TensorNode<T>& self) {
                     if (T* dt = grad_buffer(tn))
                       for (std::size_t i = 0; i < idv.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j) dt[idv[i] * d + j] += self.grad[i * d + j];
                   });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (auto v : x.data()) total += v;
  auto xn = x.node_ptr();
  return finish<T>({1}, {total}, tracking<T>({&x}), [xn](const TensorNode<T>& self) {
    if (T* dx = grad_buffer(xn))
      for (std::size_t i = 0; i < xn->value.size(); ++i) dx[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.numel() != b.numel()) mismatch("mse", a.shape(), b.shape());
  const std::size_t n = a.numel();
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = a.data()[i] - b.data()[i];
    total += diff * diff;
  }
  auto an = a.node_ptr(), bn = b.node_ptr();
  return finish<T>({1}, {total / T(n)}, tracking<T>({&a, &b}), [an, bn, n](const TensorNode<T>& self) {
    const T g = self.grad[0] * T(2) / T(n);
    T* da = grad_buffer(an);
    T* db = grad_buffer(bn);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = an->value[i] - bn->value[i];
      if (da) da[i] += g * diff;
      if (db) db[i] -= g * diff;
    }
  });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> labels, std::span<const T> weights) {
  const std::size_t n = logits.numel();
  if (labels.size() != n || weights.size() != n) {
    throw DimensionError("bce_with_logits: " + std::to_string(n) + " logits but " +
                         std::to_string(labels.size()) + " labels and " + std::to_string(weights.size()) +
                         " weights");
  }
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits.data()[i];
    const T y = labels[i];
    // y*softplus(-z) + (1-y)*softplus(z), stable for infinite logits
    T term = T(0);
    if (y != T(0)) term += y * softplus(-z);
    if (y != T(1)) term += (T(1) - y) * softplus(z);
    total += weights[i] * term;
  }
  auto ln = logits.node_ptr();
  std::vector<T> yv(labels.begin(), labels.end()), wv(weights.begin(), weights.end());
  return finish<T>({1}, {total / T(n)}, tracking<T>({&logits}),
                   [ln, yv = std::move(yv), wv = std::move(wv), n](const TensorNode<T>& self) {
                     if (T* dz = grad_buffer(ln)) {
                       const T g = self.grad[0] / T(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         const T s = T(1) / (T(1) + std::exp(-ln->value[i]));
                         dz[i] += g * wv[i] * (s - yv[i]);
                       }
                     }
                   });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label) {
  const std::size_t c = logits.numel();
  if (label >= c) throw InputError("softmax_cross_entropy: label " + std::to_string(label) + " >= " + std::to_string(c));
  const T* z = logits.data().data();
  const T mx = *std::max_element(z, z + c);
  std::vector<T> p(c);
  T total = T(0);
  for (std::size_t j = 0; j < c; ++j) {
    p[j] = std::exp(z[j] - mx);
    total += p[j];
  }
  for (auto& v : p) v /= total;
  const T loss = std::log(total) + mx - z[label];
  auto ln = logits.node_ptr();
  return finish<T>({1}, {loss}, tracking<T>({&logits}), [ln, p = std::move(p), label](const TensorNode<T>& self) {
    if (T* dz = grad_buffer(ln))
      for (std::size_t j = 0; j < p.size(); ++j) dz[j] += self.grad[0] * (p[j] - (j == label ? T(1) : T(0)));
  });
}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m;
  m.rows = n;
  m.cols = n;
  m.allowed.assign(n * n, 0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) m.allowed[r * n + c] = 1;
  return m;
}

template <typename T>
AttentionOutput<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        std::size_t heads, const std::optional<AttentionMask>& mask) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t tq = q.dim(0), tk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d) mismatch("attention(q,k)", q.shape(), k.shape());
  if (v.dim(0) != tk || v.dim(1) != d) mismatch("attention(k,v)", k.shape(), v.shape());
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (mask) {
    if (mask->rows != tq || mask->cols != tk) {
      throw DimensionError("attention: mask [" + std::to_string(mask->rows) + "," + std::to_string(mask->cols) +
                           "] does not match scores [" + std::to_string(tq) + "," + std::to_string(tk) + "]");
    }
    for (std::size_t r = 0; r < tq; ++r) {
      bool any = false;
      for (std::size_t c = 0; c < tk && !any; ++c) any = mask->visible(r, c);
      if (!any) throw ContractError("attention: degenerate mask, query row " + std::to_string(r) + " sees no keys");
    }
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  const T* qv = q.data().data();
  const T* kv = k.data().data();
  const T* vv = v.data().data();
  std::vector<T> out(tq * d, T(0));
  std::vector<std::vector<T>> weights(heads, std::vector<T>(tq * tk, T(0)));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    auto& w = weights[h];
    for (std::size_t i = 0; i < tq; ++i) {
      T* wrow = w.data() + i * tk;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < tk; ++j) {
        if (mask && !mask->visible(i, j)) continue;
        T s = T(0);
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[j * d + off + c];
        wrow[j] = s * inv_sqrt;
        mx = std::max(mx, wrow[j]);
      }
      T total = T(0);
      for (std::size_t j = 0; j < tk; ++j) {
        if (mask && !mask->visible(i, j)) {
          wrow[j] = T(0);
          continue;
        }
        wrow[j] = std::exp(wrow[j] - mx);
        total += wrow[j];
      }
      T* orow = out.data() + i * d + off;
      for (std::size_t j = 0; j < tk; ++j) {
        wrow[j] /= total;
        const T wij = wrow[j];
        if (wij == T(0)) continue;
        const T* vrow = vv + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) orow[c] += wij * vrow[c];
      }
    }
  }
  AttentionOutput<T> result;
  for (const auto& w : weights) result.weights.emplace_back(Shape{tq, tk}, w);
  auto qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr();
  auto fn = [qn, kn, vn, weights = std::move(weights), tq, tk, d, dh, heads, inv_sqrt](const TensorNode<T>& self) {
    const T* gy = self.grad.data();
    T* dq = grad_buffer(qn);
    T* dk = grad_buffer(kn);
    T* dv = grad_buffer(vn);
    const T* qv = qn->value.data();
    const T* kv = kn->value.data();
    const T* vv = vn->value.data();
    std::vector<T> dw(tk);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      const auto& w = weights[h];
      for (std::size_t i = 0; i < tq; ++i) {
        const T* wrow = w.data() + i * tk;
        const T* grow = gy + i * d + off;
        T dot = T(0);
        for (std::size_t j = 0; j < tk; ++j) {
          T s = T(0);
          if (wrow[j] != T(0)) {
            const T* vrow = vv + j * d + off;
            for (std::size_t c = 0; c < dh; ++c) s += grow[c] * vrow[c];
          }
          dw[j] = s;
          dot += wrow[j] * s;
        }
        for (std::size_t j = 0; j < tk; ++j) {
          const T wij = wrow[j];
          if (wij == T(0)) continue;
          if (dv) {
            T* dvrow = dv + j * d + off;
            for (std::size_t c = 0; c < dh; ++c) dvrow[c] += wij * grow[c];
          }
          const T ds = wij * (dw[j] - dot) * inv_sqrt;
          if (dq) {
            T* dqrow = dq + i * d + off;
            const T* krow = kv + j * d + off;
            for (std::size_t c = 0; c < dh; ++c) dqrow[c] += ds * krow[c];
          }
          if (dk) {
            T* dkrow = dk + j * d + off;
            const T* qrow = qv + i * d + off;
            for (std::size_t c = 0; c < dh; ++c) dkrow[c] += ds * qrow[c];
          }
        }
      }
    }
  };
  result.output = finish<T>({tq, d}, std::move(out), tracking<T>({&q, &k, &v}), std::move(fn));
  return result;
}

template <typename T>
AttentionOutput<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const std::optional<AttentionMask>& mask) {
  return multi_head_attention(q, k, v, 1, mask);
}

template <typename T>
Tensor<T> sinusoid_positions(std::size_t n, std::size_t d) {
  std::vector<T> pe(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(p) * rate;
      pe[p * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>({n, d}, std::move(pe));
}

#define PBTTS_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> transpose(const Tensor<T>&);                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                                         \
  template Tensor<T> add_rowwise(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul_rowwise(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> broadcast_rows(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                        \
  template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                             \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                         \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                             \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);          \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                              \
  template Tensor<T> mean(const Tensor<T>&);                                                             \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>, std::span<const T>);          \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::size_t);                               \
  template AttentionOutput<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                   const std::optional<AttentionMask>&);                 \
  template AttentionOutput<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                   std::size_t, const std::optional<AttentionMask>&);    \
  template Tensor<T> sinusoid_positions(std::size_t, std::size_t);

PBTTS_INSTANTIATE_OPS(float)
PBTTS_INSTANTIATE_OPS(double)

}  // namespace pbtts
