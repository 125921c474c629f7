#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pbtts/tensor.hpp"

namespace pbtts {

// Differentiable operations. Matrix operations take rank-2 tensors; a
// "row vector" argument may be given as [N] or [1,N].

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

/// x[M,N] + row[N], broadcast over rows.
template <typename T> Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& row);
/// x[M,N] * row[N], broadcast over rows.
template <typename T> Tensor<T> mul_rowwise(const Tensor<T>& x, const Tensor<T>& row);
/// row[N] repeated to [M,N].
template <typename T> Tensor<T> broadcast_rows(const Tensor<T>& row, std::size_t m);
/// Column means: [M,N] -> [1,N].
template <typename T> Tensor<T> mean_rows(const Tensor<T>& x);

template <typename T> Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t len);

enum class Activation { kTanh, kSigmoid, kRelu, kSoftmaxLastDim };

template <typename T> Tensor<T> activation(const Tensor<T>& x, Activation kind);
template <typename T> Tensor<T> tanh(const Tensor<T>& x) { return activation(x, Activation::kTanh); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::kSigmoid); }
template <typename T> Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::kRelu); }
template <typename T> Tensor<T> softmax(const Tensor<T>& x) { return activation(x, Activation::kSoftmaxLastDim); }

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Cross-correlation over the time axis with "same" zero padding.
/// x: [T, Cin], w: [k, Cin, Cout], bias: [Cout]. k must be odd.
/// Output has ceil(T / stride) rows.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride = 1);

/// Row gather: table[V,D] at ids -> [n,D].
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// mean((a - b)^2) over every element.
template <typename T> Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);
/// sum_i w_i * BCE(sigmoid(logit_i), label_i) / n.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> labels, std::span<const T> weights);
/// -log softmax(logits)[label] for a single row of logits.
template <typename T> Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label);

/// Allowed-position mask for attention; true = key visible to query.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask causal(std::size_t n);
  bool visible(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

template <typename T>
struct AttentionOutput {
  Tensor<T> output;
  /// Attention weights, one [Tq,Tk] tensor per head; values only.
  std::vector<Tensor<T>> weights;
};

/// softmax(q k^T / sqrt(D) + mask) v for a single head.
template <typename T>
AttentionOutput<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const std::optional<AttentionMask>& mask = std::nullopt);

/// Column-split multi-head variant: head h uses columns [h*D/H, (h+1)*D/H).
template <typename T>
AttentionOutput<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        std::size_t heads,
                                        const std::optional<AttentionMask>& mask = std::nullopt);

/// Sinusoidal position table [n, d] (not differentiable).
template <typename T> Tensor<T> sinusoid_positions(std::size_t n, std::size_t d);

}  // namespace pbtts
