#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pbtts/tensor.hpp"

namespace pbtts {

struct GradCheckOptions {
  double eps = 1e-3;
  /// Total coordinates to sample; spread evenly across the given tensors.
  std::size_t samples = 200;
  std::uint64_t seed = 7;
};

struct GradCheckCoordinate {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<GradCheckCoordinate> coordinates;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central finite differences against tape gradients.
///
/// `loss` must rebuild its graph from the current values of `params` on each
/// call. It is evaluated once untracked twice to confirm determinism (a
/// mismatch raises DeterminismError), once on a tape for the analytic
/// gradient, and twice per sampled coordinate.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& loss, std::vector<NamedTensor<T>> params,
                           const GradCheckOptions& options = {});

/// Mixed-precision variant: analytic gradients come from the `T` graph,
/// finite differences from a 64-bit rebuild of the same function over
/// `params64` (a value copy of `params`).
template <typename T>
GradCheckResult grad_check_mixed(const std::function<Tensor<T>()>& loss, std::vector<NamedTensor<T>> params,
                                 const std::function<Tensor<double>()>& loss64,
                                 std::vector<NamedTensor<double>> params64, const GradCheckOptions& options = {});

}  // namespace pbtts
