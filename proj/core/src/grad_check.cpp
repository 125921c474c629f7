#include "pbtts/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pbtts/error.hpp"

namespace pbtts {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

template <typename T>
void check_deterministic(const std::function<Tensor<T>()>& loss) {
  const auto first = loss();
  const auto second = loss();
  if (first.numel() != 1 || second.numel() != 1) throw ContractError("grad_check: loss must be scalar");
  if (first.item() != second.item()) {
    throw DeterminismError("grad_check: two forward passes disagree (" + std::to_string(first.item()) + " vs " +
                           std::to_string(second.item()) + ")");
  }
}

struct Pick {
  std::size_t tensor;
  std::size_t index;
};

template <typename T>
std::vector<Pick> sample_coordinates(const std::vector<NamedTensor<T>>& params, const GradCheckOptions& options) {
  std::vector<Pick> picks;
  if (params.empty()) return picks;
  std::mt19937_64 rng(options.seed);
  const std::size_t total = std::max(options.samples, params.size());
  for (std::size_t s = 0; s < total; ++s) {
    const std::size_t t = s % params.size();
    picks.push_back({t, static_cast<std::size_t>(rng() % params[t].tensor.numel())});
  }
  return picks;
}

template <typename T>
std::vector<std::vector<T>> analytic_grads(const std::function<Tensor<T>()>& loss, std::vector<NamedTensor<T>>& params) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  {
    Tape<T> tape;
    auto l = loss();
    backward(l, tape);
  }
  std::vector<std::vector<T>> grads;
  for (auto& p : params) grads.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  return grads;
}

template <typename U>
double central_difference(const std::function<Tensor<U>()>& loss, Tensor<U>& param, std::size_t index, double eps) {
  auto values = param.mutable_data();
  const U original = values[index];
  values[index] = static_cast<U>(original + eps);
  const double plus = static_cast<double>(loss().item());
  values[index] = static_cast<U>(original - eps);
  const double minus = static_cast<double>(loss().item());
  values[index] = original;
  return (plus - minus) / (2.0 * eps);
}

void validate(const GradCheckOptions& options) {
  if (!(options.eps >= 1e-5 && options.eps <= 1e-2)) {
    throw ConfigError("grad_check: eps must lie in [1e-5, 1e-2], got " + std::to_string(options.eps));
  }
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& loss, std::vector<NamedTensor<T>> params,
                           const GradCheckOptions& options) {
  validate(options);
  check_deterministic(loss);
  const auto grads = analytic_grads(loss, params);
  GradCheckResult result;
  for (const auto& pick : sample_coordinates(params, options)) {
    auto& p = params[pick.tensor];
    GradCheckCoordinate c;
    c.tensor = p.name;
    c.index = pick.index;
    c.analytic = static_cast<double>(grads[pick.tensor][pick.index]);
    c.numeric = central_difference(loss, p.tensor, pick.index, options.eps);
    c.relative_error = relative_error(c.analytic, c.numeric);
    result.max_relative_error = std::max(result.max_relative_error, c.relative_error);
    result.coordinates.push_back(std::move(c));
  }
  return result;
}

template <typename T>
GradCheckResult grad_check_mixed(const std::function<Tensor<T>()>& loss, std::vector<NamedTensor<T>> params,
                                 const std::function<Tensor<double>()>& loss64,
                                 std::vector<NamedTensor<double>> params64, const GradCheckOptions& options) {
  validate(options);
  if (params.size() != params64.size()) throw ContractError("grad_check_mixed: parameter lists differ in length");
  check_deterministic(loss);
  check_deterministic(loss64);
  const auto grads = analytic_grads(loss, params);
  GradCheckResult result;
  for (const auto& pick : sample_coordinates(params, options)) {
    GradCheckCoordinate c;
    c.tensor = params[pick.tensor].name;
    c.index = pick.index;
    c.analytic = static_cast<double>(grads[pick.tensor][pick.index]);
    c.numeric = central_difference(loss64, params64[pick.tensor].tensor, pick.index, options.eps);
    c.relative_error = relative_error(c.analytic, c.numeric);
    result.max_relative_error = std::max(result.max_relative_error, c.relative_error);
    result.coordinates.push_back(std::move(c));
  }
  return result;
}

template GradCheckResult grad_check<float>(const std::function<Tensor<float>()>&, std::vector<NamedTensor<float>>,
                                           const GradCheckOptions&);
template GradCheckResult grad_check<double>(const std::function<Tensor<double>()>&,
                                            std::vector<NamedTensor<double>>, const GradCheckOptions&);
template GradCheckResult grad_check_mixed<float>(const std::function<Tensor<float>()>&,
                                                 std::vector<NamedTensor<float>>,
                                                 const std::function<Tensor<double>()>&,
                                                 std::vector<NamedTensor<double>>, const GradCheckOptions&);

}  // namespace pbtts
