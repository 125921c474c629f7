#pragma once

#include <set>
#include <string>

#include "pbtts/grad_check.hpp"
#include "pbtts/model.hpp"

namespace pbtts {

/// A small network that checks in seconds.
ModelConfig gradcheck_config();

enum class CheckPrecision { kMixed, kDouble };

struct ModelGradCheck {
  GradCheckResult result;
  std::set<std::string> groups;  // parameter groups that received samples
};

/// Finite-difference check of the full training loss on a random example.
/// Parameters are jittered off their initial values so no unit sits exactly
/// on a relu kink.
ModelGradCheck model_grad_check(const ModelConfig& config, CheckPrecision precision, const GradCheckOptions& options);

}  // namespace pbtts
