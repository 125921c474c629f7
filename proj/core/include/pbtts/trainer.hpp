#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pbtts/config.hpp"
#include "pbtts/corpus.hpp"
#include "pbtts/model.hpp"

namespace pbtts {

/// Batch-mean loss components of one optimizer step.
struct LossRecord {
  std::size_t step = 0;  // 1-based
  double l_spec = 0.0;
  double l_stop = 0.0;
  double l_prosody = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

/// Adam moments for trainable tensors only, keyed by parameter name.
struct OptimizerState {
  std::size_t step = 0;
  std::map<std::string, std::vector<float>> m;
  std::map<std::string, std::vector<float>> v;

  bool operator==(const OptimizerState&) const = default;
};

double noam_lr(const TrainConfig& config, std::size_t d_model, std::size_t step);

/// Training examples from one corpus split.
std::vector<Example> make_examples(const Corpus& corpus, bool test);
std::vector<Example> make_examples(const std::vector<const Utterance*>& utts);

/// Example indices of the batch at 1-based `step`. Epoch e visits a
/// permutation seeded by derive_seed(seed, e), so the order is a function of
/// the step alone and resuming reproduces it.
std::vector<std::size_t> batch_indices(std::size_t n_examples, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t step);

/// Mean loss over `examples` under fixed parameters (no updates).
LossRecord evaluate_loss(const Network<float>& net, const std::vector<Example>& examples, double alpha,
                         double beta);

struct TrainResult {
  ParamStore<float> params;
  OptimizerState optimizer;
  std::vector<LossRecord> curve;
};

using StepCallback = std::function<void(const LossRecord&)>;

/// Runs optimizer steps from optimizer.step + 1 through config.max_steps.
/// Tensors in frozen groups are never touched; a non-finite loss raises
/// TrainingError naming the step.
TrainResult train(const std::vector<Example>& examples, const ModelConfig& model, const TrainConfig& config,
                  ParamStore<float> params, OptimizerState optimizer = {}, const StepCallback& on_step = {});

enum class RefineStrategy { kFull, kEncoderOnly, kEncoderPlusCrossAttention };

RefineStrategy parse_refine_strategy(const std::string& name);
const char* refine_strategy_name(RefineStrategy s);
std::vector<std::string> frozen_groups_for(RefineStrategy s);

/// Continues from pretrained parameters with the strategy's frozen groups and
/// a fresh optimizer.
TrainResult refine(const std::vector<Example>& examples, const ModelConfig& model, TrainConfig config,
                   const ParamStore<float>& pretrained, RefineStrategy strategy, const StepCallback& on_step = {});

/// "step,l_spec,l_stop,l_prosody,total,lr" rows.
std::string format_loss_curve(const std::vector<LossRecord>& curve);

}  // namespace pbtts
