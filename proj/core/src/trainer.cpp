#include "pbtts/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "pbtts/error.hpp"
#include "pbtts/random.hpp"

namespace pbtts {

double noam_lr(const TrainConfig& config, std::size_t d_model, std::size_t step) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(std::max<std::size_t>(config.warmup_steps, 1));
  return config.lr_scale / std::sqrt(static_cast<double>(d_model)) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

std::vector<Example> make_examples(const std::vector<const Utterance*>& utts) {
  std::vector<Example> out;
  out.reserve(utts.size());
  for (const auto* u : utts) {
    Example e;
    e.phones = u->phones;
    e.spk = u->spk;
    e.sty = u->sty;
    e.mel = u->mel.values;
    e.frames = u->mel.frames;
    e.prosody = u->prosody;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Example> make_examples(const Corpus& corpus, bool test) { return make_examples(corpus.split(test)); }

std::vector<std::size_t> batch_indices(std::size_t n_examples, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t step) {
  if (n_examples == 0) throw InputError("training set is empty");
  const std::size_t b = std::min(batch_size, n_examples);
  std::vector<std::size_t> out;
  std::size_t pos = (step - 1) * b;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(n_examples);
  for (std::size_t i = 0; i < b; ++i, ++pos) {
    const std::size_t epoch = pos / n_examples;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(seed, epoch));
      rng.shuffle(perm);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n_examples]);
  }
  return out;
}

namespace {

struct BatchLoss {
  Tensor<float> total;
  LossRecord record;
};

BatchLoss batch_loss(const Network<float>& net, const std::vector<Example>& examples,
                     const std::vector<std::size_t>& idx, double alpha, double beta) {
  BatchLoss out;
  std::vector<Tensor<float>> totals;
  for (std::size_t i : idx) {
    const auto r = net.forward_train(examples[i], alpha, beta);
    out.record.l_spec += r.loss.l_spec.item();
    out.record.l_stop += r.loss.l_stop.item();
    out.record.l_prosody += r.loss.l_prosody.item();
    out.record.total += r.loss.total.item();
    totals.push_back(r.loss.total);
  }
  const double n = static_cast<double>(idx.size());
  out.record.l_spec /= n;
  out.record.l_stop /= n;
  out.record.l_prosody /= n;
  out.record.total /= n;
  Tensor<float> sum = totals[0];
  for (std::size_t i = 1; i < totals.size(); ++i) sum = add(sum, totals[i]);
  out.total = scale(sum, static_cast<float>(1.0 / n));
  return out;
}

}  // namespace

LossRecord evaluate_loss(const Network<float>& net, const std::vector<Example>& examples, double alpha,
                         double beta) {
  if (examples.empty()) throw InputError("evaluation set is empty");
  std::vector<std::size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return batch_loss(net, examples, idx, alpha, beta).record;
}

TrainResult train(const std::vector<Example>& examples, const ModelConfig& model, const TrainConfig& config,
                  ParamStore<float> params, OptimizerState optimizer, const StepCallback& on_step) {
  model.validate();
  config.validate();
  if (examples.empty()) throw InputError("training corpus is empty");
  const std::set<std::string> frozen(config.frozen_groups.begin(), config.frozen_groups.end());
  for (auto& p : params.entries()) {
    p.tensor.set_requires_grad(!frozen.count(p.group));
    if (frozen.count(p.group)) {
      optimizer.m.erase(p.name);
      optimizer.v.erase(p.name);
    }
  }
  const Network<float> net(model, params);
  TrainResult result;
  constexpr double b1 = 0.9, b2 = 0.98, eps = 1e-9;

  for (std::size_t step = optimizer.step + 1; step <= config.max_steps; ++step) {
    const auto idx = batch_indices(examples.size(), config.batch_size, config.seed, step);
    LossRecord rec;
    {
      Tape<float> tape;
      auto bl = batch_loss(net, examples, idx, config.alpha, config.beta);
      rec = bl.record;
      if (!std::isfinite(rec.total) || !std::isfinite(rec.l_spec) || !std::isfinite(rec.l_stop) ||
          !std::isfinite(rec.l_prosody)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step));
      }
      params.zero_grad();
      if (bl.total.requires_grad()) tape.backward(bl.total);
    }
    rec.step = step;
    rec.lr = noam_lr(config, model.d_model, step);

    double norm2 = 0.0;
    for (const auto& p : params.entries()) {
      if (frozen.count(p.group) || !p.tensor.has_grad()) continue;
      for (float g : p.tensor.grad()) norm2 += static_cast<double>(g) * g;
    }
    if (!std::isfinite(norm2)) throw TrainingError("non-finite gradient at step " + std::to_string(step));
    const double norm = std::sqrt(norm2);
    const double clip = config.grad_clip > 0.0 && norm > config.grad_clip ? config.grad_clip / norm : 1.0;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (auto& p : params.entries()) {
      if (frozen.count(p.group) || !p.tensor.has_grad()) continue;
      auto& m = optimizer.m.try_emplace(p.name, p.tensor.numel(), 0.0f).first->second;
      auto& v = optimizer.v.try_emplace(p.name, p.tensor.numel(), 0.0f).first->second;
      const auto g = p.tensor.grad();
      auto w = p.tensor.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
        v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
        const double mh = m[i] / c1, vh = v[i] / c2;
        w[i] = static_cast<float>(w[i] - rec.lr * mh / (std::sqrt(vh) + eps));
      }
    }
    optimizer.step = step;
    result.curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  params.zero_grad();
  params.set_requires_grad(false);
  result.params = std::move(params);
  result.optimizer = std::move(optimizer);
  return result;
}

RefineStrategy parse_refine_strategy(const std::string& name) {
  if (name == "full") return RefineStrategy::kFull;
  if (name == "encoder_only") return RefineStrategy::kEncoderOnly;
  if (name == "encoder_plus_cross_attention") return RefineStrategy::kEncoderPlusCrossAttention;
  throw ConfigError("unknown refine strategy '" + name +
                    "' (expected full, encoder_only or encoder_plus_cross_attention)");
}

const char* refine_strategy_name(RefineStrategy s) {
  switch (s) {
    case RefineStrategy::kFull: return "full";
    case RefineStrategy::kEncoderOnly: return "encoder_only";
    case RefineStrategy::kEncoderPlusCrossAttention: return "encoder_plus_cross_attention";
  }
  return "?";
}

std::vector<std::string> frozen_groups_for(RefineStrategy s) {
  switch (s) {
    case RefineStrategy::kFull: return {};
    case RefineStrategy::kEncoderOnly: return {"cross_attention", "decoder"};
    case RefineStrategy::kEncoderPlusCrossAttention: return {"decoder"};
  }
  return {};
}

TrainResult refine(const std::vector<Example>& examples, const ModelConfig& model, TrainConfig config,
                   const ParamStore<float>& pretrained, RefineStrategy strategy, const StepCallback& on_step) {
  config.frozen_groups = frozen_groups_for(strategy);
  return train(examples, model, config, pretrained.clone(), OptimizerState{}, on_step);
}

std::string format_loss_curve(const std::vector<LossRecord>& curve) {
  std::string out = "step,l_spec,l_stop,l_prosody,total,lr\n";
  char buf[256];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.l_spec, r.l_stop, r.l_prosody, r.total,
                  r.lr);
    out += buf;
  }
  return out;
}

}  // namespace pbtts
