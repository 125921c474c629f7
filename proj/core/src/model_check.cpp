#include "pbtts/model_check.hpp"

#include "pbtts/random.hpp"

namespace pbtts {

namespace {

template <typename T>
std::vector<NamedTensor<T>> named(ParamStore<T>& p) {
  std::vector<NamedTensor<T>> out;
  for (auto& e : p.entries()) out.push_back({e.name, e.tensor});
  return out;
}

Example random_example(const ModelConfig& c, Rng& rng) {
  Example e;
  const std::size_t phones = std::min<std::size_t>(3, c.max_phones);
  for (std::size_t i = 0; i < phones; ++i) e.phones.push_back(static_cast<PhoneId>(rng.below(c.n_phones)));
  e.spk = static_cast<SpeakerId>(c.n_speakers - 1);
  e.sty = static_cast<StyleId>(c.n_styles - 1);
  e.frames = phones + 2;
  for (std::size_t i = 0; i < e.frames * c.n_mels; ++i) e.mel.push_back(static_cast<float>(rng.normal()));
  for (std::size_t i = 0; i < phones; ++i) {
    e.prosody.push_back({static_cast<float>(rng.normal()), i == 1 ? 0.0f : 1.0f, static_cast<float>(rng.normal()),
                         static_cast<float>(rng.normal())});
  }
  return e;
}

}  // namespace

ModelConfig gradcheck_config() {
  ModelConfig c;
  c.n_phones = 6;
  c.n_speakers = 2;
  c.n_styles = 3;
  c.d_model = 8;
  c.d_spk_sty_embed = 4;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.n_heads = 2;
  c.d_ff = 8;
  c.bottleneck_cnn_channels = 4;
  c.se_reduction = 2;
  c.agg_cnn_channels = 4;
  c.n_mels = 6;
  c.prenet_hidden = 4;
  c.postnet_channels = 4;
  c.max_phones = 16;
  c.max_decoder_frames = 40;
  return c;
}

ModelGradCheck model_grad_check(const ModelConfig& config, CheckPrecision precision,
                                const GradCheckOptions& options) {
  config.validate();
  Rng rng(derive_seed(options.seed, 1));
  const auto ex = random_example(config, rng);
  auto p32 = init_params(config);
  for (auto& e : p32.entries()) {
    for (auto& v : e.tensor.mutable_data()) v += static_cast<float>(0.05 * rng.normal());
  }
  auto p64 = cast_params<double>(p32);
  p64.set_requires_grad(true);
  const Network<double> n64(config, p64);
  auto loss64 = [&] { return n64.forward_train(ex, 1.0, 1.0).loss.total; };

  ModelGradCheck out;
  if (precision == CheckPrecision::kDouble) {
    out.result = grad_check<double>(loss64, named(p64), options);
  } else {
    p32.set_requires_grad(true);
    const Network<float> n32(config, p32);
    out.result = grad_check_mixed<float>([&] { return n32.forward_train(ex, 1.0, 1.0).loss.total; }, named(p32),
                                         loss64, named(p64), options);
  }
  for (const auto& c : out.result.coordinates) out.groups.insert(p64.group_of(c.tensor));
  return out;
}

}  // namespace pbtts
