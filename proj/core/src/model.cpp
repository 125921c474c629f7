#include "pbtts/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "pbtts/error.hpp"
#include "pbtts/random.hpp"

namespace pbtts {

const std::vector<std::string>& parameter_groups() {
  static const std::vector<std::string> groups = {"encoder",    "speaker_embed", "style_embed",     "projections",
                                                  "bottleneck", "agg_cnn",       "cross_attention", "decoder"};
  return groups;
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kTextOnly: return "text_only";
    case Stage::kSpeakerStyleCombined: return "speaker_style_combined";
    case Stage::kFullyAggregated: return "fully_aggregated";
  }
  return "?";
}

// ---------------------------------------------------------------- ParamStore

template <typename T>
void ParamStore<T>::add(std::string name, std::string group, Tensor<T> tensor) {
  if (index_.count(name)) throw ContractError("duplicate parameter " + name);
  const auto& groups = parameter_groups();
  if (std::find(groups.begin(), groups.end(), group) == groups.end()) {
    throw ContractError("parameter " + name + " has unknown group " + group);
  }
  const auto pos = std::lower_bound(entries_.begin(), entries_.end(), name,
                                    [](const Param<T>& p, const std::string& n) { return p.name < n; });
  entries_.insert(pos, Param<T>{std::move(name), std::move(group), std::move(tensor)});
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) index_[entries_[i].name] = i;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("missing parameter " + name);
  return entries_[it->second].tensor;
}

template <typename T>
const std::string& ParamStore<T>::group_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("missing parameter " + name);
  return entries_[it->second].group;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("missing parameter " + name);
  return entries_[it->second].tensor;
}

template <typename T>
bool ParamStore<T>::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

template <typename T>
std::size_t ParamStore<T>::numel() const {
  std::size_t n = 0;
  for (const auto& p : entries_) n += p.tensor.numel();
  return n;
}

template <typename T>
ParamStore<T> ParamStore<T>::clone() const {
  ParamStore<T> out;
  for (const auto& p : entries_) out.add(p.name, p.group, p.tensor.clone(p.tensor.requires_grad()));
  return out;
}

template <typename T>
void ParamStore<T>::set_requires_grad(bool flag) {
  for (auto& p : entries_) p.tensor.set_requires_grad(flag);
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : entries_) p.tensor.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

template <typename To, typename From>
ParamStore<To> cast_params(const ParamStore<From>& p) {
  ParamStore<To> out;
  for (const auto& e : p.entries()) out.add(e.name, e.group, cast<To>(e.tensor, e.tensor.requires_grad()));
  return out;
}

template ParamStore<double> cast_params<double, float>(const ParamStore<float>&);
template ParamStore<float> cast_params<float, double>(const ParamStore<double>&);

bool params_identical(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.group != y.group || x.tensor.shape() != y.tensor.shape()) return false;
    for (std::size_t j = 0; j < x.tensor.numel(); ++j) {
      if (std::bit_cast<std::uint32_t>(x.tensor.data()[j]) != std::bit_cast<std::uint32_t>(y.tensor.data()[j])) {
        return false;
      }
    }
  }
  return true;
}

namespace {

class Initializer {
 public:
  Initializer(ParamStore<float>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  void xavier(const std::string& name, const std::string& group, Shape shape, std::size_t fan_in,
              std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng_.uniform(-limit, limit));
    store_.add(name, group, Tensor<float>(std::move(shape), std::move(v)));
  }
  void normal(const std::string& name, const std::string& group, Shape shape, double stddev) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(stddev * rng_.normal());
    store_.add(name, group, Tensor<float>(std::move(shape), std::move(v)));
  }
  void constant(const std::string& name, const std::string& group, Shape shape, float value) {
    store_.add(name, group, Tensor<float>::full(std::move(shape), value));
  }
  void linear(const std::string& name, const std::string& group, std::size_t in, std::size_t out) {
    xavier(name + ".w", group, {in, out}, in, out);
    constant(name + ".b", group, {out}, 0.0f);
  }
  void conv(const std::string& name, const std::string& group, std::size_t k, std::size_t in, std::size_t out) {
    xavier(name + ".w", group, {k, in, out}, k * in, k * out);
    constant(name + ".b", group, {out}, 0.0f);
  }
  void norm(const std::string& name, const std::string& group, std::size_t d) {
    constant(name + ".gamma", group, {d}, 1.0f);
    constant(name + ".beta", group, {d}, 0.0f);
  }
  void attention(const std::string& name, const std::string& group, std::size_t d) {
    for (const char* p : {"q", "v", "o"}) linear(name + "." + p, group, d, d);
    xavier(name + ".k.w", group, {d, d}, d, d);
  }

 private:
  ParamStore<float>& store_;
  Rng rng_;
};

std::string block_name(const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i); }

}  // namespace

ParamStore<float> init_params(const ModelConfig& c) {
  c.validate();
  ParamStore<float> store;
  Initializer init(store, c.init_seed);
  const std::size_t d = c.d_model, e = c.d_spk_sty_embed;

  init.normal("enc.embed", "encoder", {c.n_phones, d}, 0.5);
  init.linear("enc.prenet", "encoder", d, d);
  for (std::size_t i = 0; i < c.n_enc_blocks; ++i) {
    const auto b = block_name("enc.block", i);
    init.attention(b + ".self", "encoder", d);
    init.norm(b + ".norm1", "encoder", d);
    init.linear(b + ".ff1", "encoder", d, c.d_ff);
    init.linear(b + ".ff2", "encoder", c.d_ff, d);
    init.norm(b + ".norm2", "encoder", d);
  }
  init.normal("spk.embed", "speaker_embed", {c.n_speakers, e}, 0.5);
  init.normal("sty.embed", "style_embed", {c.n_styles, e}, 0.5);
  init.linear("proj.combine", "projections", d + e, d);
  init.linear("proj.style", "projections", e, d);

  const std::size_t cb = c.bottleneck_cnn_channels;
  init.conv("bottleneck.conv1", "bottleneck", 3, d, cb);
  init.conv("bottleneck.conv2", "bottleneck", 3, cb, cb);
  init.linear("bottleneck.se.fc1", "bottleneck", cb, cb / c.se_reduction);
  init.linear("bottleneck.se.fc2", "bottleneck", cb / c.se_reduction, cb);
  init.linear("bottleneck.out", "bottleneck", cb, kProsodyDim);

  init.conv("agg.conv1", "agg_cnn", 3, kProsodyDim, c.agg_cnn_channels);
  init.conv("agg.conv2", "agg_cnn", 3, c.agg_cnn_channels, d);

  init.linear("dec.prenet1", "decoder", c.n_mels, c.prenet_hidden);
  init.linear("dec.prenet2", "decoder", c.prenet_hidden, d);
  init.constant("dec.pos_alpha", "decoder", {d}, 1.0f);
  for (std::size_t i = 0; i < c.n_dec_blocks; ++i) {
    const auto b = block_name("dec.block", i);
    init.attention(b + ".self", "decoder", d);
    init.norm(b + ".norm1", "decoder", d);
    init.attention(b + ".cross", "cross_attention", d);
    init.norm(b + ".norm2", "cross_attention", d);
    init.linear(b + ".ff1", "decoder", d, c.d_ff);
    init.linear(b + ".ff2", "decoder", c.d_ff, d);
    init.norm(b + ".norm3", "decoder", d);
  }
  init.linear("dec.mel_head", "decoder", d, c.n_mels);
  init.linear("dec.stop_head", "decoder", d, 1);
  init.conv("dec.post1", "decoder", 5, c.n_mels, c.postnet_channels);
  init.conv("dec.post2", "decoder", 5, c.postnet_channels, c.n_mels);
  return store;
}

// ---------------------------------------------------------------- helpers

template <typename T>
std::vector<float> DecoderOutput<T>::stop_probs() const {
  std::vector<float> p;
  for (T z : stop_logits.data()) p.push_back(static_cast<float>(T(1) / (T(1) + std::exp(-z))));
  return p;
}

template <typename T>
void stop_targets(std::size_t frames, std::vector<T>& labels, std::vector<T>& weights) {
  labels.assign(frames, T(0));
  weights.assign(frames, T(1));
  if (frames == 0) return;
  labels.back() = T(1);
  weights.back() = static_cast<T>(std::max<std::size_t>(frames - 1, 1));
}

template <typename T>
LossParts<T> compute_loss(const Tensor<T>& mel_pre, const Tensor<T>& mel_post, const Tensor<T>& target_mel,
                          const Tensor<T>& stop_logits, const Tensor<T>& prosody_pred,
                          const Tensor<T>& prosody_target, double alpha, double beta) {
  if (mel_pre.shape() != target_mel.shape() || mel_post.shape() != target_mel.shape()) {
    throw InputError("loss: mel shapes " + shape_str(mel_pre.shape()) + "/" + shape_str(mel_post.shape()) +
                     " do not match target " + shape_str(target_mel.shape()));
  }
  if (stop_logits.numel() != target_mel.rows()) {
    throw InputError("loss: " + std::to_string(stop_logits.numel()) + " stop logits for " +
                     std::to_string(target_mel.rows()) + " frames");
  }
  if (prosody_pred.shape() != prosody_target.shape()) {
    throw InputError("loss: prosody shapes " + shape_str(prosody_pred.shape()) + " and " +
                     shape_str(prosody_target.shape()) + " differ");
  }
  std::vector<T> labels, weights;
  stop_targets<T>(target_mel.rows(), labels, weights);
  LossParts<T> l;
  l.l_spec = add(mse(mel_pre, target_mel), mse(mel_post, target_mel));
  l.l_stop = bce_with_logits(stop_logits, std::span<const T>(labels), std::span<const T>(weights));
  l.l_prosody = mse(prosody_pred, prosody_target);
  l.total = add(add(l.l_spec, scale(l.l_stop, static_cast<T>(alpha))), scale(l.l_prosody, static_cast<T>(beta)));
  return l;
}

template <typename T>
Tensor<T> prosody_tensor(const ProsodySequence& p) {
  std::vector<T> v;
  v.reserve(p.size() * kProsodyDim);
  for (const auto& x : p) {
    for (float f : x.as_array()) v.push_back(static_cast<T>(f));
  }
  return Tensor<T>({p.size(), kProsodyDim}, std::move(v));
}

ProsodySequence prosody_from_tensor(const Tensor<float>& t) {
  if (t.rank() != 2 || t.dim(1) != kProsodyDim) throw DimensionError("prosody tensor must be [P,4]");
  ProsodySequence out;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    out.push_back({t.at(i, 0), t.at(i, 1), t.at(i, 2), t.at(i, 3)});
  }
  return out;
}

// ---------------------------------------------------------------- Network

template <typename T>
Network<T>::Network(const ModelConfig& config, const ParamStore<T>& p) : config_(config) {
  config_.validate();
  auto lin = [&](const std::string& n) { return Linear{p.get(n + ".w"), p.get(n + ".b")}; };
  auto conv = [&](const std::string& n) { return Conv{p.get(n + ".w"), p.get(n + ".b")}; };
  auto norm = [&](const std::string& n) { return Norm{p.get(n + ".gamma"), p.get(n + ".beta")}; };
  auto attn = [&](const std::string& n) {
    return Attn{p.get(n + ".q.w"), p.get(n + ".q.b"), p.get(n + ".k.w"), p.get(n + ".v.w"),
                p.get(n + ".v.b"), p.get(n + ".o.w"), p.get(n + ".o.b")};
  };
  phone_embed_ = p.get("enc.embed");
  if (phone_embed_.shape() != Shape{config_.n_phones, config_.d_model}) {
    throw ConfigError("parameters do not match the model configuration (enc.embed is " +
                      shape_str(phone_embed_.shape()) + ")");
  }
  enc_prenet_ = lin("enc.prenet");
  for (std::size_t i = 0; i < config_.n_enc_blocks; ++i) {
    const auto b = block_name("enc.block", i);
    enc_.push_back({attn(b + ".self"), norm(b + ".norm1"), lin(b + ".ff1"), lin(b + ".ff2"), norm(b + ".norm2")});
  }
  spk_embed_ = p.get("spk.embed");
  sty_embed_ = p.get("sty.embed");
  combine_ = lin("proj.combine");
  style_proj_ = lin("proj.style");
  bn_conv1_ = conv("bottleneck.conv1");
  bn_conv2_ = conv("bottleneck.conv2");
  se_fc1_ = lin("bottleneck.se.fc1");
  se_fc2_ = lin("bottleneck.se.fc2");
  bn_out_ = lin("bottleneck.out");
  agg_conv1_ = conv("agg.conv1");
  agg_conv2_ = conv("agg.conv2");
  dec_prenet1_ = lin("dec.prenet1");
  dec_prenet2_ = lin("dec.prenet2");
  dec_pos_alpha_ = p.get("dec.pos_alpha");
  for (std::size_t i = 0; i < config_.n_dec_blocks; ++i) {
    const auto b = block_name("dec.block", i);
    dec_.push_back({attn(b + ".self"), norm(b + ".norm1"), attn(b + ".cross"), norm(b + ".norm2"), lin(b + ".ff1"),
                    lin(b + ".ff2"), norm(b + ".norm3")});
  }
  mel_head_ = lin("dec.mel_head");
  stop_head_ = lin("dec.stop_head");
  post_conv1_ = conv("dec.post1");
  post_conv2_ = conv("dec.post2");
}

template <typename T>
void Network<T>::check_stage(const EncoderState<T>& s, Stage expected, const char* op) const {
  if (s.stage != expected) {
    throw ContractError(std::string(op) + ": expected a " + stage_name(expected) + " state, got " +
                        stage_name(s.stage));
  }
}

template <typename T>
Tensor<T> Network<T>::linear(const Tensor<T>& x, const Linear& l) const {
  return add_rowwise(matmul(x, l.w), l.b);
}

template <typename T>
AttentionOutput<T> Network<T>::attend(const Tensor<T>& q_in, const Tensor<T>& kv_in, const Attn& a,
                                      const std::optional<AttentionMask>& mask) const {
  const auto q = add_rowwise(matmul(q_in, a.wq), a.bq);
  const auto k = matmul(kv_in, a.wk);
  const auto v = add_rowwise(matmul(kv_in, a.wv), a.bv);
  auto out = multi_head_attention(q, k, v, config_.n_heads, mask);
  out.output = add_rowwise(matmul(out.output, a.wo), a.bo);
  return out;
}

template <typename T>
EncoderState<T> Network<T>::encode_text(std::span<const PhoneId> phones) const {
  ++encode_calls_;
  if (phones.empty() || phones.size() > config_.max_phones) {
    throw InputError("encode_text: phone count " + std::to_string(phones.size()) + " outside [1, " +
                     std::to_string(config_.max_phones) + "]");
  }
  for (std::size_t i = 0; i < phones.size(); ++i) {
    if (phones[i] < 0 || static_cast<std::size_t>(phones[i]) >= config_.n_phones) {
      throw InputError("encode_text: phone id " + std::to_string(phones[i]) + " at index " + std::to_string(i) +
                       " is outside the vocabulary of " + std::to_string(config_.n_phones));
    }
  }
  auto x = embedding(phone_embed_, phones);
  if (config_.position_encoding) x = add(x, sinusoid_positions<T>(phones.size(), config_.d_model));
  x = relu(linear(x, enc_prenet_));
  const T eps = static_cast<T>(1e-5);
  for (const auto& b : enc_) {
    x = layer_norm(add(x, attend(x, x, b.self, std::nullopt).output), b.n1.gamma, b.n1.beta, eps);
    x = layer_norm(add(x, linear(relu(linear(x, b.ff1)), b.ff2)), b.n2.gamma, b.n2.beta, eps);
  }
  return {Stage::kTextOnly, x};
}

template <typename T>
Tensor<T> Network<T>::style_vector(StyleId sty) const {
  if (sty < 0 || static_cast<std::size_t>(sty) >= config_.n_styles) {
    throw InputError("style id " + std::to_string(sty) + " outside table of " + std::to_string(config_.n_styles));
  }
  const int id = sty;
  return tanh(linear(embedding(sty_embed_, std::span<const int>(&id, 1)), style_proj_));
}

template <typename T>
EncoderState<T> Network<T>::combine_with_style_vector(const EncoderState<T>& enc, SpeakerId spk,
                                                      const Tensor<T>& style_vec) const {
  check_stage(enc, Stage::kTextOnly, "combine_speaker_style");
  if (spk < 0 || static_cast<std::size_t>(spk) >= config_.n_speakers) {
    throw InputError("speaker id " + std::to_string(spk) + " outside table of " +
                     std::to_string(config_.n_speakers));
  }
  const int id = spk;
  const auto s = broadcast_rows(embedding(spk_embed_, std::span<const int>(&id, 1)), enc.hidden.rows());
  const auto projected = linear(concat_cols(enc.hidden, s), combine_);
  return {Stage::kSpeakerStyleCombined, add_rowwise(projected, style_vec)};
}

template <typename T>
EncoderState<T> Network<T>::combine_speaker_style(const EncoderState<T>& enc, SpeakerId spk, StyleId sty) const {
  check_stage(enc, Stage::kTextOnly, "combine_speaker_style");
  return combine_with_style_vector(enc, spk, style_vector(sty));
}

template <typename T>
Tensor<T> Network<T>::se_block(const Tensor<T>& x) const {
  const auto squeeze = mean_rows(x);
  const auto excite = sigmoid(linear(relu(linear(squeeze, se_fc1_)), se_fc2_));
  return mul_rowwise(x, excite);
}

template <typename T>
Tensor<T> Network<T>::prosody_bottleneck(const EncoderState<T>& combined) const {
  check_stage(combined, Stage::kSpeakerStyleCombined, "prosody_bottleneck");
  auto h = relu(conv1d(combined.hidden, bn_conv1_.w, bn_conv1_.b));
  h = relu(conv1d(h, bn_conv2_.w, bn_conv2_.b));
  return linear(se_block(h), bn_out_);
}

template <typename T>
Tensor<T> Network<T>::aggregation_features(const Tensor<T>& prosody) const {
  if (prosody.rank() != 2 || prosody.dim(1) != kProsodyDim) {
    throw ContractError("aggregate_prosody: prosody must be [P,4], got " + shape_str(prosody.shape()));
  }
  const auto h = relu(conv1d(prosody, agg_conv1_.w, agg_conv1_.b));
  return conv1d(h, agg_conv2_.w, agg_conv2_.b);
}

template <typename T>
EncoderState<T> Network<T>::add_aggregation(const EncoderState<T>& combined, const Tensor<T>& features) const {
  check_stage(combined, Stage::kSpeakerStyleCombined, "aggregate_prosody");
  if (features.shape() != combined.hidden.shape()) {
    throw ContractError("aggregate_prosody: " + std::to_string(features.rows()) + " prosody rows for " +
                        std::to_string(combined.hidden.rows()) + " phones");
  }
  return {Stage::kFullyAggregated, add(combined.hidden, features)};
}

template <typename T>
EncoderState<T> Network<T>::aggregate_prosody(const EncoderState<T>& combined, const Tensor<T>& prosody) const {
  check_stage(combined, Stage::kSpeakerStyleCombined, "aggregate_prosody");
  if (prosody.rank() != 2 || prosody.rows() != combined.hidden.rows()) {
    throw ContractError("aggregate_prosody: prosody " + shape_str(prosody.shape()) + " does not match " +
                        std::to_string(combined.hidden.rows()) + " phones");
  }
  return add_aggregation(combined, aggregation_features(prosody));
}

template <typename T>
Tensor<T> Network<T>::decoder_input(const Tensor<T>& shifted) const {
  auto x = relu(linear(relu(linear(shifted, dec_prenet1_)), dec_prenet2_));
  if (config_.position_encoding) {
    x = add(x, mul_rowwise(sinusoid_positions<T>(shifted.rows(), config_.d_model), dec_pos_alpha_));
  }
  return x;
}

template <typename T>
Tensor<T> Network<T>::decoder_stack(Tensor<T> x, const Tensor<T>& memory, std::vector<float>* alignment) const {
  const T eps = static_cast<T>(1e-5);
  const auto mask = AttentionMask::causal(x.rows());
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    const auto& b = dec_[i];
    x = layer_norm(add(x, attend(x, x, b.self, mask).output), b.n1.gamma, b.n1.beta, eps);
    auto cross = attend(x, memory, b.cross, std::nullopt);
    if (alignment && i + 1 == dec_.size()) {
      alignment->assign(x.rows() * memory.rows(), 0.0f);
      for (const auto& w : cross.weights) {
        for (std::size_t j = 0; j < alignment->size(); ++j) {
          (*alignment)[j] += static_cast<float>(w.data()[j]) / static_cast<float>(cross.weights.size());
        }
      }
    }
    x = layer_norm(add(x, cross.output), b.n2.gamma, b.n2.beta, eps);
    x = layer_norm(add(x, linear(relu(linear(x, b.ff1)), b.ff2)), b.n3.gamma, b.n3.beta, eps);
  }
  return x;
}

template <typename T>
DecoderOutput<T> Network<T>::decoder_heads(const Tensor<T>& hidden, std::vector<float> alignment) const {
  DecoderOutput<T> out;
  out.mel_pre = linear(hidden, mel_head_);
  out.stop_logits = linear(hidden, stop_head_);
  const auto r = conv1d(tanh(conv1d(out.mel_pre, post_conv1_.w, post_conv1_.b)), post_conv2_.w, post_conv2_.b);
  out.mel_post = add(out.mel_pre, r);
  out.alignment = std::move(alignment);
  return out;
}

template <typename T>
DecoderOutput<T> Network<T>::decode_teacher_forced(const EncoderState<T>& aggregated,
                                                   const Tensor<T>& target_mel) const {
  check_stage(aggregated, Stage::kFullyAggregated, "decode");
  if (target_mel.rank() != 2 || target_mel.cols() != config_.n_mels || target_mel.rows() == 0) {
    throw InputError("decode: target mel must be [T>=1, " + std::to_string(config_.n_mels) + "], got " +
                     shape_str(target_mel.shape()));
  }
  const std::size_t frames = target_mel.rows();
  std::vector<Tensor<T>> parts = {Tensor<T>::zeros({1, config_.n_mels})};
  if (frames > 1) parts.push_back(slice_rows(target_mel.detach(), 0, frames - 1));
  const auto shifted = concat_rows(parts);
  std::vector<float> alignment;
  const auto hidden = decoder_stack(decoder_input(shifted), aggregated.hidden, &alignment);
  return decoder_heads(hidden, std::move(alignment));
}

template <typename T>
DecoderOutput<T> Network<T>::decode_autoregressive(const EncoderState<T>& aggregated, std::size_t max_frames) const {
  check_stage(aggregated, Stage::kFullyAggregated, "decode");
  const std::size_t limit = max_frames == 0 ? config_.max_decoder_frames : max_frames;
  const std::size_t d = config_.d_model, phones = aggregated.hidden.rows();
  const T eps = static_cast<T>(1e-5);
  const auto positions = sinusoid_positions<T>(limit, d);

  struct Cache {
    std::vector<Tensor<T>> k, v;
    Tensor<T> mem_k, mem_v;
  };
  std::vector<Cache> caches(dec_.size());
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    caches[i].mem_k = matmul(aggregated.hidden, dec_[i].cross.wk);
    caches[i].mem_v = add_rowwise(matmul(aggregated.hidden, dec_[i].cross.wv), dec_[i].cross.bv);
  }

  std::vector<Tensor<T>> pre_rows, stop_rows;
  std::vector<float> alignment;
  auto prev = Tensor<T>::zeros({1, config_.n_mels});
  bool stopped = false;
  for (std::size_t t = 0; t < limit && !stopped; ++t) {
    auto x = relu(linear(relu(linear(prev, dec_prenet1_)), dec_prenet2_));
    if (config_.position_encoding) x = add(x, mul_rowwise(slice_rows(positions, t, 1), dec_pos_alpha_));
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      const auto& b = dec_[i];
      auto& c = caches[i];
      c.k.push_back(matmul(x, b.self.wk));
      c.v.push_back(add_rowwise(matmul(x, b.self.wv), b.self.bv));
      const auto q = add_rowwise(matmul(x, b.self.wq), b.self.bq);
      auto self = multi_head_attention(q, concat_rows(c.k), concat_rows(c.v), config_.n_heads);
      x = layer_norm(add(x, add_rowwise(matmul(self.output, b.self.wo), b.self.bo)), b.n1.gamma, b.n1.beta, eps);
      const auto cq = add_rowwise(matmul(x, b.cross.wq), b.cross.bq);
      auto cross = multi_head_attention(cq, c.mem_k, c.mem_v, config_.n_heads);
      if (i + 1 == dec_.size()) {
        std::vector<float> row(phones, 0.0f);
        for (const auto& w : cross.weights) {
          for (std::size_t j = 0; j < phones; ++j) {
            row[j] += static_cast<float>(w.data()[j]) / static_cast<float>(cross.weights.size());
          }
        }
        alignment.insert(alignment.end(), row.begin(), row.end());
      }
      x = layer_norm(add(x, add_rowwise(matmul(cross.output, b.cross.wo), b.cross.bo)), b.n2.gamma, b.n2.beta, eps);
      x = layer_norm(add(x, linear(relu(linear(x, b.ff1)), b.ff2)), b.n3.gamma, b.n3.beta, eps);
    }
    auto frame = linear(x, mel_head_);
    const auto stop = linear(x, stop_head_);
    pre_rows.push_back(frame);
    stop_rows.push_back(stop);
    stopped = stop.data()[0] > T(0);  // sigmoid(z) > 0.5
    prev = frame;
  }
  DecoderOutput<T> out;
  out.mel_pre = concat_rows(pre_rows);
  out.stop_logits = concat_rows(stop_rows);
  const auto r = conv1d(tanh(conv1d(out.mel_pre, post_conv1_.w, post_conv1_.b)), post_conv2_.w, post_conv2_.b);
  out.mel_post = add(out.mel_pre, r);
  out.alignment = std::move(alignment);
  out.truncated = !stopped;
  return out;
}

template <typename T>
ForwardResult<T> Network<T>::forward_train(const Example& ex, double alpha, double beta) const {
  if (ex.prosody.size() != ex.phones.size()) {
    throw InputError("forward_train: " + std::to_string(ex.prosody.size()) + " prosody rows for " +
                     std::to_string(ex.phones.size()) + " phones");
  }
  if (ex.frames == 0 || ex.mel.size() != ex.frames * config_.n_mels) {
    throw InputError("forward_train: mel has " + std::to_string(ex.mel.size()) + " values, expected " +
                     std::to_string(ex.frames) + " x " + std::to_string(config_.n_mels));
  }
  std::vector<T> mel(ex.mel.begin(), ex.mel.end());
  const Tensor<T> target_mel({ex.frames, config_.n_mels}, std::move(mel));
  const auto target_pros = prosody_tensor<T>(ex.prosody);

  const auto enc = encode_text(ex.phones);
  const auto combined = combine_speaker_style(enc, ex.spk, ex.sty);
  ForwardResult<T> r;
  r.prosody_pred = prosody_bottleneck(combined);
  const auto& fed = config_.prosody_feed == ProsodyFeed::kPredicted ? r.prosody_pred : target_pros;
  const auto aggregated = aggregate_prosody(combined, fed);
  r.decoded = decode_teacher_forced(aggregated, target_mel);
  r.loss = compute_loss(r.decoded.mel_pre, r.decoded.mel_post, target_mel, r.decoded.stop_logits, r.prosody_pred,
                        target_pros, alpha, beta);
  return r;
}

template class Network<float>;
template class Network<double>;
template struct DecoderOutput<float>;
template struct DecoderOutput<double>;
template void stop_targets<float>(std::size_t, std::vector<float>&, std::vector<float>&);
template void stop_targets<double>(std::size_t, std::vector<double>&, std::vector<double>&);
template LossParts<float> compute_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                       const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, double,
                                       double);
template LossParts<double> compute_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                        const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, double,
                                        double);
template Tensor<float> prosody_tensor<float>(const ProsodySequence&);
template Tensor<double> prosody_tensor<double>(const ProsodySequence&);

}  // namespace pbtts
