#pragma once

#include <atomic>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbtts/config.hpp"
#include "pbtts/ops.hpp"
#include "pbtts/prosody.hpp"

namespace pbtts {

/// Parameter groups in canonical order; every tensor belongs to one.
const std::vector<std::string>& parameter_groups();

template <typename T>
struct Param {
  std::string name;
  std::string group;
  Tensor<T> tensor;
};

/// All network parameters, kept sorted by name.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;

  void add(std::string name, std::string group, Tensor<T> tensor);
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  bool contains(const std::string& name) const;
  const std::string& group_of(const std::string& name) const;

  std::vector<Param<T>>& entries() { return entries_; }
  const std::vector<Param<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  /// Deep copy (new storage).
  ParamStore clone() const;
  void set_requires_grad(bool flag);
  void zero_grad();

 private:
  std::vector<Param<T>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Fresh parameters; deterministic in config.init_seed.
ParamStore<float> init_params(const ModelConfig& config);

/// Element-wise cast (used by the 64-bit gradient-check path).
template <typename To, typename From>
ParamStore<To> cast_params(const ParamStore<From>& p);

/// True when every tensor matches in name, group, shape and bits.
bool params_identical(const ParamStore<float>& a, const ParamStore<float>& b);

enum class Stage { kTextOnly, kSpeakerStyleCombined, kFullyAggregated };

const char* stage_name(Stage s);

template <typename T>
struct EncoderState {
  Stage stage = Stage::kTextOnly;
  Tensor<T> hidden;  // [P, d_model]
};

template <typename T>
struct DecoderOutput {
  Tensor<T> mel_pre;      // [T, n_mels], before the post-net
  Tensor<T> mel_post;     // [T, n_mels]
  Tensor<T> stop_logits;  // [T, 1]
  /// Last decoder block's cross-attention, averaged over heads, [T, P].
  std::vector<float> alignment;
  bool truncated = false;

  std::size_t frames() const { return mel_post.rows(); }
  std::vector<float> stop_probs() const;
};

template <typename T>
struct LossParts {
  Tensor<T> l_spec, l_stop, l_prosody, total;
};

/// Weighted spectrogram, stop and prosody losses; shapes must agree pairwise.
template <typename T>
LossParts<T> compute_loss(const Tensor<T>& mel_pre, const Tensor<T>& mel_post, const Tensor<T>& target_mel,
                          const Tensor<T>& stop_logits, const Tensor<T>& prosody_pred,
                          const Tensor<T>& prosody_target, double alpha, double beta);

/// Stop labels (0 ... 0 1) and their weights (positive weighted by T-1).
template <typename T>
void stop_targets(std::size_t frames, std::vector<T>& labels, std::vector<T>& weights);

/// One training example in model-ready form.
struct Example {
  std::vector<PhoneId> phones;
  SpeakerId spk = 0;
  StyleId sty = 0;
  std::vector<float> mel;  // [frames * n_mels]
  std::size_t frames = 0;
  ProsodySequence prosody;
};

template <typename T>
struct ForwardResult {
  LossParts<T> loss;
  Tensor<T> prosody_pred;
  DecoderOutput<T> decoded;
};

/// The network of encoder, speaker/style conditioning, prosody bottleneck,
/// prosody aggregation and autoregressive decoder. Holds handles to the
/// parameter tensors; the store must outlive it.
template <typename T>
class Network {
 public:
  Network(const ModelConfig& config, const ParamStore<T>& params);

  const ModelConfig& config() const { return config_; }

  EncoderState<T> encode_text(std::span<const PhoneId> phones) const;

  /// tanh(W_s e_sty + b_s), [1, d_model].
  Tensor<T> style_vector(StyleId sty) const;
  EncoderState<T> combine_speaker_style(const EncoderState<T>& enc, SpeakerId spk, StyleId sty) const;
  EncoderState<T> combine_with_style_vector(const EncoderState<T>& enc, SpeakerId spk,
                                            const Tensor<T>& style_vec) const;

  Tensor<T> se_block(const Tensor<T>& x) const;
  Tensor<T> prosody_bottleneck(const EncoderState<T>& combined) const;

  /// The aggregation CNN alone: [P,4] -> [P, d_model].
  Tensor<T> aggregation_features(const Tensor<T>& prosody) const;
  EncoderState<T> add_aggregation(const EncoderState<T>& combined, const Tensor<T>& features) const;
  EncoderState<T> aggregate_prosody(const EncoderState<T>& combined, const Tensor<T>& prosody) const;

  DecoderOutput<T> decode_teacher_forced(const EncoderState<T>& aggregated, const Tensor<T>& target_mel) const;
  /// Emits frames until sigmoid(stop) > 0.5 or max_frames (0 = config limit).
  DecoderOutput<T> decode_autoregressive(const EncoderState<T>& aggregated, std::size_t max_frames = 0) const;

  ForwardResult<T> forward_train(const Example& ex, double alpha, double beta) const;

  std::size_t encode_calls() const { return encode_calls_.load(); }
  void reset_encode_calls() { encode_calls_ = 0; }

 private:
  struct Attn {
    Tensor<T> wq, bq, wk, wv, bv, wo, bo;
  };
  struct Norm {
    Tensor<T> gamma, beta;
  };
  struct Linear {
    Tensor<T> w, b;
  };
  struct Conv {
    Tensor<T> w, b;
  };
  struct EncBlock {
    Attn self;
    Norm n1;
    Linear ff1, ff2;
    Norm n2;
  };
  struct DecBlock {
    Attn self;
    Norm n1;
    Attn cross;
    Norm n2;
    Linear ff1, ff2;
    Norm n3;
  };

  Tensor<T> linear(const Tensor<T>& x, const Linear& l) const;
  AttentionOutput<T> attend(const Tensor<T>& q_in, const Tensor<T>& kv_in, const Attn& a,
                            const std::optional<AttentionMask>& mask) const;
  Tensor<T> decoder_input(const Tensor<T>& shifted) const;
  /// Runs the decoder stack on already-embedded inputs.
  Tensor<T> decoder_stack(Tensor<T> x, const Tensor<T>& memory, std::vector<float>* alignment) const;
  DecoderOutput<T> decoder_heads(const Tensor<T>& hidden, std::vector<float> alignment) const;
  void check_stage(const EncoderState<T>& s, Stage expected, const char* op) const;

  ModelConfig config_;
  Tensor<T> phone_embed_;
  Linear enc_prenet_;
  std::vector<EncBlock> enc_;
  Tensor<T> spk_embed_, sty_embed_;
  Linear combine_, style_proj_;
  Conv bn_conv1_, bn_conv2_;
  Linear se_fc1_, se_fc2_, bn_out_;
  Conv agg_conv1_, agg_conv2_;
  Linear dec_prenet1_, dec_prenet2_;
  Tensor<T> dec_pos_alpha_;
  std::vector<DecBlock> dec_;
  Linear mel_head_, stop_head_;
  Conv post_conv1_, post_conv2_;
  mutable std::atomic<std::size_t> encode_calls_{0};
};

/// Prosody sequence to a [P,4] tensor and back.
template <typename T>
Tensor<T> prosody_tensor(const ProsodySequence& p);
ProsodySequence prosody_from_tensor(const Tensor<float>& t);

}  // namespace pbtts
