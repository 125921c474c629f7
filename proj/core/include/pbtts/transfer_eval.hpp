#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pbtts/corpus.hpp"
#include "pbtts/model.hpp"

namespace pbtts {

struct TransferRequest {
  SpeakerId spk_src = 0;
  StyleId sty_src = 0;
  SpeakerId spk_tgt = 0;
  std::vector<PhoneId> phones;
};

struct SynthesisResult {
  DecoderOutput<float> decoded;
  Tensor<float> prosody;  // [P,4] fed to the aggregation CNN
};

/// Rounds to the 6-decimal text representation with vuv clamped to [0,1], so
/// a dumped prosody file reproduces the same tensor when read back.
Tensor<float> quantize_prosody(const Tensor<float>& prosody);

struct SynthesisOptions {
  std::size_t max_frames = 0;  // 0 = model limit
  bool quantize = false;
};

/// encode -> combine -> bottleneck -> aggregate -> autoregressive decode.
SynthesisResult synthesize(const Network<float>& net, const std::vector<PhoneId>& phones, SpeakerId spk, StyleId sty,
                           const SynthesisOptions& options = {});

/// Decodes with caller-supplied prosody in place of the bottleneck prediction.
SynthesisResult synthesize_with_prosody(const Network<float>& net, const std::vector<PhoneId>& phones, SpeakerId spk,
                                        StyleId sty, const Tensor<float>& prosody,
                                        const SynthesisOptions& options = {});

/// Cross-speaker transfer: the source speaker's predicted prosody, passed
/// through the aggregation CNN, is added to the target speaker's combined
/// encoder state. One text encoding and one style vector serve both paths.
SynthesisResult transfer(const Network<float>& net, const TransferRequest& req, const SynthesisOptions& options = {});

/// Monotonic phone alignment through a [frames x phones] attention matrix:
/// every phone receives at least one frame. Needs frames >= phones.
std::vector<AlignmentSegment> attention_alignment(const std::vector<float>& attention, std::size_t frames,
                                                  std::size_t phones);

/// Prosody read back from a decoded mel through the renderer inverse and the
/// attention alignment, normalized with `stats`.
ProsodySequence extract_output_prosody(const DecoderOutput<float>& decoded, std::size_t phones,
                                       const RenderConfig& render, const NormStats& stats);

// ---------------------------------------------------------------- metrics

/// Pearson r; absent for fewer than 3 pairs or a constant side.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

struct FeatureCorrelation {
  std::optional<double> lf0, dur, energy;
  std::size_t n_lf0 = 0, n_dur = 0, n_energy = 0;
};

/// lf0 over phones voiced in both sequences (vuv >= 0.5); dur and energy over
/// all phones.
FeatureCorrelation prosody_correlation(const ProsodySequence& pred, const ProsodySequence& ref);

/// RMSE of lf0_z over mutually voiced phones; absent when there are none.
std::optional<double> lf0_rmse(const ProsodySequence& pred, const ProsodySequence& ref);

struct ProsodyMetricReport {
  std::optional<double> lf0_corr, dur_corr, energy_corr, lf0_rmse;
  std::size_t n_utterances = 0;
  std::size_t n_lf0 = 0, n_dur = 0, n_energy = 0, n_rmse = 0;  // utterances with a defined value
};

/// Per-utterance metrics, macro-averaged in input order.
ProsodyMetricReport metric_report(const std::vector<ProsodySequence>& pred, const std::vector<ProsodySequence>& ref);

/// "model_name lf0_corr dur_corr energy_corr lf0_rmse" with "NA" for absent.
std::string report_header();
std::string format_report_row(const std::string& model_name, const ProsodyMetricReport& report);
std::string format_classification_row(const std::string& model_name, double accuracy_percent, std::size_t n_cases);

// ---------------------------------------------------------------- speaker classifier

struct ClassifierConfig {
  std::size_t n_mels = 20;
  std::size_t n_speakers = 2;
  std::size_t gru_hidden = 32;
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  double learning_rate = 3e-3;
  std::uint64_t seed = 5;

  static constexpr std::size_t kMinFrames = 8;
};

struct SpeakerClassifier {
  ClassifierConfig config;
  std::vector<Tensor<float>> conv_w, conv_b;  // 6 layers
  Tensor<float> w_ih, w_hh, b_ih, b_hh;     // GRU, gates r|z|n
  Tensor<float> fc_w, fc_b;

  std::vector<Tensor<float>*> tensors();
};

SpeakerClassifier init_speaker_classifier(const ClassifierConfig& config);

/// Class logits [1, n_speakers] of a [frames, n_mels] mel.
Tensor<float> classifier_logits(const SpeakerClassifier& c, const Tensor<float>& mel);

struct SpeakerDecision {
  SpeakerId speaker = 0;
  float probability = 0.0f;
  std::vector<float> distribution;
};

SpeakerDecision classify_speaker(const SpeakerClassifier& c, const MelSpectrogramData& mel);

struct LabelledMel {
  const MelSpectrogramData* mel = nullptr;
  SpeakerId speaker = 0;
};

SpeakerClassifier train_speaker_classifier(const std::vector<LabelledMel>& data, const ClassifierConfig& config);

double classification_accuracy(const SpeakerClassifier& c, const std::vector<LabelledMel>& data);

MelSpectrogramData to_mel_data(const Tensor<float>& mel);

// ---------------------------------------------------------------- evaluation

enum class ReferenceSource { kOracle, kExtracted };

struct TransferCase {
  std::size_t text_index = 0;
  SpeakerId spk_src = 0;
  StyleId sty = 0;
  SpeakerId spk_tgt = 0;
  SpeakerDecision decision;
  ProsodySequence output_prosody;
  /// corr(lf0) of the output against every style of the source speaker and
  /// against the target speaker's neutral reference.
  std::vector<std::optional<double>> lf0_corr_by_style;
  std::optional<double> lf0_corr_target_neutral;
  bool truncated = false;
};

struct EvaluationOptions {
  SpeakerId spk_src = 0;
  SpeakerId spk_tgt = 1;
  /// Expressive styles to transfer; empty = every style except 0.
  std::vector<StyleId> styles;
  std::size_t max_texts = 50;
  ReferenceSource reference = ReferenceSource::kOracle;
  /// Replaces each case's style by a seeded random other style (control run).
  bool shuffle_styles = false;
  std::uint64_t shuffle_seed = 99;
  std::size_t threads = 1;
};

struct EvaluationResult {
  ProsodyMetricReport transfer_report;
  std::vector<TransferCase> cases;
  double transfer_accuracy = 0.0;    // % of transferred outputs classified as spk_tgt
  double synthesis_accuracy = 0.0;   // % of plain spk_tgt syntheses classified as spk_tgt
  std::size_t n_synthesis = 0;
};

/// Runs transfer over the test split and scores prosody against the source
/// speaker's references and timbre with the classifier.
EvaluationResult evaluate_transfer(const Network<float>& net, const Corpus& corpus, const SpeakerClassifier& classifier,
                                   const EvaluationOptions& options);

struct DirectionalityScore {
  StyleId sty = 0;
  std::size_t n_cases = 0;
  std::size_t beats_target_neutral = 0;
  std::size_t beats_every_style = 0;
};

/// Per expressive style: how often the output's lf0 tracks its own style
/// better than the target's neutral reference and better than every other
/// style. Undefined correlations count as losses.
std::vector<DirectionalityScore> directionality(const EvaluationResult& result);

/// Full text report: header, transfer row, optional control row,
/// classification block.
std::string format_evaluation(const EvaluationResult& result, const std::optional<EvaluationResult>& control);

}  // namespace pbtts
