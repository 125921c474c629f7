#include "pbtts/transfer_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <thread>

#include "pbtts/error.hpp"
#include "pbtts/extract.hpp"
#include "pbtts/formats.hpp"
#include "pbtts/random.hpp"

namespace pbtts {

Tensor<float> quantize_prosody(const Tensor<float>& prosody) {
  if (prosody.rank() != 2 || prosody.cols() != kProsodyDim) {
    throw DimensionError("prosody must be [P,4], got " + shape_str(prosody.shape()));
  }
  std::vector<float> v(prosody.data().begin(), prosody.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    float x = v[i];
    if (i % kProsodyDim == kVuv) x = std::clamp(x, 0.0f, 1.0f);
    v[i] = round6(x);
  }
  return Tensor<float>(prosody.shape(), std::move(v));
}

namespace {

void check_ids(const Network<float>& net, SpeakerId spk, StyleId sty) {
  const auto& c = net.config();
  if (spk < 0 || static_cast<std::size_t>(spk) >= c.n_speakers) {
    throw InputError("speaker id " + std::to_string(spk) + " outside table of " + std::to_string(c.n_speakers));
  }
  if (sty < 0 || static_cast<std::size_t>(sty) >= c.n_styles) {
    throw InputError("style id " + std::to_string(sty) + " outside table of " + std::to_string(c.n_styles));
  }
}

}  // namespace

SynthesisResult synthesize(const Network<float>& net, const std::vector<PhoneId>& phones, SpeakerId spk, StyleId sty,
                           const SynthesisOptions& options) {
  check_ids(net, spk, sty);
  const auto enc = net.encode_text(phones);
  const auto combined = net.combine_speaker_style(enc, spk, sty);
  SynthesisResult r;
  r.prosody = net.prosody_bottleneck(combined);
  if (options.quantize) r.prosody = quantize_prosody(r.prosody);
  r.decoded = net.decode_autoregressive(net.aggregate_prosody(combined, r.prosody), options.max_frames);
  return r;
}

SynthesisResult synthesize_with_prosody(const Network<float>& net, const std::vector<PhoneId>& phones, SpeakerId spk,
                                        StyleId sty, const Tensor<float>& prosody, const SynthesisOptions& options) {
  check_ids(net, spk, sty);
  if (prosody.rank() != 2 || prosody.rows() != phones.size() || prosody.cols() != kProsodyDim) {
    throw InputError("prosody " + shape_str(prosody.shape()) + " does not match " + std::to_string(phones.size()) +
                     " phones");
  }
  const auto enc = net.encode_text(phones);
  const auto combined = net.combine_speaker_style(enc, spk, sty);
  SynthesisResult r;
  r.prosody = options.quantize ? quantize_prosody(prosody) : prosody;
  r.decoded = net.decode_autoregressive(net.aggregate_prosody(combined, r.prosody), options.max_frames);
  return r;
}

SynthesisResult transfer(const Network<float>& net, const TransferRequest& req, const SynthesisOptions& options) {
  check_ids(net, req.spk_src, req.sty_src);
  check_ids(net, req.spk_tgt, req.sty_src);
  const auto enc = net.encode_text(req.phones);
  const auto style = net.style_vector(req.sty_src);

  const auto source = net.combine_with_style_vector(enc, req.spk_src, style);
  SynthesisResult r;
  r.prosody = net.prosody_bottleneck(source);
  if (options.quantize) r.prosody = quantize_prosody(r.prosody);
  const auto features = net.aggregation_features(r.prosody);

  const auto target = net.combine_with_style_vector(enc, req.spk_tgt, style);
  r.decoded = net.decode_autoregressive(net.add_aggregation(target, features), options.max_frames);
  return r;
}

std::vector<AlignmentSegment> attention_alignment(const std::vector<float>& attention, std::size_t frames,
                                                  std::size_t phones) {
  if (attention.size() != frames * phones) {
    throw DimensionError("attention has " + std::to_string(attention.size()) + " weights, expected " +
                         std::to_string(frames) + " x " + std::to_string(phones));
  }
  if (phones == 0 || frames < phones) {
    throw AlignmentError("cannot align " + std::to_string(phones) + " phones to " + std::to_string(frames) +
                         " frames");
  }
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  auto lp = [&](std::size_t t, std::size_t p) { return std::log(std::max<double>(attention[t * phones + p], 1e-12)); };
  std::vector<double> score(frames * phones, kNeg);
  std::vector<std::uint8_t> advanced(frames * phones, 0);
  score[0] = lp(0, 0);
  for (std::size_t t = 1; t < frames; ++t) {
    const std::size_t hi = std::min(phones - 1, t);
    const std::size_t lo = phones - 1 > frames - 1 - t ? phones - 1 - (frames - 1 - t) : 0;
    for (std::size_t p = lo; p <= hi; ++p) {
      const double stay = score[(t - 1) * phones + p];
      const double move = p > 0 ? score[(t - 1) * phones + p - 1] : kNeg;
      const bool adv = move > stay;
      score[t * phones + p] = (adv ? move : stay) + lp(t, p);
      advanced[t * phones + p] = adv ? 1 : 0;
    }
  }
  std::vector<std::size_t> path(frames);
  std::size_t p = phones - 1;
  for (std::size_t t = frames; t-- > 0;) {
    path[t] = p;
    if (t > 0 && advanced[t * phones + p]) --p;
  }
  std::vector<AlignmentSegment> segs;
  for (std::size_t t = 0; t < frames; ++t) {
    if (segs.empty() || segs.back().phone != static_cast<PhoneId>(path[t])) {
      segs.push_back({static_cast<PhoneId>(path[t]), t, t + 1});
    } else {
      segs.back().end_frame = t + 1;
    }
  }
  return segs;
}

MelSpectrogramData to_mel_data(const Tensor<float>& mel) {
  MelSpectrogramData m;
  m.frames = mel.rows();
  m.n_mels = mel.cols();
  m.values.assign(mel.data().begin(), mel.data().end());
  return m;
}

ProsodySequence extract_output_prosody(const DecoderOutput<float>& decoded, std::size_t phones,
                                       const RenderConfig& render, const NormStats& stats) {
  const auto segs = attention_alignment(decoded.alignment, decoded.frames(), phones);
  const auto frames = invert_rendered_mel(to_mel_data(decoded.mel_post), render);
  const auto raw = aggregate_to_phone(frames, segs, "output");
  ProsodySequence out;
  for (const auto& r : raw) out.push_back(normalize_phone(r, stats));
  return out;
}

// ---------------------------------------------------------------- metrics

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InputError("pearson: length mismatch");
  const std::size_t n = a.size();
  if (n < 3) return std::nullopt;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

bool voiced(const ProsodyVector& p) { return p.vuv >= 0.5f; }

void check_lengths(const ProsodySequence& a, const ProsodySequence& b) {
  if (a.size() != b.size()) {
    throw InputError("prosody sequences differ in length (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
}

}  // namespace

FeatureCorrelation prosody_correlation(const ProsodySequence& pred, const ProsodySequence& ref) {
  check_lengths(pred, ref);
  std::vector<double> la, lb, da, db, ea, eb;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (voiced(pred[i]) && voiced(ref[i])) {
      la.push_back(pred[i].lf0_z);
      lb.push_back(ref[i].lf0_z);
    }
    da.push_back(pred[i].dur_z);
    db.push_back(ref[i].dur_z);
    ea.push_back(pred[i].energy_z);
    eb.push_back(ref[i].energy_z);
  }
  FeatureCorrelation c;
  c.lf0 = pearson(la, lb);
  c.dur = pearson(da, db);
  c.energy = pearson(ea, eb);
  c.n_lf0 = la.size();
  c.n_dur = da.size();
  c.n_energy = ea.size();
  return c;
}

std::optional<double> lf0_rmse(const ProsodySequence& pred, const ProsodySequence& ref) {
  check_lengths(pred, ref);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!voiced(pred[i]) || !voiced(ref[i])) continue;
    const double d = static_cast<double>(pred[i].lf0_z) - ref[i].lf0_z;
    s += d * d;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(s / static_cast<double>(n));
}

ProsodyMetricReport metric_report(const std::vector<ProsodySequence>& pred, const std::vector<ProsodySequence>& ref) {
  if (pred.size() != ref.size()) throw InputError("metric_report: utterance counts differ");
  if (pred.empty()) throw InputError("metric_report: no utterances");
  ProsodyMetricReport r;
  r.n_utterances = pred.size();
  double sl = 0, sd = 0, se = 0, sr = 0;
  for (std::size_t u = 0; u < pred.size(); ++u) {
    const auto c = prosody_correlation(pred[u], ref[u]);
    if (c.lf0) sl += *c.lf0, ++r.n_lf0;
    if (c.dur) sd += *c.dur, ++r.n_dur;
    if (c.energy) se += *c.energy, ++r.n_energy;
    if (const auto e = lf0_rmse(pred[u], ref[u])) sr += *e, ++r.n_rmse;
  }
  auto avg = [](double s, std::size_t n) { return n ? std::optional<double>(s / static_cast<double>(n)) : std::nullopt; };
  r.lf0_corr = avg(sl, r.n_lf0);
  r.dur_corr = avg(sd, r.n_dur);
  r.energy_corr = avg(se, r.n_energy);
  r.lf0_rmse = avg(sr, r.n_rmse);
  return r;
}

std::string report_header() { return "model_name lf0_corr dur_corr energy_corr lf0_rmse"; }

namespace {

std::string metric_str(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

}  // namespace

std::string format_report_row(const std::string& model_name, const ProsodyMetricReport& report) {
  return model_name + " " + metric_str(report.lf0_corr) + " " + metric_str(report.dur_corr) + " " +
         metric_str(report.energy_corr) + " " + metric_str(report.lf0_rmse);
}

std::string format_classification_row(const std::string& model_name, double accuracy_percent, std::size_t n_cases) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " %.1f %zu", accuracy_percent, n_cases);
  return model_name + buf;
}

// ---------------------------------------------------------------- speaker classifier

namespace {

constexpr std::size_t kConvLayers = 6;
constexpr std::size_t kConvChannels[kConvLayers] = {16, 16, 32, 32, 64, 64};

std::size_t conv_stride(std::size_t layer) { return layer % 2 == 1 ? 2 : 1; }

Tensor<float> uniform_tensor(Rng& rng, Shape shape, double limit) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-limit, limit));
  return Tensor<float>(std::move(shape), std::move(v));
}

}  // namespace

std::vector<Tensor<float>*> SpeakerClassifier::tensors() {
  std::vector<Tensor<float>*> out;
  for (auto& t : conv_w) out.push_back(&t);
  for (auto& t : conv_b) out.push_back(&t);
  for (auto* t : {&w_ih, &w_hh, &b_ih, &b_hh, &fc_w, &fc_b}) out.push_back(t);
  return out;
}

SpeakerClassifier init_speaker_classifier(const ClassifierConfig& config) {
  if (config.n_speakers < 2) throw ConfigError("speaker classifier needs at least 2 speakers");
  SpeakerClassifier c;
  c.config = config;
  Rng rng(config.seed);
  std::size_t in = config.n_mels;
  for (std::size_t l = 0; l < kConvLayers; ++l) {
    const std::size_t out = kConvChannels[l];
    c.conv_w.push_back(uniform_tensor(rng, {3, in, out}, std::sqrt(6.0 / static_cast<double>(3 * (in + out)))));
    c.conv_b.push_back(Tensor<float>::zeros({out}));
    in = out;
  }
  const std::size_t h = config.gru_hidden;
  const double g = 1.0 / std::sqrt(static_cast<double>(h));
  c.w_ih = uniform_tensor(rng, {in, 3 * h}, g);
  c.w_hh = uniform_tensor(rng, {h, 3 * h}, g);
  c.b_ih = uniform_tensor(rng, {3 * h}, g);
  c.b_hh = uniform_tensor(rng, {3 * h}, g);
  c.fc_w = uniform_tensor(rng, {h, config.n_speakers}, std::sqrt(6.0 / static_cast<double>(h + config.n_speakers)));
  c.fc_b = Tensor<float>::zeros({config.n_speakers});
  return c;
}

Tensor<float> classifier_logits(const SpeakerClassifier& c, const Tensor<float>& mel) {
  if (mel.rank() != 2 || mel.cols() != c.config.n_mels) {
    throw InputError("classifier expects [frames, " + std::to_string(c.config.n_mels) + "] mel, got " +
                     shape_str(mel.shape()));
  }
  if (mel.rows() < ClassifierConfig::kMinFrames) {
    throw InputError("mel has " + std::to_string(mel.rows()) + " frames; the classifier needs at least " +
                     std::to_string(ClassifierConfig::kMinFrames));
  }
  Tensor<float> x = mel;
  for (std::size_t l = 0; l < kConvLayers; ++l) x = relu(conv1d(x, c.conv_w[l], c.conv_b[l], conv_stride(l)));
  const std::size_t h = c.config.gru_hidden;
  const auto gi = add_rowwise(matmul(x, c.w_ih), c.b_ih);
  auto state = Tensor<float>::zeros({1, h});
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto it = slice_rows(gi, t, 1);
    const auto hh = add_rowwise(matmul(state, c.w_hh), c.b_hh);
    const auto r = sigmoid(add(slice_cols(it, 0, h), slice_cols(hh, 0, h)));
    const auto z = sigmoid(add(slice_cols(it, h, h), slice_cols(hh, h, h)));
    const auto n = tanh(add(slice_cols(it, 2 * h, h), mul(r, slice_cols(hh, 2 * h, h))));
    state = add(n, mul(z, sub(state, n)));
  }
  return add_rowwise(matmul(state, c.fc_w), c.fc_b);
}

SpeakerDecision classify_speaker(const SpeakerClassifier& c, const MelSpectrogramData& mel) {
  const Tensor<float> x({mel.frames, mel.n_mels}, mel.values);
  const auto probs = softmax(classifier_logits(c, x));
  SpeakerDecision d;
  d.distribution.assign(probs.data().begin(), probs.data().end());
  const auto best = std::max_element(d.distribution.begin(), d.distribution.end());
  d.speaker = static_cast<SpeakerId>(best - d.distribution.begin());
  d.probability = *best;
  return d;
}

SpeakerClassifier train_speaker_classifier(const std::vector<LabelledMel>& data, const ClassifierConfig& config) {
  std::vector<std::vector<std::size_t>> by_class(config.n_speakers);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data[i].speaker;
    if (s < 0 || static_cast<std::size_t>(s) >= config.n_speakers) {
      throw InputError("speaker label " + std::to_string(s) + " outside " + std::to_string(config.n_speakers));
    }
    if (data[i].mel->frames >= ClassifierConfig::kMinFrames) by_class[s].push_back(i);
  }
  std::size_t present = 0;
  for (const auto& v : by_class) present += v.empty() ? 0 : 1;
  if (present < 2) throw ConfigError("speaker classifier training data covers fewer than 2 speakers");

  auto c = init_speaker_classifier(config);
  const auto params = c.tensors();
  std::vector<std::vector<float>> m, v;
  for (auto* p : params) {
    p->set_requires_grad(true);
    m.emplace_back(p->numel(), 0.0f);
    v.emplace_back(p->numel(), 0.0f);
  }
  Rng rng(derive_seed(config.seed, 1));
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    {
      Tape<float> tape;
      std::vector<Tensor<float>> losses;
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        std::size_t cls;
        do {
          cls = rng.below(config.n_speakers);
        } while (by_class[cls].empty());
        const auto& pick = data[by_class[cls][rng.below(by_class[cls].size())]];
        const Tensor<float> x({pick.mel->frames, pick.mel->n_mels}, pick.mel->values);
        losses.push_back(softmax_cross_entropy(classifier_logits(c, x), cls));
      }
      auto total = losses[0];
      for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      total = scale(total, 1.0f / static_cast<float>(losses.size()));
      for (auto* p : params) p->zero_grad();
      tape.backward(total);
    }
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!params[k]->has_grad()) continue;
      const auto g = params[k]->grad();
      auto w = params[k]->mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[k][i] = static_cast<float>(b1 * m[k][i] + (1.0 - b1) * g[i]);
        v[k][i] = static_cast<float>(b2 * v[k][i] + (1.0 - b2) * g[i] * g[i]);
        w[i] = static_cast<float>(w[i] - config.learning_rate * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + eps));
      }
    }
  }
  for (auto* p : params) {
    p->zero_grad();
    p->set_requires_grad(false);
  }
  return c;
}

double classification_accuracy(const SpeakerClassifier& c, const std::vector<LabelledMel>& data) {
  if (data.empty()) throw InputError("classification set is empty");
  std::size_t hits = 0;
  for (const auto& d : data) hits += classify_speaker(c, *d.mel).speaker == d.speaker ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------- evaluation

namespace {

ProsodySequence reference_prosody(const Corpus& corpus, const Utterance& u, ReferenceSource source) {
  if (source == ReferenceSource::kOracle) return u.prosody;
  const auto frames = invert_rendered_mel(u.mel, corpus.render);
  const auto raw = aggregate_to_phone(frames, u.alignment, u.id);
  ProsodySequence out;
  for (const auto& r : raw) out.push_back(normalize_phone(r, corpus.stats));
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

EvaluationResult evaluate_transfer(const Network<float>& net, const Corpus& corpus, const SpeakerClassifier& classifier,
                                   const EvaluationOptions& options) {
  const std::size_t texts = std::min(options.max_texts, corpus.test_texts());
  if (texts == 0) throw InputError("test set is empty");
  std::vector<StyleId> styles = options.styles;
  if (styles.empty()) {
    for (std::size_t s = 1; s < corpus.n_styles; ++s) styles.push_back(static_cast<StyleId>(s));
  }

  EvaluationResult result;
  Rng shuffle_rng(options.shuffle_seed);
  for (StyleId s : styles) {
    for (std::size_t k = 0; k < texts; ++k) {
      TransferCase c;
      c.text_index = k;
      c.spk_src = options.spk_src;
      c.spk_tgt = options.spk_tgt;
      c.sty = s;
      result.cases.push_back(c);
    }
  }
  std::vector<StyleId> fed(result.cases.size());
  for (std::size_t i = 0; i < fed.size(); ++i) {
    fed[i] = result.cases[i].sty;
    if (options.shuffle_styles && corpus.n_styles > 1) {
      const auto shift = 1 + shuffle_rng.below(corpus.n_styles - 1);
      fed[i] = static_cast<StyleId>((static_cast<std::size_t>(fed[i]) + shift) % corpus.n_styles);
    }
  }

  std::vector<ProsodySequence> refs(result.cases.size());
  std::vector<bool> ok(result.cases.size(), false);
  parallel_for(result.cases.size(), options.threads, [&](std::size_t i) {
    auto& c = result.cases[i];
    const auto* src = corpus.find_test(c.text_index, c.spk_src, c.sty);
    const auto* tgt_neutral = corpus.find_test(c.text_index, c.spk_tgt, 0);
    if (!src || !tgt_neutral) throw InputError("test set lacks text " + std::to_string(c.text_index));
    const auto out = transfer(net, {c.spk_src, fed[i], c.spk_tgt, src->phones});
    c.truncated = out.decoded.truncated;
    if (out.decoded.frames() >= ClassifierConfig::kMinFrames) {
      c.decision = classify_speaker(classifier, to_mel_data(out.decoded.mel_post));
    } else {
      c.decision.speaker = -1;
    }
    refs[i] = reference_prosody(corpus, *src, options.reference);
    try {
      c.output_prosody = extract_output_prosody(out.decoded, src->phones.size(), corpus.render, corpus.stats);
    } catch (const AlignmentError&) {
      return;
    }
    ok[i] = true;
    for (std::size_t s = 0; s < corpus.n_styles; ++s) {
      const auto* other = corpus.find_test(c.text_index, c.spk_src, static_cast<StyleId>(s));
      c.lf0_corr_by_style.push_back(
          other ? prosody_correlation(c.output_prosody, reference_prosody(corpus, *other, options.reference)).lf0
                : std::nullopt);
    }
    c.lf0_corr_target_neutral =
        prosody_correlation(c.output_prosody, reference_prosody(corpus, *tgt_neutral, options.reference)).lf0;
  });

  std::vector<ProsodySequence> preds, matched;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < result.cases.size(); ++i) {
    hits += result.cases[i].decision.speaker == options.spk_tgt ? 1 : 0;
    if (!ok[i]) {
      preds.push_back(ProsodySequence(refs[i].size(), ProsodyVector{}));
    } else {
      preds.push_back(result.cases[i].output_prosody);
    }
    matched.push_back(refs[i]);
  }
  result.transfer_report = metric_report(preds, matched);
  result.transfer_accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(result.cases.size());

  std::vector<int> synth_hits(texts, 0);
  parallel_for(texts, options.threads, [&](std::size_t k) {
    const auto* u = corpus.find_test(k, options.spk_tgt, 0);
    const auto out = synthesize(net, u->phones, options.spk_tgt, 0);
    if (out.decoded.frames() < ClassifierConfig::kMinFrames) return;
    synth_hits[k] = classify_speaker(classifier, to_mel_data(out.decoded.mel_post)).speaker == options.spk_tgt;
  });
  std::size_t sh = 0;
  for (int h : synth_hits) sh += static_cast<std::size_t>(h);
  result.n_synthesis = texts;
  result.synthesis_accuracy = 100.0 * static_cast<double>(sh) / static_cast<double>(texts);
  return result;
}

std::vector<DirectionalityScore> directionality(const EvaluationResult& result) {
  std::map<StyleId, DirectionalityScore> by_style;
  for (const auto& c : result.cases) {
    auto& d = by_style[c.sty];
    d.sty = c.sty;
    ++d.n_cases;
    const auto own_idx = static_cast<std::size_t>(c.sty);
    if (own_idx >= c.lf0_corr_by_style.size() || !c.lf0_corr_by_style[own_idx]) continue;
    const double own = *c.lf0_corr_by_style[own_idx];
    if (c.lf0_corr_target_neutral && own > *c.lf0_corr_target_neutral) ++d.beats_target_neutral;
    bool all = true;
    for (std::size_t t = 0; t < c.lf0_corr_by_style.size(); ++t) {
      if (t != own_idx && !(c.lf0_corr_by_style[t] && own > *c.lf0_corr_by_style[t])) all = false;
    }
    if (all) ++d.beats_every_style;
  }
  std::vector<DirectionalityScore> out;
  for (const auto& [s, d] : by_style) out.push_back(d);
  return out;
}

std::string format_evaluation(const EvaluationResult& result, const std::optional<EvaluationResult>& control) {
  std::string out = report_header() + "\n";
  out += format_report_row("transfer", result.transfer_report) + "\n";
  if (control) out += format_report_row("shuffled_style_control", control->transfer_report) + "\n";
  out += "\nmodel_name accuracy_percent n_cases\n";
  out += format_classification_row("transfer_as_target", result.transfer_accuracy, result.cases.size()) + "\n";
  out += format_classification_row("synthesis_target", result.synthesis_accuracy, result.n_synthesis) + "\n";
  return out;
}

}  // namespace pbtts
