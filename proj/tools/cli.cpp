#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <deque>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "pbtts/checkpoint.hpp"
#include "pbtts/config.hpp"
#include "pbtts/corpus.hpp"
#include "pbtts/error.hpp"
#include "pbtts/extract.hpp"
#include "pbtts/formats.hpp"
#include "pbtts/model_check.hpp"
#include "pbtts/trainer.hpp"
#include "pbtts/transfer_eval.hpp"

namespace pbtts::cli {

namespace fs = std::filesystem;

namespace {

/// Context frame in an error chain.
class Context : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename F>
auto with_context(const std::string& what, F&& f) {
  try {
    return f();
  } catch (...) {
    std::throw_with_nested(Context(what));
  }
}

const ConfigKey& config_key(const std::string& section, const std::string& key) {
  for (const auto& k : config_keys()) {
    if (k.section == section && k.key == key) return k;
  }
  throw ContractError("no config key " + section + "." + key);
}

/// A flag backed by a config key: help text and default come from the table,
/// and the value only overrides the config file when given.
struct ConfigFlag {
  const ConfigKey* key = nullptr;
  std::string value;
  CLI::Option* option = nullptr;

  void apply(Config& cfg) const {
    if (option->count() == 0) return;
    try {
      key->set(cfg, value, 0);
    } catch (const Error& e) {
      throw ConfigError(option->get_name() + ": " + e.what());
    }
  }
};

class Flags {
 public:
  ConfigFlag& add(CLI::App* app, const std::string& name, const std::string& section, const std::string& key) {
    auto& f = flags_.emplace_back();
    f.key = &config_key(section, key);
    f.option = app->add_option(name, f.value, f.key->help + " [" + section + "] " + key)
                   ->default_str(f.key->get(Config{}));
    return f;
  }
  void apply(Config& cfg) const {
    for (const auto& f : flags_) f.apply(cfg);
  }

 private:
  std::deque<ConfigFlag> flags_;
};

Config load_config(const std::string& path) {
  if (path.empty()) return Config{};
  return with_context("reading config " + path, [&] { return parse_config(path); });
}

PhoneInventory inventory_for(const std::string& corpus_dir) {
  if (corpus_dir.empty()) return PhoneInventory::standard();
  return with_context("reading inventory of " + corpus_dir, [&] { return read_corpus(corpus_dir).inventory; });
}

Checkpoint load_ckpt(const std::string& path) {
  return with_context("loading checkpoint " + path, [&] { return load_checkpoint(path); });
}

void check_corpus_fits(const ModelConfig& m, const Corpus& c) {
  if (m.n_phones != c.inventory.size()) {
    throw ConfigError("model.n_phones = " + std::to_string(m.n_phones) + " but the corpus inventory has " +
                      std::to_string(c.inventory.size()) + " phones");
  }
  if (m.n_speakers < c.n_speakers) {
    throw ConfigError("model.n_speakers = " + std::to_string(m.n_speakers) + " but the corpus has " +
                      std::to_string(c.n_speakers) + " speakers");
  }
  if (m.n_styles < c.n_styles) {
    throw ConfigError("model.n_styles = " + std::to_string(m.n_styles) + " but the corpus has " +
                      std::to_string(c.n_styles) + " styles");
  }
  if (m.n_mels != c.render.n_mels) {
    throw ConfigError("model.n_mels = " + std::to_string(m.n_mels) + " but the corpus mels have " +
                      std::to_string(c.render.n_mels) + " bands");
  }
}

std::vector<std::string> split_groups(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Writes a directory under a temporary name, then renames it into place.
void write_dir_atomic(const fs::path& out, bool overwrite, const std::function<void(const fs::path&)>& fill) {
  if (fs::exists(out) && !fs::is_empty(out) && !overwrite) {
    throw IoError(out.string() + " exists and is not empty (pass --overwrite to replace it)");
  }
  const fs::path tmp = out.string() + ".tmp" + std::to_string(::getpid());
  fs::remove_all(tmp);
  try {
    fill(tmp);
    if (fs::exists(out)) fs::remove_all(out);
    fs::rename(tmp, out);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

void write_mel(const std::string& path, const Tensor<float>& mel) {
  write_bytes_atomic(path, encode_mel(to_mel_data(mel)));
}

void print_synthesis(std::ostream& out, const SynthesisResult& r) {
  out << "frames " << r.decoded.frames() << (r.decoded.truncated ? " (truncated at max frames)" : "") << "\n";
}

int classify(const std::exception& e);

int classify_nested(const std::exception& e) {
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    return classify(inner);
  } catch (...) {
    return kInternalError;
  }
  return -1;
}

int classify(const std::exception& e) {
  const int inner = classify_nested(e);
  if (inner >= 0) return inner;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const IntegrityError*>(&e) || dynamic_cast<const VersionError*>(&e)) {
    return kUserError;
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kUserError;
  return kInternalError;
}

void print_chain(std::ostream& err, const std::exception& e, int depth) {
  err << (depth == 0 ? "error: " : std::string(2 * depth, ' ') + "caused by: ") << e.what() << "\n";
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    print_chain(err, inner, depth + 1);
  } catch (...) {
  }
}

std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prosody-bottleneck cross-speaker style transfer TTS toolkit", "pbtts"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  Flags flags;
  std::function<void()> action;

  // gen-corpus
  std::string config_path, out_path, corpus_dir, ckpt_path;
  bool overwrite = false;
  {
    auto* sub = app.add_subcommand("gen-corpus", "Generate the seeded synthetic corpus");
    sub->add_option("--config", config_path, "Config file ([corpus] section)")->check(CLI::ExistingFile);
    sub->add_option("--out", out_path, "Output corpus directory")->required();
    flags.add(sub, "--seed", "corpus", "seed");
    flags.add(sub, "--utts-per-cell", "corpus", "utts_per_cell");
    flags.add(sub, "--with-audio", "corpus", "with_audio");
    sub->add_flag("--overwrite", overwrite, "Replace a non-empty output directory");
    sub->callback([&] {
      action = [&] {
        auto cfg = load_config(config_path);
        flags.apply(cfg);
        const auto corpus = generate_corpus(cfg.corpus);
        write_dir_atomic(out_path, overwrite, [&](const fs::path& dir) { write_corpus(corpus, dir); });
        std::size_t test = 0;
        for (const auto& u : corpus.utterances) test += u.test ? 1 : 0;
        out << "wrote " << corpus.utterances.size() << " utterances (" << corpus.utterances.size() - test
            << " train, " << test << " test) to " << out_path << "\n";
      };
    });
  }

  // extract-prosody
  std::string audio_dir, align_dir;
  {
    auto* sub = app.add_subcommand("extract-prosody", "Phone-level prosody from waveforms and alignments");
    sub->add_option("--audio-dir", audio_dir, "Directory of <utt>.wav files")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--align-dir", align_dir, "Directory of <utt>.align files")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", out_path, "Output directory for <utt>.pros and norm.txt")->required();
    sub->add_option("--corpus", corpus_dir, "Corpus directory whose meta.txt supplies the phone inventory")
        ->default_str("standard inventory");
    sub->add_flag("--overwrite", overwrite, "Replace a non-empty output directory");
    sub->callback([&] {
      action = [&] {
        const auto inv = inventory_for(corpus_dir);
        std::vector<fs::path> aligns;
        for (const auto& e : fs::directory_iterator(align_dir)) {
          if (e.path().extension() == ".align") aligns.push_back(e.path());
        }
        std::sort(aligns.begin(), aligns.end());
        if (aligns.empty()) throw InputError("no .align files in " + align_dir);
        std::vector<AlignmentFile> files;
        std::vector<std::vector<RawPhoneFeatures>> raw;
        for (const auto& a : aligns) {
          with_context("extracting " + a.stem().string(), [&] {
            auto align = parse_alignment(read_text(a), inv);
            const auto wav = decode_wav(read_bytes(fs::path(audio_dir) / (a.stem().string() + ".wav")));
            PitchConfig pc;
            pc.sample_rate = wav.sample_rate;
            const auto frames = extract_frame_features(wav.samples, pc);
            validate_alignment(align.segments, frames.frames(), align.utt_id);
            raw.push_back(aggregate_to_phone(frames, align.segments, align.utt_id));
            files.push_back(std::move(align));
          });
        }
        const auto norm = normalize_global(raw);
        write_dir_atomic(out_path, overwrite, [&](const fs::path& dir) {
          fs::create_directories(dir);
          for (std::size_t i = 0; i < files.size(); ++i) {
            std::vector<PhoneId> phones;
            for (const auto& s : files[i].segments) phones.push_back(s.phone);
            write_text_atomic(dir / (aligns[i].stem().string() + ".pros"),
                              format_prosody({files[i].utt_id, true, phones, norm.utterances[i]}, inv));
          }
          write_text_atomic(dir / "norm.txt", format_norm_stats(norm.stats));
        });
        out << "extracted prosody for " << files.size() << " utterances to " << out_path << "\n";
      };
    });
  }

  // train / refine
  std::string resume_path, freeze, loss_curve_path, strategy = "encoder_only";
  bool has_freeze = false;
  auto add_train_flags = [&](CLI::App* sub) {
    flags.add(sub, "--steps", "train", "max_steps");
    flags.add(sub, "--seed", "train", "seed");
    flags.add(sub, "--batch-size", "train", "batch_size");
    flags.add(sub, "--lr-scale", "train", "lr_scale");
    flags.add(sub, "--alpha", "train", "alpha");
    flags.add(sub, "--beta", "train", "beta");
    sub->add_option("--loss-curve", loss_curve_path, "Write the per-step loss curve as CSV");
  };
  auto report_curve = [&](const std::vector<LossRecord>& curve) {
    if (!loss_curve_path.empty()) write_text_atomic(loss_curve_path, format_loss_curve(curve));
    if (!curve.empty()) {
      char line[160];
      std::snprintf(line, sizeof line, "step %zu: total %.6f (spec %.6f, stop %.6f, prosody %.6f)\n",
                    curve.back().step, curve.back().total, curve.back().l_spec, curve.back().l_stop,
                    curve.back().l_prosody);
      out << line;
    }
  };
  {
    auto* sub = app.add_subcommand("train", "Train a model on a corpus directory");
    sub->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
    sub->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", out_path, "Output checkpoint")->required();
    sub->add_option("--resume", resume_path, "Continue from this checkpoint (same [model])")->check(CLI::ExistingFile);
    auto* fr = sub->add_option("--freeze", freeze, "Comma-separated parameter groups to freeze")
                   ->default_str(config_key("train", "frozen_groups").get(Config{}));
    add_train_flags(sub);
    sub->callback([&, fr] {
      has_freeze = fr->count() > 0;
      action = [&] {
        auto cfg = load_config(config_path);
        flags.apply(cfg);
        if (has_freeze) {
          cfg.train.frozen_groups = split_groups(freeze);
          cfg.train.validate();
        }
        const auto corpus = with_context("reading corpus " + corpus_dir, [&] { return read_corpus(corpus_dir); });
        check_corpus_fits(cfg.model, corpus);
        ParamStore<float> params;
        OptimizerState opt;
        if (!resume_path.empty()) {
          auto ck = load_ckpt(resume_path);
          check_resume_compatible(ck, cfg.model);
          params = std::move(ck.params);
          opt = std::move(ck.optimizer);
        } else {
          params = init_params(cfg.model);
        }
        auto r = train(make_examples(corpus, false), cfg.model, cfg.train, std::move(params), std::move(opt));
        save_checkpoint(out_path, {cfg.model, cfg.train, corpus.stats, std::move(r.params), std::move(r.optimizer)});
        report_curve(r.curve);
        out << "saved " << out_path << "\n";
      };
    });
  }
  {
    auto* sub = app.add_subcommand("refine", "Adapt a pretrained checkpoint to a new corpus with frozen groups");
    sub->add_option("--ckpt", ckpt_path, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--corpus", corpus_dir, "Corpus of the new speakers")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--out", out_path, "Output checkpoint")->required();
    sub->add_option("--config", config_path, "Config file for [train] (default: the checkpoint's)")
        ->check(CLI::ExistingFile);
    sub->add_option("--strategy", strategy, "full | encoder_only | encoder_plus_cross_attention")
        ->capture_default_str();
    auto* fr = sub->add_option("--freeze", freeze, "Comma-separated groups to freeze; overrides --strategy");
    add_train_flags(sub);
    sub->callback([&, fr] {
      has_freeze = fr->count() > 0;
      action = [&] {
        const auto pre = load_ckpt(ckpt_path);
        Config cfg{pre.model, pre.train, {}};
        if (!config_path.empty()) cfg.train = load_config(config_path).train;
        flags.apply(cfg);
        const auto strat = parse_refine_strategy(strategy);
        const auto corpus = with_context("reading corpus " + corpus_dir, [&] { return read_corpus(corpus_dir); });
        check_corpus_fits(pre.model, corpus);
        TrainResult r;
        if (has_freeze) {
          cfg.train.frozen_groups = split_groups(freeze);
          cfg.train.validate();
          r = train(make_examples(corpus, false), pre.model, cfg.train, pre.params.clone());
        } else {
          r = refine(make_examples(corpus, false), pre.model, cfg.train, pre.params, strat);
          cfg.train.frozen_groups = frozen_groups_for(strat);
        }
        const auto before = evaluate_loss(Network<float>(pre.model, pre.params), make_examples(corpus, true),
                                          cfg.train.alpha, cfg.train.beta);
        const auto after = evaluate_loss(Network<float>(pre.model, r.params), make_examples(corpus, true),
                                         cfg.train.alpha, cfg.train.beta);
        save_checkpoint(out_path, {pre.model, cfg.train, corpus.stats, std::move(r.params), std::move(r.optimizer)});
        report_curve(r.curve);
        char line[128];
        std::snprintf(line, sizeof line, "test loss %.6f -> %.6f\n", before.total, after.total);
        out << line << "saved " << out_path << "\n";
      };
    });
  }

  // synth / transfer / control
  std::string phones_text, prosody_path, dump_path;
  int spk = 0, sty = 0, spk_src = 0, sty_src = 0, spk_tgt = 0;
  std::size_t max_frames = 0;
  auto add_decode_flags = [&](CLI::App* sub) {
    sub->add_option("--ckpt", ckpt_path, "Checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--phones", phones_text, "Whitespace-separated phone symbols")->required();
    sub->add_option("--out", out_path, "Output .mel file")->required();
    sub->add_option("--corpus", corpus_dir, "Corpus directory whose meta.txt supplies the phone inventory")
        ->default_str("standard inventory");
    sub->add_option("--max-frames", max_frames, "Decoder frame limit")
        ->default_str(config_key("model", "max_decoder_frames").get(Config{}));
  };
  {
    auto* sub = app.add_subcommand("synth", "Synthesize with one speaker and style");
    add_decode_flags(sub);
    sub->add_option("--spk", spk, "Speaker id")->required();
    sub->add_option("--sty", sty, "Style id")->required();
    sub->callback([&] {
      action = [&] {
        const auto ck = load_ckpt(ckpt_path);
        const auto phones = inventory_for(corpus_dir).parse_sequence(phones_text);
        const Network<float> net(ck.model, ck.params);
        const auto r = synthesize(net, phones, spk, sty, {max_frames, true});
        write_mel(out_path, r.decoded.mel_post);
        print_synthesis(out, r);
      };
    });
  }
  {
    auto* sub = app.add_subcommand("transfer", "Cross-speaker style transfer");
    add_decode_flags(sub);
    sub->add_option("--spk-src", spk_src, "Source speaker id")->required();
    sub->add_option("--sty-src", sty_src, "Source style id")->required();
    sub->add_option("--spk-tgt", spk_tgt, "Target speaker id")->required();
    sub->add_option("--dump-prosody", dump_path, "Write the fed phone prosody as a .pros file");
    sub->callback([&] {
      action = [&] {
        const auto ck = load_ckpt(ckpt_path);
        const auto inv = inventory_for(corpus_dir);
        const auto phones = inv.parse_sequence(phones_text);
        const Network<float> net(ck.model, ck.params);
        const auto r = transfer(net, {spk_src, sty_src, spk_tgt, phones}, {max_frames, true});
        std::string dump;
        if (!dump_path.empty()) {
          ProsodySequence values;
          for (std::size_t i = 0; i < phones.size(); ++i) {
            const auto row = r.prosody.data().subspan(i * kProsodyDim, kProsodyDim);
            values.push_back({row[0], row[1], row[2], row[3]});
          }
          dump = format_prosody({"transfer", true, phones, values}, inv);
        }
        write_mel(out_path, r.decoded.mel_post);
        if (!dump_path.empty()) write_text_atomic(dump_path, dump);
        print_synthesis(out, r);
      };
    });
  }
  {
    auto* sub = app.add_subcommand("control", "Synthesize with a user-edited phone prosody file");
    add_decode_flags(sub);
    sub->add_option("--spk", spk, "Speaker id")->required();
    sub->add_option("--sty", sty, "Style id")->required();
    sub->add_option("--prosody", prosody_path, ".pros file with one row per phone")->required()->check(CLI::ExistingFile);
    sub->callback([&] {
      action = [&] {
        const auto ck = load_ckpt(ckpt_path);
        const auto inv = inventory_for(corpus_dir);
        const auto phones = inv.parse_sequence(phones_text);
        const auto pros = with_context("reading " + prosody_path, [&] { return parse_prosody(read_text(prosody_path), inv); });
        if (!pros.normalized) throw InputError(prosody_path + ": control needs normalized prosody (norm=global)");
        if (pros.phones != phones) throw InputError(prosody_path + ": phone sequence differs from --phones");
        std::vector<float> v;
        for (const auto& p : pros.values) v.insert(v.end(), {p.lf0_z, p.vuv, p.dur_z, p.energy_z});
        const Network<float> net(ck.model, ck.params);
        const auto r = synthesize_with_prosody(net, phones, spk, sty, Tensor<float>({phones.size(), kProsodyDim}, v),
                                               {max_frames, true});
        write_mel(out_path, r.decoded.mel_post);
        print_synthesis(out, r);
      };
    });
  }

  // evaluate
  std::string test_dir, report_path, reference = "oracle";
  std::size_t threads = default_threads();
  SpeakerId eval_src = 0, eval_tgt = 1;
  bool no_control = false;
  std::size_t max_texts = 50;
  std::uint64_t eval_seed = ClassifierConfig{}.seed;
  {
    auto* sub = app.add_subcommand("evaluate", "Transfer metrics and speaker classification on a test set");
    sub->add_option("--ckpt", ckpt_path, "Checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--test-set", test_dir, "Corpus directory (classifier trains on its train split)")
        ->required()
        ->check(CLI::ExistingDirectory);
    sub->add_option("--report", report_path, "Output report file")->required();
    sub->add_option("--spk-src", eval_src, "Source speaker")->capture_default_str();
    sub->add_option("--spk-tgt", eval_tgt, "Target speaker")->capture_default_str();
    sub->add_option("--max-texts", max_texts, "Test texts to use")->capture_default_str();
    sub->add_option("--reference", reference, "oracle | extracted")->capture_default_str();
    sub->add_option("--seed", eval_seed, "Classifier seed")->capture_default_str();
    sub->add_option("--threads", threads, "Worker threads")->capture_default_str();
    sub->add_flag("--no-control", no_control, "Skip the shuffled-style control run");
    sub->callback([&] {
      action = [&] {
        const auto ck = load_ckpt(ckpt_path);
        const auto corpus = with_context("reading corpus " + test_dir, [&] { return read_corpus(test_dir); });
        check_corpus_fits(ck.model, corpus);
        if (reference != "oracle" && reference != "extracted") {
          throw ConfigError("--reference must be oracle or extracted, got '" + reference + "'");
        }
        ClassifierConfig cc;
        cc.n_mels = corpus.render.n_mels;
        cc.n_speakers = corpus.n_speakers;
        cc.seed = eval_seed;
        std::vector<LabelledMel> train_set, test_set;
        for (const auto& u : corpus.utterances) (u.test ? test_set : train_set).push_back({&u.mel, u.spk});
        const auto classifier = train_speaker_classifier(train_set, cc);
        EvaluationOptions opt;
        opt.spk_src = eval_src;
        opt.spk_tgt = eval_tgt;
        opt.max_texts = max_texts;
        opt.reference = reference == "oracle" ? ReferenceSource::kOracle : ReferenceSource::kExtracted;
        opt.threads = threads;
        const Network<float> net(ck.model, ck.params);
        const auto result = evaluate_transfer(net, corpus, classifier, opt);
        std::optional<EvaluationResult> control;
        if (!no_control) {
          auto copt = opt;
          copt.shuffle_styles = true;
          control = evaluate_transfer(net, corpus, classifier, copt);
        }
        auto report = format_evaluation(result, control);
        report += format_classification_row("classifier_heldout_recordings",
                                            classification_accuracy(classifier, test_set), test_set.size()) +
                  "\n";
        write_text_atomic(report_path, report);
        out << report;
        for (const auto& d : directionality(result)) {
          out << "style " << d.sty << ": own style beats target neutral " << d.beats_target_neutral << "/" << d.n_cases
              << ", beats every other style " << d.beats_every_style << "/" << d.n_cases << "\n";
        }
      };
    });
  }

  // gradcheck
  double tolerance = 1e-3;
  std::size_t samples = 240;
  std::string precision = "mixed";
  std::uint64_t check_seed = GradCheckOptions{}.seed;
  {
    auto* sub = app.add_subcommand("gradcheck", "Finite-difference check of the full training loss");
    sub->add_option("--config", config_path, "Config file ([model]); default is a built-in tiny network")
        ->check(CLI::ExistingFile);
    sub->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();
    sub->add_option("--samples", samples, "Sampled coordinates")->capture_default_str();
    sub->add_option("--precision", precision, "mixed (32-bit graph, 64-bit differences) | double")
        ->capture_default_str();
    sub->add_option("--seed", check_seed, "Sampling seed")->capture_default_str();
    sub->callback([&] {
      action = [&] {
        const auto model = config_path.empty() ? gradcheck_config() : load_config(config_path).model;
        if (precision != "mixed" && precision != "double") {
          throw ConfigError("--precision must be mixed or double, got '" + precision + "'");
        }
        const auto r = model_grad_check(model, precision == "double" ? CheckPrecision::kDouble : CheckPrecision::kMixed,
                                        {.eps = 1e-5, .samples = samples, .seed = check_seed});
        char line[160];
        std::snprintf(line, sizeof line, "max relative error %.3e over %zu coordinates in %zu groups (tolerance %.1e)\n",
                      r.result.max_relative_error, r.result.coordinates.size(), r.groups.size(), tolerance);
        out << line;
        if (!(r.result.max_relative_error < tolerance)) {
          const auto worst = std::max_element(
              r.result.coordinates.begin(), r.result.coordinates.end(),
              [](const auto& a, const auto& b) { return a.relative_error < b.relative_error; });
          throw ConfigError("gradient check failed: worst coordinate " + worst->tensor + "[" +
                            std::to_string(worst->index) + "]");
        }
      };
    });
  }

  // config-reference
  {
    auto* sub = app.add_subcommand("config-reference", "Print every config key with its default");
    sub->callback([&] { action = [&] { out << config_reference(); }; });
  }

  std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kUserError;
  }
  try {
    if (action) action();
    return kOk;
  } catch (const std::exception& e) {
    print_chain(err, e, 0);
    return classify(e);
  } catch (...) {
    err << "error: unknown exception\n";
    return kInternalError;
  }
}

}  // namespace pbtts::cli
