#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "esres/dsp.hpp"
#include "esres/folds.hpp"
#include "esres/model.hpp"
#include "esres/synth.hpp"
#include "esres/training.hpp"
#include "esres/weights.hpp"

namespace fs = std::filesystem;
using namespace esres;

namespace {

struct FrontEndFlags {
  int sample_rate = 44100;
  double frame_ms = 37.5;
  double overlap = 0.661;
  int fft = 2048;
  int bands = 3;

  void attach(CLI::App* cmd) {
    cmd->add_option("--sample-rate", sample_rate, "Target sample rate in Hz")
        ->capture_default_str();
    cmd->add_option("--frame-ms", frame_ms, "Analysis window length in ms")
        ->capture_default_str();
    cmd->add_option("--overlap", overlap, "Frame overlap fraction")->capture_default_str();
    cmd->add_option("--fft", fft, "FFT size (0 = next power of two)")->capture_default_str();
    cmd->add_option("--bands", bands, "Number of frequency bands")->capture_default_str();
  }

  dsp::FrontEndConfig config() const {
    return dsp::FrontEndConfig::from_window(frame_ms, overlap, sample_rate, fft, bands);
  }
};

struct ModelFlags {
  bool attention = false;
  bool stereo = false;
  double width_scale = 1.0;
  int classes = 0;  // 0 = infer from manifest

  void attach(CLI::App* cmd) {
    cmd->add_flag("--attention", attention, "Enable attention gating");
    cmd->add_flag("--stereo", stereo, "Two-channel shared-weight forward");
    cmd->add_option("--width-scale", width_scale, "Channel width multiplier")
        ->capture_default_str();
    cmd->add_option("--classes", classes, "Class count (0 = infer from manifest)")
        ->capture_default_str();
  }

  nn::ModelConfig config(int bands, int inferred_classes) const {
    nn::ModelConfig mc;
    mc.num_classes = classes > 0 ? classes : inferred_classes;
    mc.in_channels = bands;
    mc.attention = attention;
    mc.width_scale = width_scale;
    return mc;
  }
};

struct TrainFlags {
  train::TrainConfig cfg;
  bool no_augment = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch", cfg.batch_size, "Batch size")->capture_default_str();
    cmd->add_option("--lr", cfg.base_lr, "Base learning rate")->capture_default_str();
    cmd->add_option("--gamma", cfg.gamma, "Exponential decay factor")->capture_default_str();
    cmd->add_option("--wd", cfg.weight_decay, "Weight decay")->capture_default_str();
    cmd->add_flag("--no-augment", no_augment, "Disable waveform augmentation");
  }

  train::TrainConfig config(uint64_t seed, bool stereo) const {
    train::TrainConfig c = cfg;
    c.seed = seed;
    c.augment = !no_augment;
    c.stereo = stereo;
    return c;
  }
};

int infer_classes(const std::vector<data::ManifestEntry>& entries) {
  int max_label = -1;
  for (const auto& e : entries) max_label = std::max(max_label, e.class_label);
  return max_label + 1;
}

data::SplitAssignment make_split(const std::vector<data::ManifestEntry>& entries,
                                 const std::string& mode, int k, uint64_t seed) {
  if (mode == "official") return data::official_folds(entries, k);
  std::vector<std::string> warnings;
  auto split = data::stratified_kfold(entries, k, seed, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return split;
}

std::vector<data::ManifestEntry> read_manifest_checked(const std::string& path, int k) {
  if (!fs::exists(path)) throw ConfigError("manifest not found: " + path);
  return data::parse_manifest(path, k);
}

int cmd_synth(const std::string& out_dir, data::SynthConfig cfg) {
  auto ds = data::synth_overlapped_manifest(cfg);
  data::write_dataset(ds, out_dir);
  std::cout << "wrote " << ds.entries.size() << " clips and manifest.csv to " << out_dir
            << "\n";
  return 0;
}

int cmd_extract(const std::string& in_path, const std::string& out_dir,
                const FrontEndFlags& fef, bool stereo) {
  if (!fs::exists(in_path)) throw ConfigError("input not found: " + in_path);
  std::vector<fs::path> files;
  if (fs::is_directory(in_path)) {
    for (const auto& e : fs::directory_iterator(in_path))
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(in_path);
  }
  if (files.empty()) {
    std::cerr << "warning: no .wav files under " << in_path << "\n";
    return 0;
  }
  fs::create_directories(out_dir);
  const auto fe = fef.config();
  size_t failed = 0;
  for (const auto& f : files) {
    try {
      audio::AudioClip clip = audio::decode_wav_file(f.string());
      if (clip.sample_rate != fe.sample_rate) clip = audio::resample(clip, fe.sample_rate);
      clip = stereo ? audio::to_stereo(clip) : audio::to_mono(clip);
      const auto specs = dsp::extract_features(clip, fe);
      for (size_t c = 0; c < specs.size(); ++c) {
        fs::path out = fs::path(out_dir) / f.stem();
        out += specs.size() > 1 ? ".ch" + std::to_string(c) + ".esrs" : ".esrs";
        dsp::write_spectrogram(out.string(), specs[c]);
        std::cout << out.string() << " " << specs[c].bands << "x" << specs[c].bins << "x"
                  << specs[c].frames << "\n";
      }
    } catch (const Error& e) {
      std::cerr << "error: " << f.string() << ": " << e.what() << "\n";
      ++failed;
    }
  }
  return failed == files.size() ? 2 : 0;
}

int cmd_audit(const std::string& manifest, const std::string& mode, int k, uint64_t seed,
              const std::string& json_path) {
  const auto entries = read_manifest_checked(manifest, mode == "official" ? k : 0);
  const auto split = make_split(entries, mode, k, seed);
  const auto report = data::audit_split(entries, split);
  std::cout << data::report_text(report, entries);
  if (!json_path.empty()) {
    std::ofstream f(json_path, std::ios::trunc);
    if (!f) throw DataError("cannot open " + json_path + " for writing");
    f << data::report_json(report, entries);
  }
  return report.clean() ? 0 : 1;
}

int cmd_train(const std::string& manifest, const std::string& data_dir,
              const std::string& weights_out, const std::string& metrics_out,
              const std::string& mode, int k, int round, uint64_t seed,
              const FrontEndFlags& fef, const ModelFlags& mf, const TrainFlags& tf) {
  const auto entries = read_manifest_checked(manifest, mode == "official" ? k : 0);
  const auto fe = fef.config();
  const auto root = data_dir.empty() ? fs::path(manifest).parent_path().string() : data_dir;
  const auto dataset = train::Dataset::load(root, entries, fe, mf.stereo);
  const auto mc = mf.config(fe.bands, dataset.num_classes);
  const auto tc = tf.config(seed, mf.stereo);

  std::vector<int> train_ids, val_ids;
  if (round > 0) {
    const auto split = make_split(entries, mode, k, seed);
    if (round > split.num_rounds)
      throw ConfigError("round " + std::to_string(round) + " exceeds k=" + std::to_string(k));
    std::vector<char> in_test(entries.size(), 0);
    for (int id : split.test_sets[round - 1]) in_test[static_cast<size_t>(id)] = 1;
    for (size_t i = 0; i < entries.size(); ++i)
      (in_test[i] ? val_ids : train_ids).push_back(static_cast<int>(i));
  } else {
    for (size_t i = 0; i < entries.size(); ++i) train_ids.push_back(static_cast<int>(i));
  }

  nn::EsResNet<float> model(mc, seed);
  std::unique_ptr<std::ofstream> metrics;
  if (!metrics_out.empty()) {
    metrics = std::make_unique<std::ofstream>(metrics_out, std::ios::trunc);
    if (!*metrics) throw DataError("cannot open " + metrics_out + " for writing");
  }
  train::train(model, dataset, train_ids, val_ids, fe, tc, metrics.get());
  nn::save_weights(nn::snapshot(model), weights_out);
  std::cout << "wrote " << weights_out << "\n";
  return 0;
}

int cmd_eval(const std::string& manifest, const std::string& data_dir,
             const std::string& weights_path, const std::string& mode, int k, bool cv,
             uint64_t seed, const FrontEndFlags& fef, const ModelFlags& mf,
             const TrainFlags& tf) {
  const auto entries = read_manifest_checked(manifest, mode == "official" ? k : 0);
  const auto fe = fef.config();
  const auto root = data_dir.empty() ? fs::path(manifest).parent_path().string() : data_dir;
  const auto dataset = train::Dataset::load(root, entries, fe, mf.stereo);
  const auto mc = mf.config(fe.bands, dataset.num_classes);
  const auto tc = tf.config(seed, mf.stereo);
  const auto split = make_split(entries, mode, k, seed);

  std::vector<double> fold_acc;
  double mean = 0.0;
  if (cv) {
    auto result = train::cross_validate(mc, seed, dataset, split, fe, tc, &std::cerr);
    fold_acc = result.fold_acc;
    mean = result.mean_acc;
  } else {
    if (weights_path.empty()) throw ConfigError("--weights is required without --cv");
    if (!fs::exists(weights_path)) throw ConfigError("weights not found: " + weights_path);
    nn::EsResNet<float> model(mc, seed);
    nn::restore(model, nn::load_weights(weights_path));
    double total = 0.0;
    for (int r = 0; r < split.num_rounds; ++r) {
      fold_acc.push_back(train::evaluate(model, dataset, split.test_sets[r], fe, tc));
      total += fold_acc.back();
    }
    mean = total / static_cast<double>(split.num_rounds);
  }
  for (size_t r = 0; r < fold_acc.size(); ++r)
    std::cout << "round " << (r + 1) << " accuracy " << 100.0 * fold_acc[r] << "%\n";
  std::cout << "mean accuracy " << 100.0 * mean << "%\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Environmental sound classification toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate an overlapped-snippet dataset");
  std::string synth_out = "synth_data";
  data::SynthConfig sc;
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--sources", sc.num_sources, "Number of source recordings")
      ->capture_default_str();
  synth->add_option("--snippets", sc.snippets_per_source, "Snippets per source")
      ->capture_default_str();
  synth->add_option("--num-classes", sc.num_classes, "Number of classes")
      ->capture_default_str();
  synth->add_option("--folds", sc.num_folds, "Grouped fold count")->capture_default_str();
  synth->add_option("--snippet-len", sc.snippet_len, "Snippet length in samples")
      ->capture_default_str();
  synth->add_option("--sample-rate", sc.sample_rate, "Sample rate in Hz")
      ->capture_default_str();
  synth->add_option("--seed", sc.seed, "Generator seed")->capture_default_str();

  // extract
  auto* extract = app.add_subcommand("extract", "Cache spectrograms for WAV files");
  std::string ex_in, ex_out = ".";
  bool ex_stereo = false;
  FrontEndFlags ex_fe;
  extract->add_option("--in", ex_in, "WAV file or directory")->required();
  extract->add_option("--out", ex_out, "Output directory")->capture_default_str();
  extract->add_flag("--stereo", ex_stereo, "Keep two channels (one cache file each)");
  ex_fe.attach(extract);

  // audit
  auto* audit = app.add_subcommand("audit", "Check a split for source leakage");
  std::string au_manifest, au_mode = "official", au_json;
  int au_k = 10;
  uint64_t au_seed = 0;
  audit->add_option("--manifest", au_manifest, "Manifest CSV")->required();
  audit->add_option("--split", au_mode, "official or stratified")
      ->check(CLI::IsMember({"official", "stratified"}))
      ->capture_default_str();
  audit->add_option("--k", au_k, "Number of rounds")->capture_default_str();
  audit->add_option("--seed", au_seed, "Shuffle seed (stratified)")->capture_default_str();
  audit->add_option("--json", au_json, "Also write a JSON report to this path");

  // train
  auto* tr = app.add_subcommand("train", "Train a model from a manifest");
  std::string tr_manifest, tr_data, tr_weights = "weights.esrw", tr_metrics, tr_mode = "official";
  int tr_k = 10, tr_round = 0;
  uint64_t tr_seed = 0;
  FrontEndFlags tr_fe;
  ModelFlags tr_mf;
  TrainFlags tr_tf;
  tr->add_option("--manifest", tr_manifest, "Manifest CSV")->required();
  tr->add_option("--data", tr_data, "Audio root (default: manifest directory)");
  tr->add_option("--out", tr_weights, "Weight file to write")->capture_default_str();
  tr->add_option("--metrics", tr_metrics, "Per-epoch metrics log (TSV)");
  tr->add_option("--split", tr_mode, "official or stratified")
      ->check(CLI::IsMember({"official", "stratified"}))
      ->capture_default_str();
  tr->add_option("--k", tr_k, "Number of rounds")->capture_default_str();
  tr->add_option("--round", tr_round,
                 "Hold out this round's test fold for validation (0 = train on all)")
      ->capture_default_str();
  tr->add_option("--seed", tr_seed, "Run seed")->capture_default_str();
  tr_fe.attach(tr);
  tr_mf.attach(tr);
  tr_tf.attach(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate weights (or cross-validate) over a split");
  std::string ev_manifest, ev_data, ev_weights, ev_mode = "official";
  int ev_k = 10;
  bool ev_cv = false;
  uint64_t ev_seed = 0;
  FrontEndFlags ev_fe;
  ModelFlags ev_mf;
  TrainFlags ev_tf;
  ev->add_option("--manifest", ev_manifest, "Manifest CSV")->required();
  ev->add_option("--data", ev_data, "Audio root (default: manifest directory)");
  ev->add_option("--weights", ev_weights, "Weight file to evaluate");
  ev->add_option("--split", ev_mode, "official or stratified")
      ->check(CLI::IsMember({"official", "stratified"}))
      ->capture_default_str();
  ev->add_option("--k", ev_k, "Number of rounds")->capture_default_str();
  ev->add_flag("--cv", ev_cv, "Train a fresh model per round before evaluating it");
  ev->add_option("--seed", ev_seed, "Run seed")->capture_default_str();
  ev_fe.attach(ev);
  ev_mf.attach(ev);
  ev_tf.attach(ev);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_out, sc);
    if (extract->parsed()) return cmd_extract(ex_in, ex_out, ex_fe, ex_stereo);
    if (audit->parsed()) return cmd_audit(au_manifest, au_mode, au_k, au_seed, au_json);
    if (tr->parsed())
      return cmd_train(tr_manifest, tr_data, tr_weights, tr_metrics, tr_mode, tr_k, tr_round,
                       tr_seed, tr_fe, tr_mf, tr_tf);
    if (ev->parsed())
      return cmd_eval(ev_manifest, ev_data, ev_weights, ev_mode, ev_k, ev_cv, ev_seed, ev_fe,
                      ev_mf, ev_tf);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DecodeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
