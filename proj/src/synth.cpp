#include "esres/synth.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "esres/rng.hpp"

namespace esres::data {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

void write_wav_pcm16(const AudioClip& clip, const std::string& path) {
  const int ch = clip.channels;
  const uint32_t frames = static_cast<uint32_t>(clip.length);
  const uint32_t data_bytes = frames * ch * 2;
  std::string out;
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  put_u32(out, 36 + data_bytes);
  out.append("WAVEfmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, static_cast<uint16_t>(ch));
  put_u32(out, static_cast<uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<uint32_t>(clip.sample_rate) * ch * 2);
  put_u16(out, static_cast<uint16_t>(ch * 2));
  put_u16(out, 16);
  out.append("data");
  put_u32(out, data_bytes);
  for (int64_t i = 0; i < clip.length; ++i)
    for (int c = 0; c < ch; ++c) {
      const float v = std::clamp(clip.channel(c)[i], -1.0f, 1.0f);
      const int s = static_cast<int>(std::lround(v * 32767.0f));
      put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(s)));
    }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("wav: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("wav: short write to " + path);
}

SynthDataset synth_overlapped_manifest(const SynthConfig& cfg) {
  if (cfg.num_sources < 1 || cfg.snippets_per_source < 1 || cfg.num_classes < 1)
    throw ConfigError("synth: counts must be positive");
  if (cfg.num_folds < 1) throw ConfigError("synth: num_folds must be positive");
  if (cfg.snippet_len < 2 || cfg.snippet_len % 2 != 0)
    throw ConfigError("synth: snippet_len must be even and at least 2");

  const int hop = cfg.snippet_len / 2;
  const int64_t source_len =
      static_cast<int64_t>(hop) * (cfg.snippets_per_source + 1);
  const double sr = static_cast<double>(cfg.sample_rate);

  Rng rng(cfg.seed);
  SynthDataset ds;
  for (int s = 0; s < cfg.num_sources; ++s) {
    const int label = s % cfg.num_classes;
    // one audible tone per class, spaced so neighbours stay distinct under
    // moderate time scaling
    const double class_freq = 400.0 * std::pow(1.8, label);

    struct Tone {
      double freq, amp, phase;
    };
    std::vector<Tone> tones;
    tones.push_back({class_freq, cfg.class_tone_amp, rng.uniform(0.0, 2.0 * std::numbers::pi)});
    // fingerprint tones span the whole analysis range (capped so moderate
    // time scaling cannot push them past Nyquist)
    const double top = std::min(15000.0, 0.34 * sr);
    const int extras = 6 + static_cast<int>(rng.uniform_int(4));
    for (int t = 0; t < extras; ++t)
      tones.push_back({std::exp(rng.uniform(std::log(200.0), std::log(top))),
                       cfg.source_tone_amp * rng.uniform(0.6, 1.0),
                       rng.uniform(0.0, 2.0 * std::numbers::pi)});

    std::vector<float> wave(static_cast<size_t>(source_len));
    double peak = 0.0;
    for (int64_t i = 0; i < source_len; ++i) {
      double v = cfg.noise_amp * rng.normal();
      const double t = static_cast<double>(i) / sr;
      for (const auto& tone : tones)
        v += tone.amp * std::sin(2.0 * std::numbers::pi * tone.freq * t + tone.phase);
      wave[static_cast<size_t>(i)] = static_cast<float>(v);
      peak = std::max(peak, std::abs(v));
    }
    if (peak > 0.95) {
      const float scale = static_cast<float>(0.95 / peak);
      for (auto& v : wave) v *= scale;
    }

    const std::string source_id = "src" + std::to_string(s);
    // diagonal deal: fills every fold once sources >= folds, and keeps folds
    // class-mixed even when the class count equals the fold count
    const int fold = (s + s / cfg.num_folds) % cfg.num_folds + 1;
    for (int i = 0; i < cfg.snippets_per_source; ++i) {
      AudioClip clip = AudioClip::make(1, cfg.snippet_len, cfg.sample_rate);
      std::memcpy(clip.samples.data(), wave.data() + static_cast<size_t>(i) * hop,
                  static_cast<size_t>(cfg.snippet_len) * sizeof(float));
      ManifestEntry e;
      e.clip_path = source_id + "_snip" + std::to_string(i) + ".wav";
      e.class_label = label;
      e.fold_id = fold;
      e.source_id = source_id;
      e.snippet_index = i;
      ds.entries.push_back(std::move(e));
      ds.clips.push_back(std::move(clip));
    }
  }
  return ds;
}

void write_dataset(SynthDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < ds.entries.size(); ++i)
    write_wav_pcm16(ds.clips[i], (std::filesystem::path(dir) / ds.entries[i].clip_path).string());
  write_manifest(ds.entries, (std::filesystem::path(dir) / "manifest.csv").string());
}

}  // namespace esres::data
