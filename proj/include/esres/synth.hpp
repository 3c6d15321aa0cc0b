#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "esres/audio.hpp"
#include "esres/folds.hpp"

namespace esres::data {

using audio::AudioClip;

struct SynthConfig {
  int num_sources = 10;
  int snippets_per_source = 4;
  int num_classes = 2;
  int num_folds = 10;
  int sample_rate = 44100;
  int snippet_len = 22050;  // must be even; consecutive snippets overlap by half
  uint64_t seed = 0;
  double class_tone_amp = 0.2;   // weak shared cue per class
  double source_tone_amp = 0.6;  // strong per-source fingerprint tones
  double noise_amp = 0.05;
};

struct SynthDataset {
  std::vector<ManifestEntry> entries;
  std::vector<AudioClip> clips;  // parallel to entries
};

// Per-source base waveforms (class tone + random per-source tone mixture +
// noise) cut into snippets with 50% overlap; all snippets of a source share
// a fold id.
SynthDataset synth_overlapped_manifest(const SynthConfig& cfg);

// Writes one mono 16-bit WAV per clip plus manifest.csv into dir; entries'
// clip_path fields name the written files.
void write_dataset(SynthDataset& ds, const std::string& dir);

void write_wav_pcm16(const AudioClip& clip, const std::string& path);

}  // namespace esres::data
