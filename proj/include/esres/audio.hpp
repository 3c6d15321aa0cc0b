#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "esres/error.hpp"

namespace esres::audio {

// Multi-channel waveform, channel-major storage, nominal amplitude
// range [-1, 1].
struct AudioClip {
  int channels = 1;
  int64_t length = 0;
  int sample_rate = 0;
  std::vector<float> samples;  // channels * length

  static AudioClip make(int channels, int64_t length, int sample_rate);

  float* channel(int c) { return samples.data() + static_cast<size_t>(c) * length; }
  const float* channel(int c) const {
    return samples.data() + static_cast<size_t>(c) * length;
  }
};

// RIFF/WAVE decoder: PCM 16-bit or IEEE float 32-bit, 1-2 channels.
// Integer PCM maps to reals by dividing by 32768.
AudioClip decode_wav(std::span<const uint8_t> bytes);
AudioClip decode_wav_file(const std::string& path);

// Band-limited windowed-sinc resampling. Output length is
// round(length * target_rate / sample_rate); bit-exact identity when the
// rates already match.
AudioClip resample(const AudioClip& clip, int target_rate);

// Length-changing resample by an arbitrary factor; the declared sample
// rate is kept, so the content is stretched (and its pitch shifted).
AudioClip resample_by_factor(const AudioClip& clip, double factor);

// Stereo collapses to the per-sample arithmetic mean of the channels.
AudioClip to_mono(const AudioClip& clip);

// Mono copied into both channels; stereo returned unchanged.
AudioClip to_stereo(const AudioClip& clip);

// Center-crop when longer, symmetric zero-pad when shorter (the extra
// sample goes to the right for odd padding).
AudioClip fit_length(const AudioClip& clip, int64_t target_samples);

}  // namespace esres::audio
