#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "esres/audio.hpp"

namespace esres::dsp {

// Front-end geometry. Defaults: 44.1 kHz, 37.5 ms frames (1654 samples),
// 66.1 % overlap (hop 561), frames reflection-padded to a 2048-point FFT.
struct FrontEndConfig {
  int sample_rate = 44100;
  int frame_len = 1654;
  int hop = 561;
  int fft_size = 2048;
  int bands = 3;
  double epsilon_power = 1e-12;

  // Derive frame_len/hop/fft_size from a window length in milliseconds and
  // an overlap fraction. fft_size 0 selects the next power of two.
  static FrontEndConfig from_window(double frame_ms, double overlap,
                                    int sample_rate = 44100, int fft_size = 0,
                                    int bands = 3, double epsilon_power = 1e-12);

  void validate() const;

  int spectrum_bins() const { return fft_size / 2 + 1; }
  int band_rows() const;
  int64_t frame_count(int64_t num_samples) const;  // throws when too short
};

// Complex STFT, bins x frames, row-major.
struct StftMatrix {
  int bins = 0;
  int frames = 0;
  std::vector<std::complex<double>> values;

  const std::complex<double>& at(int bin, int frame) const {
    return values[static_cast<size_t>(bin) * frames + frame];
  }
};

// Banded log-power image in dB, band-major then row-major.
struct Spectrogram {
  int bands = 0;
  int bins = 0;  // rows per band
  int frames = 0;
  std::vector<float> values;

  size_t index(int band, int bin, int frame) const {
    return (static_cast<size_t>(band) * bins + bin) * frames + frame;
  }
  float at(int band, int bin, int frame) const { return values[index(band, bin, frame)]; }
  size_t size() const { return values.size(); }
};

// Minimum 4-term Blackman-Harris window, periodic convention (denominator
// n). Values are mirrored around n/2 so w[k] == w[n-k] holds bit-exactly.
double blackman_harris(int k, int n);
std::vector<double> blackman_harris_window(int n);

// Frame i covers [i*hop, i*hop + frame_len); trailing remainder dropped.
std::vector<std::vector<float>> frame_signal(std::span<const float> samples,
                                             const FrontEndConfig& cfg);

// Window each frame, reflection-pad it to fft_size (edge sample excluded),
// transform and keep bins 0..fft_size/2.
StftMatrix stft(std::span<const float> samples, const FrontEndConfig& cfg);

// 10*log10(max(|X|^2, epsilon_power)), bins x frames row-major.
std::vector<float> log_power(const StftMatrix& x, double epsilon_power);

// Split rows into equal-height bands; leftover top rows are dropped.
Spectrogram band_split(const std::vector<float>& s, int bins, int frames,
                       const FrontEndConfig& cfg);

// stft -> log_power -> band_split, independently per audio channel.
std::vector<Spectrogram> extract_features(const audio::AudioClip& clip,
                                          const FrontEndConfig& cfg);

// "ESRS" cache file: magic, u16 version, u32 dims, f32 little-endian values.
void write_spectrogram(const std::string& path, const Spectrogram& spec);
Spectrogram read_spectrogram(const std::string& path);

}  // namespace esres::dsp
