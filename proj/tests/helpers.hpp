#pragma once

// Shared utilities for the test binaries.

#include <cmath>
#include <complex>
#include <vector>

#include "esres/audio.hpp"
#include "esres/fft.hpp"

namespace testutil {

inline esres::audio::AudioClip tone(double freq, int rate, int64_t length,
                                    double amp = 0.5, double phase = 0.0) {
  auto clip = esres::audio::AudioClip::make(1, length, rate);
  for (int64_t i = 0; i < length; ++i)
    clip.samples[i] =
        static_cast<float>(amp * std::sin(2.0 * M_PI * freq * i / rate + phase));
  return clip;
}

// Frequency of the largest Hann-windowed FFT magnitude over the first 16384
// samples of channel 0.
inline double peak_frequency(const esres::audio::AudioClip& clip) {
  const int n = 16384;
  esres::dsp::FftPlan plan(n);
  std::vector<std::complex<double>> buf(n);
  for (int i = 0; i < n; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
    buf[i] = {clip.channel(0)[i] * w, 0.0};
  }
  plan.forward(buf.data());
  int best = 1;
  double best_mag = -1.0;
  for (int b = 1; b < n / 2; ++b) {
    const double mag = std::abs(buf[b]);
    if (mag > best_mag) {
      best_mag = mag;
      best = b;
    }
  }
  return best * static_cast<double>(clip.sample_rate) / n;
}

}  // namespace testutil
