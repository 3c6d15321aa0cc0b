#include "esres/fft.hpp"

#include <cmath>

#include "esres/error.hpp"

namespace esres::dsp {

FftPlan::FftPlan(int n) : n_(n) {
  if (n < 1 || (n & (n - 1)) != 0)
    throw ConfigError("fft: size must be a power of two, got " + std::to_string(n));
  rev_.resize(n);
  int log2n = 0;
  while ((1 << log2n) < n) ++log2n;
  for (int i = 0; i < n; ++i) {
    int r = 0;
    for (int b = 0; b < log2n; ++b)
      if (i & (1 << b)) r |= 1 << (log2n - 1 - b);
    rev_[i] = r;
  }
  twiddle_.resize(n / 2);
  const double step = -2.0 * 3.14159265358979323846 / n;
  for (int k = 0; k < n / 2; ++k)
    twiddle_[k] = {std::cos(step * k), std::sin(step * k)};
}

void FftPlan::forward(std::complex<double>* data) const {
  for (int i = 0; i < n_; ++i) {
    const int r = rev_[i];
    if (i < r) std::swap(data[i], data[r]);
  }
  for (int len = 2; len <= n_; len <<= 1) {
    const int half = len / 2;
    const int stride = n_ / len;
    for (int start = 0; start < n_; start += len) {
      for (int k = 0; k < half; ++k) {
        const std::complex<double> w = twiddle_[static_cast<size_t>(k) * stride];
        const std::complex<double> a = data[start + k];
        const std::complex<double> b = data[start + k + half] * w;
        data[start + k] = a + b;
        data[start + k + half] = a - b;
      }
    }
  }
}

}  // namespace esres::dsp
