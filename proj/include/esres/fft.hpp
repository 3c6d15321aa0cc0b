#pragma once

#include <complex>
#include <vector>

namespace esres::dsp {

// Iterative radix-2 decimation-in-time FFT. Size must be a power of two.
class FftPlan {
 public:
  explicit FftPlan(int n);

  void forward(std::complex<double>* data) const;
  int size() const { return n_; }

 private:
  int n_;
  std::vector<int> rev_;
  std::vector<std::complex<double>> twiddle_;
};

}  // namespace esres::dsp
