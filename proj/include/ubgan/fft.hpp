#pragma once

#include <complex>
#include <vector>

namespace ubgan::dsp {

// In-place iterative radix-2 FFT. a.size() must be a power of two.
// inverse=true applies the conjugate transform including the 1/n factor.
void fft(std::vector<std::complex<double>>& a, bool inverse);

// Real-input FFT of x[0..n) (n a power of two); writes bins 0..n/2.
void rfft(const float* x, int n, std::vector<double>& re,
          std::vector<double>& im);

// Adjoint of rfft viewed as a linear map R^n -> R^(2*(n/2+1)).
// Given cotangents for (re, im) of bins 0..n/2, accumulates into gx[0..n).
void rfft_adjoint(const std::vector<double>& gre,
                  const std::vector<double>& gim, int n,
                  std::vector<double>& gx);

// |X| spectrogram without gradients: Hann window of `win` samples,
// frame f covers x[f*hop .. f*hop+win). Returns bins x frames, row-major,
// bins = win/2 + 1. Used by metrics; the training path has its own
// differentiable version.
std::vector<double> magnitude_spectrogram(const float* x, int n, int win,
                                          int hop, int* frames_out);

}  // namespace ubgan::dsp
