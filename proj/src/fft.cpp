#include "ubgan/fft.hpp"

#include <cassert>
#include <cmath>
#include <numbers>

namespace ubgan::dsp {

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  assert(n > 0 && (n & (n - 1)) == 0);
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang =
        2.0 * std::numbers::pi / double(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv_n = 1.0 / double(n);
    for (auto& v : a) v *= inv_n;
  }
}

void rfft(const float* x, int n, std::vector<double>& re,
          std::vector<double>& im) {
  std::vector<std::complex<double>> buf(n);
  for (int i = 0; i < n; ++i) buf[i] = std::complex<double>(x[i], 0.0);
  fft(buf, false);
  const int bins = n / 2 + 1;
  re.assign(bins, 0.0);
  im.assign(bins, 0.0);
  for (int k = 0; k < bins; ++k) {
    re[k] = buf[k].real();
    im[k] = buf[k].imag();
  }
}

void rfft_adjoint(const std::vector<double>& gre,
                  const std::vector<double>& gim, int n,
                  std::vector<double>& gx) {
  // x_grad[m] = sum_{k=0}^{n/2} Re(g_k * e^{+2*pi*i*k*m/n})
  // Zero-pad the cotangent spectrum (no Hermitian extension) and use an
  // inverse-oriented FFT; the real part times n is the adjoint.
  const int bins = n / 2 + 1;
  std::vector<std::complex<double>> buf(n, {0.0, 0.0});
  for (int k = 0; k < bins; ++k) buf[k] = std::complex<double>(gre[k], gim[k]);
  fft(buf, true);  // includes 1/n
  if (int(gx.size()) != n) gx.assign(n, 0.0);
  for (int m = 0; m < n; ++m) gx[m] += buf[m].real() * double(n);
}

std::vector<double> magnitude_spectrogram(const float* x, int n, int win,
                                          int hop, int* frames_out) {
  const int frames = n < win ? 0 : (n - win) / hop + 1;
  const int bins = win / 2 + 1;
  if (frames_out) *frames_out = frames;
  std::vector<double> out(size_t(bins) * frames, 0.0);
  std::vector<double> window(win);
  for (int i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
  std::vector<std::complex<double>> buf(win);
  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < win; ++i)
      buf[i] = std::complex<double>(double(x[f * hop + i]) * window[i], 0.0);
    fft(buf, false);
    for (int k = 0; k < bins; ++k) out[size_t(k) * frames + f] = std::abs(buf[k]);
  }
  return out;
}

}  // namespace ubgan::dsp
