#include "ubgan/mel.hpp"

#include <cmath>
#include <numbers>

#include "ubgan/error.hpp"
#include "ubgan/fft.hpp"

namespace ubgan {

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters with unit peak on the FFT bin grid (HTK-style scale).
// Returns num_mels x bins, row-major, plus the filter center frequencies.
std::vector<double> mel_filterbank(const MelConfig& cfg,
                                   std::vector<double>* centers) {
  const int bins = cfg.fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.mel_fmin);
  const double mel_hi = hz_to_mel(cfg.mel_fmax);
  std::vector<double> edges(cfg.num_mels + 2);
  for (int i = 0; i < cfg.num_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.num_mels + 1));
  if (centers) centers->assign(edges.begin() + 1, edges.end() - 1);

  std::vector<double> bank(size_t(cfg.num_mels) * bins, 0.0);
  const double hz_per_bin = double(cfg.sample_rate) / cfg.fft_size;
  for (int m = 0; m < cfg.num_mels; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * hz_per_bin;
      double w = 0.0;
      if (f >= f0 && f <= f1 && f1 > f0)
        w = (f - f0) / (f1 - f0);
      else if (f > f1 && f <= f2 && f2 > f1)
        w = (f2 - f) / (f2 - f1);
      bank[size_t(m) * bins + k] = w;
    }
  }
  return bank;
}

std::vector<float> mel_of_window(const std::vector<float>& window,
                                 const MelConfig& cfg,
                                 const std::vector<double>& bank) {
  const int n = cfg.window_samples();
  const int bins = cfg.fft_size / 2 + 1;
  std::vector<float> padded(cfg.fft_size, 0.0f);
  for (int i = 0; i < n; ++i) {
    const double w =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);  // periodic Hann
    padded[i] = float(window[i] * w);
  }
  std::vector<double> re, im;
  dsp::rfft(padded.data(), cfg.fft_size, re, im);
  std::vector<float> out(cfg.num_mels);
  for (int m = 0; m < cfg.num_mels; ++m) {
    double acc = 0.0;
    const double* row = bank.data() + size_t(m) * bins;
    for (int k = 0; k < bins; ++k) acc += row[k] * std::hypot(re[k], im[k]);
    out[m] = float(std::log(std::max(acc, double(cfg.log_floor))));
  }
  return out;
}

}  // namespace

std::vector<float> mel_frame(const std::vector<float>& window,
                             const MelConfig& cfg) {
  require(int(window.size()) == cfg.window_samples(),
          Errc::window_length_mismatch,
          "mel_frame: window must be exactly " +
              std::to_string(cfg.window_samples()) + " samples");
  const auto bank = mel_filterbank(cfg, nullptr);
  return mel_of_window(window, cfg, bank);
}

Tensor mel_stream(const AudioBuffer& x, const MelConfig& cfg) {
  require(x.sample_rate == cfg.sample_rate, Errc::rate_mismatch,
          "mel_stream: expected " + std::to_string(cfg.sample_rate) + " Hz");
  const int hop = cfg.hop_samples();
  const int win = cfg.window_samples();
  const int past = cfg.context_ms * cfg.sample_rate / 1000;
  const int frames = int((x.size() + hop - 1) / hop);
  const auto bank = mel_filterbank(cfg, nullptr);

  Tensor out({cfg.num_mels, frames});
  std::vector<float> window(win);
  for (int f = 0; f < frames; ++f) {
    const int64_t start = int64_t(f) * hop - past;
    for (int i = 0; i < win; ++i) {
      const int64_t idx = start + i;
      window[i] =
          (idx >= 0 && idx < x.size()) ? x.samples[size_t(idx)] : 0.0f;
    }
    const auto mv = mel_of_window(window, cfg, bank);
    for (int m = 0; m < cfg.num_mels; ++m)
      out.data()[size_t(m) * frames + f] = mv[m];
  }
  return out;
}

std::vector<double> mel_filter_centers(const MelConfig& cfg) {
  std::vector<double> centers;
  mel_filterbank(cfg, &centers);
  return centers;
}

}  // namespace ubgan
