#include "ubgan/pqmf.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "ubgan/error.hpp"

namespace ubgan {

namespace {

// Zeroth-order modified Bessel function, power series.
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double half_x = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half_x / k) * (half_x / k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

// Kaiser-windowed sinc lowpass, unit DC gain.
std::vector<double> windowed_sinc(int length, double cutoff, double beta) {
  std::vector<double> h(length);
  const double center = (length - 1) / 2.0;
  const double i0_beta = bessel_i0(beta);
  double sum = 0.0;
  for (int n = 0; n < length; ++n) {
    const double t = n - center;
    const double s = t == 0.0 ? 2.0 * cutoff
                              : std::sin(2.0 * std::numbers::pi * cutoff * t) /
                                    (std::numbers::pi * t);
    const double r = 2.0 * (n - center) / (length - 1);
    const double w = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) /
                     i0_beta;
    h[n] = s * w;
    sum += h[n];
  }
  for (auto& v : h) v /= sum;
  return h;
}

std::vector<float> modulate(const PrototypeFilter& p, double phase_sign) {
  const int N = p.num_bands;
  const int L = p.length();
  std::vector<float> bank(size_t(N) * L);
  const double center = (L - 1) / 2.0;
  for (int k = 0; k < N; ++k) {
    const double omega = (2 * k + 1) * std::numbers::pi / (2.0 * N);
    const double phi = phase_sign * (k % 2 == 0 ? 1.0 : -1.0) *
                       std::numbers::pi / 4.0;
    for (int n = 0; n < L; ++n) {
      bank[size_t(k) * L + n] =
          float(2.0 * p.taps[n] * std::cos(omega * (n - center) + phi));
    }
  }
  return bank;
}

PrototypeFilter make_prototype(int num_bands, int taps_per_band, double cutoff,
                               double beta) {
  PrototypeFilter p;
  p.num_bands = num_bands;
  p.cutoff = cutoff;
  p.window_beta = beta;
  auto h = windowed_sinc(num_bands * taps_per_band, cutoff, beta);
  p.taps.assign(h.begin(), h.end());
  return p;
}

// Shared analysis kernel: one output frame per N input samples; window[0]
// is the newest sample. Both batch and streaming call this so outputs are
// bit-exact regardless of chunking.
void analysis_frames(const float* window_base, int num_frames, int N, int L,
                     const std::vector<float>& hk, int stride,
                     SubbandSignal& out, int frame0) {
  for (int t = 0; t < num_frames; ++t) {
    const float* newest = window_base + size_t(t) * stride;
    for (int k = 0; k < N; ++k) {
      const float* h = hk.data() + size_t(k) * L;
      float acc = 0.0f;
      for (int n = 0; n < L; ++n) acc += h[n] * newest[-n];
      out.band(k)[frame0 + t] = acc;
    }
  }
}

// Shared synthesis kernel: sb_hist holds per band the L/N most recent
// subband values, newest last (index m = steps back in time).
void synthesis_frame(const float* const* band_recent, int N, int L,
                     const std::vector<float>& fk, float* out) {
  const int M = L / N;
  for (int j = 0; j < N; ++j) {
    float acc = 0.0f;
    for (int k = 0; k < N; ++k) {
      const float* f = fk.data() + size_t(k) * L;
      const float* s = band_recent[k];  // s[0] newest, s[m] = m steps back
      for (int m = 0; m < M; ++m) acc += f[j + m * N] * s[m];
    }
    out[j] = float(N) * acc;
  }
}

}  // namespace

std::vector<float> analysis_filters(const PrototypeFilter& p) {
  return modulate(p, +1.0);
}

std::vector<float> synthesis_filters(const PrototypeFilter& p) {
  return modulate(p, -1.0);
}

SubbandSignal analysis(const AudioBuffer& x, const PrototypeFilter& p) {
  const int N = p.num_bands;
  const int L = p.length();
  require(x.sample_rate == N * 4000, Errc::rate_mismatch,
          "analysis: sample rate must be num_bands * 4000");
  require(x.size() % N == 0, Errc::frame_alignment,
          "analysis: input length must be a multiple of num_bands");
  const int T = int(x.size()) / N;

  SubbandSignal out;
  out.num_bands = N;
  out.frames = T;
  out.data.assign(size_t(N) * T, 0.0f);

  // Left-pad with L-N zeros so frame t sees window x[tN+N-1 .. tN+N-L].
  std::vector<float> padded(size_t(L - N) + x.samples.size(), 0.0f);
  std::copy(x.samples.begin(), x.samples.end(), padded.begin() + (L - N));
  const auto hk = analysis_filters(p);
  analysis_frames(padded.data() + (L - 1), T, N, L, hk, N, out, 0);
  return out;
}

namespace {

// Core synthesis over T subband frames. `recent` is the per-band delay line
// (N x M slots, newest first), `carry` the N-1 pending outputs that realize
// the N-1 sample output offset matching the analysis sampling phase.
void synthesis_run(const SubbandSignal& sb, const PrototypeFilter& p,
                   std::vector<float>& recent, std::vector<float>& carry,
                   AudioBuffer& out) {
  const int N = p.num_bands;
  const int L = p.length();
  const int M = L / N;
  const int T = sb.frames;
  out.sample_rate = N * 4000;
  out.samples.assign(size_t(T) * N, 0.0f);
  const auto fk = synthesis_filters(p);

  std::vector<const float*> ptrs(N);
  for (int k = 0; k < N; ++k) ptrs[k] = recent.data() + size_t(k) * M;
  std::vector<float> block(N);
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < N; ++k) {
      float* r = recent.data() + size_t(k) * M;
      for (int m = M - 1; m > 0; --m) r[m] = r[m - 1];
      r[0] = sb.band(k)[t];
    }
    synthesis_frame(ptrs.data(), N, L, fk, block.data());
    // emit [carry | block], keep the block's last N-1 samples as new carry
    float* o = out.samples.data() + size_t(t) * N;
    for (int j = 0; j < N - 1; ++j) o[j] = carry[j];
    o[N - 1] = block[0];
    for (int j = 0; j < N - 1; ++j) carry[j] = block[j + 1];
  }
}

}  // namespace

AudioBuffer synthesis(const SubbandSignal& sb, const PrototypeFilter& p) {
  const int N = p.num_bands;
  const int L = p.length();
  require(sb.num_bands == N, Errc::band_count_mismatch,
          "synthesis: subband count does not match prototype");
  std::vector<float> recent(size_t(N) * (L / N), 0.0f);
  std::vector<float> carry(size_t(N - 1), 0.0f);
  AudioBuffer out;
  synthesis_run(sb, p, recent, carry, out);
  return out;
}

PqmfState make_pqmf_state(const PrototypeFilter& p) {
  PqmfState st;
  st.num_bands = p.num_bands;
  st.taps = p.length();
  st.analysis_hist.assign(size_t(p.length() - p.num_bands), 0.0f);
  st.synthesis_hist.assign(
      size_t(p.num_bands) * (p.length() / p.num_bands - 1), 0.0f);
  st.synthesis_carry.assign(size_t(p.num_bands - 1), 0.0f);
  return st;
}

SubbandSignal analysis_step(const AudioBuffer& frame, const PrototypeFilter& p,
                            PqmfState& state) {
  const int N = p.num_bands;
  const int L = p.length();
  require(state.num_bands == N && state.taps == L, Errc::uninitialized_state,
          "analysis_step: state does not match prototype");
  require(frame.sample_rate == N * 4000, Errc::rate_mismatch,
          "analysis_step: sample rate must be num_bands * 4000");
  require(frame.size() % N == 0, Errc::frame_alignment,
          "analysis_step: frame length must be a multiple of num_bands");
  const int T = int(frame.size()) / N;

  SubbandSignal out;
  out.num_bands = N;
  out.frames = T;
  out.data.assign(size_t(N) * T, 0.0f);

  std::vector<float> padded(size_t(L - N) + frame.samples.size());
  std::copy(state.analysis_hist.begin(), state.analysis_hist.end(),
            padded.begin());
  std::copy(frame.samples.begin(), frame.samples.end(),
            padded.begin() + (L - N));
  const auto hk = analysis_filters(p);
  analysis_frames(padded.data() + (L - 1), T, N, L, hk, N, out, 0);
  std::copy(padded.end() - (L - N), padded.end(), state.analysis_hist.begin());
  return out;
}

AudioBuffer synthesis_step(const SubbandSignal& sb, const PrototypeFilter& p,
                           PqmfState& state) {
  const int N = p.num_bands;
  const int L = p.length();
  const int M = L / N;
  require(sb.num_bands == N, Errc::band_count_mismatch,
          "synthesis_step: subband count does not match prototype");
  require(state.num_bands == N && state.taps == L, Errc::uninitialized_state,
          "synthesis_step: state does not match prototype");

  // state.synthesis_hist holds per band the M-1 previous values, newest
  // first. Load them into slots 0..M-2; the kernel shifts the line down
  // before inserting each new value, which restores the correct ages.
  std::vector<float> recent(size_t(N) * M, 0.0f);
  for (int k = 0; k < N; ++k)
    for (int m = 0; m < M - 1; ++m)
      recent[size_t(k) * M + m] =
          state.synthesis_hist[size_t(k) * (M - 1) + m];

  AudioBuffer out;
  synthesis_run(sb, p, recent, state.synthesis_carry, out);

  for (int k = 0; k < N; ++k)
    for (int m = 0; m < M - 1; ++m)
      state.synthesis_hist[size_t(k) * (M - 1) + m] = recent[size_t(k) * M + m];
  return out;
}

double reconstruction_snr_db(const PrototypeFilter& p, int num_samples,
                             unsigned seed) {
  const int N = p.num_bands;
  const int L = p.length();
  num_samples -= num_samples % N;
  AudioBuffer x;
  x.sample_rate = N * 4000;
  x.samples.resize(num_samples);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (auto& v : x.samples) v = dist(rng);

  AudioBuffer y = synthesis(analysis(x, p), p);
  double sig = 0.0, err = 0.0;
  for (int n = L - 1; n < num_samples; ++n) {
    const double ref = x.samples[n - (L - 1)];
    const double d = y.samples[n] - ref;
    sig += ref * ref;
    err += d * d;
  }
  if (err <= 0.0) return 120.0;
  return 10.0 * std::log10(sig / err);
}

PrototypeFilter design_prototype(int num_bands, int taps_per_band,
                                 double stopband_attenuation_db) {
  require(num_bands == 4 || num_bands == 8, Errc::unsupported_band_count,
          "design_prototype: num_bands must be 4 or 8");
  require(taps_per_band >= 8, Errc::invalid_config,
          "design_prototype: taps_per_band must be >= 8");

  // Kaiser beta from the requested stopband attenuation.
  const double a = stopband_attenuation_db;
  double beta;
  if (a > 50.0)
    beta = 0.1102 * (a - 8.7);
  else if (a >= 21.0)
    beta = 0.5842 * std::pow(a - 21.0, 0.4) + 0.07886 * (a - 21.0);
  else
    beta = 0.0;

  const int eval_samples = 4 * num_bands * 4000;  // 4 s of noise

  // Golden-section search for the cutoff maximizing reconstruction SNR.
  auto search = [&](double b) {
    auto snr_at = [&](double cutoff) {
      return reconstruction_snr_db(
          make_prototype(num_bands, taps_per_band, cutoff, b), eval_samples);
    };
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 0.5 / (2.0 * num_bands);
    double hi = 1.5 / (2.0 * num_bands);
    double c = hi - inv_phi * (hi - lo);
    double d = lo + inv_phi * (hi - lo);
    double fc = snr_at(c), fd = snr_at(d);
    for (int it = 0; it < 40; ++it) {
      if (fc > fd) {
        hi = d;
        d = c;
        fd = fc;
        c = hi - inv_phi * (hi - lo);
        fc = snr_at(c);
      } else {
        lo = c;
        c = d;
        fc = fd;
        d = lo + inv_phi * (hi - lo);
        fd = snr_at(d);
      }
    }
    PrototypeFilter p =
        make_prototype(num_bands, taps_per_band, (lo + hi) / 2.0, b);
    return std::pair<PrototypeFilter, double>(
        p, reconstruction_snr_db(p, eval_samples));
  };

  auto [p, snr] = search(beta);
  if (snr < 60.0 && std::abs(beta - 9.0) > 1e-9) {
    // The requested attenuation over-constrains this filter length; retry
    // at the default window shape before giving up.
    auto [p2, snr2] = search(9.0);
    if (snr2 > snr) {
      p = p2;
      snr = snr2;
    }
  }
  if (snr < 60.0)
    fail(Errc::design_failure,
         "design_prototype: reconstruction SNR " + std::to_string(snr) +
             " dB < 60 dB; increase taps_per_band");
  return p;
}

}  // namespace ubgan
