#pragma once

#include <vector>

#include "ubgan/audio.hpp"

namespace ubgan {

// Near-perfect-reconstruction pseudo-QMF prototype. The prototype is a
// Kaiser-windowed sinc lowpass whose cutoff is tuned by golden-section
// search until the analysis->synthesis chain reconstructs white noise at
// >= 60 dB SNR. Band k of an N-band bank covers [2k, 2k+2] kHz at the
// 4 kHz-per-band operating points used here.
struct PrototypeFilter {
  int num_bands = 0;
  std::vector<float> taps;  // length L, symmetric, L % num_bands == 0
  double cutoff = 0.0;      // normalized (cycles/sample), in (0, 0.5)
  double window_beta = 0.0;

  int length() const { return int(taps.size()); }
};

// Critically sampled subbands: bands x frames, row-major, 4 kHz per band.
struct SubbandSignal {
  int num_bands = 0;
  int frames = 0;
  std::vector<float> data;
  int subband_rate = 4000;

  float* band(int b) { return data.data() + size_t(b) * frames; }
  const float* band(int b) const { return data.data() + size_t(b) * frames; }
};

// Stream-local filter history. Analysis keeps the last L-N input samples,
// synthesis the last L/N-1 subband values per band plus an N-1 sample
// output carry that places the chain delay exactly at L-1. Zero-initialized.
struct PqmfState {
  int num_bands = 0;
  int taps = 0;
  std::vector<float> analysis_hist;   // L - N samples, oldest first
  std::vector<float> synthesis_hist;  // bands x (L/N - 1), newest first
  std::vector<float> synthesis_carry;  // N - 1 pending output samples
};

PrototypeFilter design_prototype(int num_bands, int taps_per_band,
                                 double stopband_attenuation_db = 90.4);

// Full-signal analysis/synthesis. synthesis(analysis(x)) equals x delayed
// by L-1 samples up to the design SNR.
SubbandSignal analysis(const AudioBuffer& x, const PrototypeFilter& p);
AudioBuffer synthesis(const SubbandSignal& sb, const PrototypeFilter& p);

PqmfState make_pqmf_state(const PrototypeFilter& p);

// Streaming forms; concatenated streamed outputs are bit-exact with the
// batch operations on the concatenated input.
SubbandSignal analysis_step(const AudioBuffer& frame, const PrototypeFilter& p,
                            PqmfState& state);
AudioBuffer synthesis_step(const SubbandSignal& sb, const PrototypeFilter& p,
                           PqmfState& state);

// SNR of the analysis->synthesis chain against the (L-1)-delayed input on
// deterministic white noise; the design-time objective and the test oracle.
double reconstruction_snr_db(const PrototypeFilter& p, int num_samples,
                             unsigned seed = 0x5eed);

// Cosine-modulated filter banks derived from the prototype.
// h_k(n) = 2 p(n) cos((2k+1) pi/(2N) (n - (L-1)/2) + (-1)^k pi/4)
// f_k(n) = 2 p(n) cos((2k+1) pi/(2N) (n - (L-1)/2) - (-1)^k pi/4)
std::vector<float> analysis_filters(const PrototypeFilter& p);
std::vector<float> synthesis_filters(const PrototypeFilter& p);

}  // namespace ubgan
