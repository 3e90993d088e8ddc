#pragma once

#include <string>
#include <vector>

namespace ubgan {

// Mono waveform, float samples nominally in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 0;

  int64_t size() const { return int64_t(samples.size()); }
  double duration_s() const {
    return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0;
  }
};

enum class WavEncoding { pcm16, float32 };

// RIFF/WAVE, mono, PCM-16 or IEEE float-32. Header fields are validated
// against the actual file size before any sample allocation.
AudioBuffer read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioBuffer& buf,
               WavEncoding enc = WavEncoding::float32);

struct MetricReport {
  double snr_db = 0.0;
  std::vector<double> band_snr_db;  // one per PQMF band at the common rate
  double sc = 0.0;                  // spectral convergence
  double mag = 0.0;                 // mean abs log-magnitude difference
  int delay_samples = 0;
};

// Finds the integer lag in [0, max_lag] that maximizes cross-correlation of
// ref against test (test assumed to be ref delayed), then reports SNR,
// per-subband SNR and spectral distances at that lag. SNR is capped at
// 120 dB for exact copies.
MetricReport align_and_snr(const AudioBuffer& ref, const AudioBuffer& test,
                           int max_lag);

}  // namespace ubgan
