#pragma once

#include <vector>

#include "ubgan/audio.hpp"
#include "ubgan/tensor.hpp"

namespace ubgan {

// 80-band log-mel conditioning over 20 ms frames with 5 ms of past context
// and 5 ms of look-ahead (one 480-sample Hann window per frame at 16 kHz).
struct MelConfig {
  int num_mels = 80;
  int frame_ms = 20;
  int context_ms = 5;
  int lookahead_ms = 5;
  int sample_rate = 16000;
  int fft_size = 512;
  double mel_fmin = 0.0;
  double mel_fmax = 8000.0;
  float log_floor = 1e-5f;

  int window_samples() const {
    return (context_ms + frame_ms + lookahead_ms) * sample_rate / 1000;  // 480
  }
  int hop_samples() const { return frame_ms * sample_rate / 1000; }  // 320
};

// Natural-log mel energies of one 480-sample window.
std::vector<float> mel_frame(const std::vector<float>& window,
                             const MelConfig& cfg = {});

// One mel vector per 20 ms hop; frame i covers samples
// [i*320 - 80, i*320 + 400), zero-padded at the signal edges.
// Returns [num_mels, frames].
Tensor mel_stream(const AudioBuffer& x, const MelConfig& cfg = {});

// Center frequency in Hz of each mel filter (test oracle).
std::vector<double> mel_filter_centers(const MelConfig& cfg = {});

}  // namespace ubgan
