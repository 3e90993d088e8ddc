#pragma once

#include <array>
#include <vector>

#include "ubgan/audio.hpp"
#include "ubgan/generator.hpp"
#include "ubgan/tensor.hpp"

namespace ubgan {

// STFT magnitude with its framing parameters; bins = window/2 + 1.
struct Spectrogram {
  Tensor mag;
  int window_length = 0;
  int hop_length = 0;
};

Spectrogram make_spectrogram(const Tensor& x, int window, int hop);

// Relative Frobenius distance between magnitudes.
Tensor loss_sc(const Spectrogram& ref, const Spectrogram& est);
// Mean absolute log-magnitude distance (magnitudes floored at 1e-7).
Tensor loss_mag(const Spectrogram& ref, const Spectrogram& est);
// Least-squares generator loss: sum_k mean((D_k(G(x)) - 1)^2).
Tensor loss_adv_gen(const std::vector<Tensor>& disc_outputs);
// sum_k [mean((D_k(x) - 1)^2) + mean(D_k(G(x))^2)].
Tensor loss_disc(const std::vector<Tensor>& real_outputs,
                 const std::vector<Tensor>& fake_outputs);
// Per-layer mean absolute feature distance, averaged over layers, summed
// over discriminators.
Tensor loss_feat(const std::vector<std::vector<Tensor>>& real_feats,
                 const std::vector<std::vector<Tensor>>& fake_feats);

struct LossReport {
  double sc = 0, mag = 0, adv = 0, feat = 0, disc = 0;
  double weighted_total() const { return sc + mag + adv + 10.0 * feat; }
};

// One STFT discriminator: five 3x9 convolutions (stride 2 on time) with
// leaky-ReLU over the 2-channel complex STFT, then a 1-channel map.
struct StftDiscriminator {
  int window = 0, hop = 0;
  std::vector<Tensor> conv_w, conv_b;  // 5 body convs + output conv

  static StftDiscriminator make(LayerBuilder& bld, const std::string& prefix,
                                int window, int channels = 32);
  Tensor forward(const Tensor& audio, std::vector<Tensor>* feats) const;
  std::vector<Tensor> parameters() const;
};

// Four discriminators at window lengths {2048, 1024, 512, 256}, 75% overlap.
struct DiscriminatorEnsemble {
  std::vector<StftDiscriminator> members;

  static DiscriminatorEnsemble init(unsigned seed, int channels = 32);
  std::vector<Tensor> forward(const Tensor& audio,
                              std::vector<std::vector<Tensor>>* feats) const;
  std::vector<Tensor> parameters() const;
};

// Moment-based optimizer; adamw applies decoupled weight decay. The
// learning rate decays by 0.99 every five epochs via advance_epoch().
class Optimizer {
 public:
  enum class Variant { adam, adamw };

  Optimizer(std::vector<Tensor> params, Variant variant, double lr,
            double weight_decay = 0.01);
  void step();
  void zero_grad();
  void advance_epoch();
  double lr() const { return lr_; }
  int epochs() const { return epoch_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  Variant variant_;
  double lr_, weight_decay_;
  int64_t t_ = 0;
  int epoch_ = 0;
};

struct ToyTrainOptions {
  int steps = 500;          // spectral pre-training steps
  int adversarial_steps = 0;
  unsigned seed = 1;
  double lr_gen = 5e-4;     // adamw
  double lr_disc = 2e-4;    // adam
  int stft_window = 1024;
  int stft_hop = 256;
  int trace_every = 1;
};

struct TraceRow {
  int step = 0;
  double sc = 0, mag = 0, adv = 0, feat = 0, disc = 0;
};

struct ToyTrainResult {
  WeightStore weights;
  std::vector<TraceRow> trace;
  std::vector<int> final_codes;  // guided mode: codes on the clip
};

// Overfits one short 32 kHz clip. The wideband input is derived by
// zeroing the four high subbands (an ideal-codec surrogate). Phase 1
// minimizes L_sc + L_mag; the optional phase 2 adds the adversarial and
// feature terms against the four-member STFT ensemble.
ToyTrainResult toy_train(const AudioBuffer& clip_swb,
                         GeneratorConfig::Mode mode,
                         const ToyTrainOptions& opts = {});

}  // namespace ubgan
