#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ubgan/audio.hpp"
#include "ubgan/error.hpp"
#include "ubgan/layers.hpp"
#include "ubgan/mel.hpp"
#include "ubgan/pqmf.hpp"
#include "ubgan/sideinfo.hpp"
#include "ubgan/tensor.hpp"
#include "ubgan/weights.hpp"

namespace ubgan {

// Synthesis-block hyperparameters. The six downsample blocks shrink the
// 80-step subband frame to two 64-channel latent steps; the upsample
// blocks mirror them with reciprocal factors and reversed channels.
struct GeneratorConfig {
  enum class Mode { blind, guided };
  Mode mode = Mode::blind;
  std::vector<int> down_channels{8, 16, 32, 48, 48, 64};
  std::vector<double> down_factors{1, 2, 2, 2, 2.5, 2};
  std::vector<int> cond_up_factors{80, 80, 40, 20, 10, 4};
  int kernel_size = 7;
  int frame_subband_steps = 80;
  int cond_dim = 80;
  int input_bands = 4;
  int pre_channels = 8;
  int pqmf4_taps_per_band = 16;
  int pqmf8_taps_per_band = 16;
  int se_window = 480;
  int se_latent = 80;
  int se_gru_hidden = 80;

  void validate() const;
  int bottleneck_channels() const { return down_channels.back(); }
  int bottleneck_steps_per_frame() const;  // 2 for the default config

  static GeneratorConfig blind();
  static GeneratorConfig guided();
  std::string to_json() const;
  static GeneratorConfig from_json(const std::string& text);
};

struct DownBlock {
  NormLayer norm;
  DsConv conv_tanh, conv_gate;  // cin -> cin, feed the gated activation
  DsConv conv_mid;              // cin -> cin
  DsConv conv_out;              // cin -> cout, after the downsampling interp
  DsConv conv_cond;             // cond_dim -> cin
  DenseConv conv_gamma, conv_beta;  // cin -> cout at the output resolution
  nn::Rational factor;          // downsample factor (applied as 1/factor)
  int cin = 0, cout = 0;
  int t_in = 0, t_out = 0;  // steps per 20 ms frame
  int cond_up = 1;
};

struct UpBlock {
  NormLayer norm_in;  // normalized input modulated by the mirror TADE pair
  NormLayer norm1, norm2;
  DsConv r1_tanh, r1_gate;  // cin -> cin
  DsConv r2_tanh, r2_gate;
  DsConv conv_out;  // cin -> cout, after the upsampling interp
  nn::Rational factor;
  int cin = 0, cout = 0;
  int t_in = 0, t_out = 0;
};

// Residual two-conv correction of the seam between the highest coded
// subband and the lowest generated one. Zero-initialized correction makes
// it the identity.
struct OverlapComp {
  DenseConv c1;  // 2 -> 16, tanh
  DenseConv c2;  // 16 -> 2, linear, zero-init
  // x3, g4: [1, T] each; returns the adjusted pair stacked as [2, T].
  Tensor forward(const Tensor& x3, const Tensor& g4) const;
};

// Streaming state: one history tensor per convolution in a fixed walk
// order, plus the PQMF stream states held by ExtendStream.
struct GenStreamState {
  std::vector<Tensor> hist;
  size_t cursor = 0;
  Tensor& next() {
    require(cursor < hist.size(), Errc::uninitialized_state,
            "stream state exhausted");
    return hist[cursor++];
  }
  void rewind() { cursor = 0; }
};

struct Generator {
  GeneratorConfig cfg;
  DsConv pre;   // input_bands -> pre_channels
  std::vector<DownBlock> down;
  std::vector<UpBlock> up;
  DsConv post;  // pre_channels -> input_bands, zero-init
  OverlapComp oc;
  LinearLayer expand;  // 1 -> cond_dim (guided conditioning)
  mutable std::vector<int> bottleneck_shape;  // recorded on forward

  // sb_low [4, T] with T = 80*frames, cond [cond_dim, frames];
  // returns the 4 generated high subbands [4, T].
  Tensor synth_high(const Tensor& sb_low, const Tensor& cond) const;

  GenStreamState make_state() const;
  // One 20 ms frame: sb_frame [4,80], cond_frame [cond_dim,1] -> [4,80].
  Tensor forward_frame(const Tensor& sb_frame, const Tensor& cond_frame,
                       GenStreamState& state) const;
  // Streaming overlap compensation ([1,T] frames).
  Tensor oc_frame(const Tensor& x3, const Tensor& g4,
                  GenStreamState& state) const;
};

// The full model: generator plus (for guided mode) the side-info encoder,
// with the prototype filters and the ordered parameter registry.
struct Model {
  GeneratorConfig cfg;
  Generator gen;
  SideInfoEncoder encoder;  // engaged iff guided
  PrototypeFilter proto4, proto8;
  std::vector<std::pair<std::string, Tensor>> params;
  // registry index ranges per reporting block, in registry order
  std::vector<std::pair<std::string, std::pair<int, int>>> block_ranges;

  static Model init(const GeneratorConfig& cfg, unsigned seed);
  static Model build(const WeightStore& store);
  WeightStore to_store() const;
  std::vector<Tensor> trainable() const;
  int64_t param_count() const;  // equals to_store().total_params()
};

struct ExtendResult {
  AudioBuffer out;            // 32 kHz, 2x input length + tail
  double delay_samples = 0;   // total system delay at 32 kHz
  int tail_samples = 0;
};

// Batch bandwidth extension. Guided mode requires one 4-bit code per
// 20 ms input frame (codes == nullptr is blind mode).
ExtendResult extend(const Model& m, const AudioBuffer& wb,
                    const std::vector<int>* codes = nullptr);

// Frame-by-frame extension; concatenated outputs match batch extend().
class ExtendStream {
 public:
  explicit ExtendStream(const Model& m);
  // Push one 320-sample frame; guided mode also takes its code. Returns
  // 640 output samples per call once the 5 ms look-ahead is available.
  std::vector<float> push(std::span<const float> frame, int code = -1);
  // Processes buffered frames plus the two zero flush frames.
  std::vector<float> flush();
  double delay_samples() const;

 private:
  std::vector<float> process_frame(int frame_index);

  const Model& m_;
  GenStreamState gstate_;
  PqmfState an_state_, syn_state_;
  std::vector<float> inbuf_;  // tail of the input for mel windows
  int64_t inbuf_base_ = 0;
  std::vector<std::vector<float>> pending_;  // frames awaiting look-ahead
  std::vector<int> codes_;
  int next_frame_ = 0;
  bool flushed_ = false;
};

double extend_delay_samples(const GeneratorConfig& cfg);

}  // namespace ubgan
