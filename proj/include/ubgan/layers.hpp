#pragma once

#include <random>
#include <string>

#include "ubgan/tensor.hpp"
#include "ubgan/weights.hpp"

namespace ubgan {

// Creates or loads named parameters. In init mode tensors are drawn
// uniform(-s, s) from the given rng; in load mode they are pulled from a
// WeightStore and shape-checked. Every created parameter is appended to
// `registry` in construction order, which fixes the serialization order.
struct LayerBuilder {
  std::mt19937* rng = nullptr;
  const WeightStore* store = nullptr;
  std::vector<std::pair<std::string, Tensor>>* registry = nullptr;
  int consumed = 0;

  Tensor param(const std::string& name, std::vector<int> shape, float scale);
};

// Depthwise (K taps per input channel, no bias) followed by 1x1 mixing.
struct DsConv {
  Tensor dw;  // [cin, k]
  Tensor pw;  // [cout, cin]
  Tensor b;   // [cout]
  int cin = 0, cout = 0, k = 0;

  static DsConv make(LayerBuilder& bld, const std::string& prefix, int cin,
                     int cout, int k, bool zero_init = false);
  Tensor forward(const Tensor& x) const;
  int64_t params() const { return int64_t(cin) * k + int64_t(cin) * cout + cout; }
  int64_t macs_per_step() const { return int64_t(cin) * k + int64_t(cin) * cout; }
};

struct DenseConv {
  Tensor w;  // [cout, cin, k]
  Tensor b;  // [cout]
  int cin = 0, cout = 0, k = 0;

  static DenseConv make(LayerBuilder& bld, const std::string& prefix, int cin,
                        int cout, int k, bool zero_init = false);
  Tensor forward(const Tensor& x) const;
  int64_t params() const { return int64_t(cout) * cin * k + cout; }
  int64_t macs_per_step() const { return int64_t(cout) * cin * k; }
};

struct NormLayer {
  Tensor scale;  // [c], init 1
  Tensor shift;  // [c], init 0
  int c = 0;

  static NormLayer make(LayerBuilder& bld, const std::string& prefix, int c);
  Tensor forward(const Tensor& x) const;
  int64_t params() const { return 2 * int64_t(c); }
};

struct LinearLayer {
  Tensor w;  // [out, in]
  Tensor b;  // [out]
  int in = 0, out = 0;

  static LinearLayer make(LayerBuilder& bld, const std::string& prefix, int in,
                          int out, bool zero_init = false);
  // x is [in, T]; applied per column.
  Tensor forward(const Tensor& x) const;
  int64_t params() const { return int64_t(out) * in + out; }
};

struct GruLayer {
  nn::GruWeights w;
  int in = 0, hidden = 0;

  static GruLayer make(LayerBuilder& bld, const std::string& prefix, int in,
                       int hidden);
  Tensor step(const Tensor& x, const Tensor& h) const {
    return nn::gru_step(x, h, w);
  }
  int64_t params() const {
    return 3 * (int64_t(hidden) * in + int64_t(hidden) * hidden + hidden);
  }
};

// Streaming helpers: run a convolution on [history | frame] and keep the
// trailing K-1 columns as the next history. Bit-exact with the batch path.
Tensor stream_conv(const DsConv& layer, const Tensor& frame, Tensor& hist);
Tensor stream_conv(const DenseConv& layer, const Tensor& frame, Tensor& hist);

}  // namespace ubgan
