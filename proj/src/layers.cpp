#include "ubgan/layers.hpp"

#include <cmath>

#include "ubgan/error.hpp"

namespace ubgan {

Tensor LayerBuilder::param(const std::string& name, std::vector<int> shape,
                           float scale) {
  Tensor t;
  if (store) {
    const Tensor* found = store->find(name);
    require(found != nullptr, Errc::shape_table_mismatch,
            "weights: missing tensor " + name);
    require(found->shape() == shape, Errc::shape_table_mismatch,
            "weights: shape mismatch for " + name);
    t = found->detach();
    ++consumed;
  } else {
    t = Tensor(shape);
    if (scale > 0.0f && rng) {
      std::uniform_real_distribution<float> dist(-scale, scale);
      for (auto& v : t.values()) v = dist(*rng);
    } else if (scale < 0.0f) {
      for (auto& v : t.values()) v = -scale;  // constant fill
    }
  }
  t.set_requires_grad(true);
  if (registry) registry->emplace_back(name, t);
  return t;
}

DsConv DsConv::make(LayerBuilder& bld, const std::string& prefix, int cin,
                    int cout, int k, bool zero_init) {
  DsConv l;
  l.cin = cin;
  l.cout = cout;
  l.k = k;
  const float sd = 1.0f / std::sqrt(float(k));
  const float sp = 1.0f / std::sqrt(float(cin));
  l.dw = bld.param(prefix + ".dw", {cin, k}, zero_init ? 0.0f : sd);
  l.pw = bld.param(prefix + ".pw", {cout, cin}, zero_init ? 0.0f : sp);
  l.b = bld.param(prefix + ".b", {cout}, 0.0f);
  return l;
}

Tensor DsConv::forward(const Tensor& x) const {
  return nn::dsconv1d(x, dw, pw, b);
}

DenseConv DenseConv::make(LayerBuilder& bld, const std::string& prefix,
                          int cin, int cout, int k, bool zero_init) {
  DenseConv l;
  l.cin = cin;
  l.cout = cout;
  l.k = k;
  const float s = 1.0f / std::sqrt(float(cin * k));
  l.w = bld.param(prefix + ".w", {cout, cin, k}, zero_init ? 0.0f : s);
  l.b = bld.param(prefix + ".b", {cout}, 0.0f);
  return l;
}

Tensor DenseConv::forward(const Tensor& x) const {
  return nn::causal_conv1d(x, w, b);
}

NormLayer NormLayer::make(LayerBuilder& bld, const std::string& prefix,
                          int c) {
  NormLayer l;
  l.c = c;
  l.scale = bld.param(prefix + ".scale", {c}, -1.0f);  // ones
  l.shift = bld.param(prefix + ".shift", {c}, 0.0f);
  return l;
}

Tensor NormLayer::forward(const Tensor& x) const {
  return nn::channel_norm(x, scale, shift);
}

LinearLayer LinearLayer::make(LayerBuilder& bld, const std::string& prefix,
                              int in, int out, bool zero_init) {
  LinearLayer l;
  l.in = in;
  l.out = out;
  const float s = 1.0f / std::sqrt(float(in));
  l.w = bld.param(prefix + ".w", {out, in}, zero_init ? 0.0f : s);
  l.b = bld.param(prefix + ".b", {out}, 0.0f);
  return l;
}

Tensor LinearLayer::forward(const Tensor& x) const {
  return nn::pointwise_conv(x, w, b);
}

GruLayer GruLayer::make(LayerBuilder& bld, const std::string& prefix, int in,
                        int hidden) {
  GruLayer l;
  l.in = in;
  l.hidden = hidden;
  const float s = 1.0f / std::sqrt(float(hidden));
  l.w.wz = bld.param(prefix + ".wz", {hidden, in}, s);
  l.w.uz = bld.param(prefix + ".uz", {hidden, hidden}, s);
  l.w.bz = bld.param(prefix + ".bz", {hidden}, 0.0f);
  l.w.wr = bld.param(prefix + ".wr", {hidden, in}, s);
  l.w.ur = bld.param(prefix + ".ur", {hidden, hidden}, s);
  l.w.br = bld.param(prefix + ".br", {hidden}, 0.0f);
  l.w.wh = bld.param(prefix + ".wh", {hidden, in}, s);
  l.w.uh = bld.param(prefix + ".uh", {hidden, hidden}, s);
  l.w.bh = bld.param(prefix + ".bh", {hidden}, 0.0f);
  return l;
}

namespace {

template <class Layer>
Tensor stream_conv_impl(const Layer& layer, const Tensor& frame,
                        Tensor& hist) {
  const int T = frame.dim(1);
  const int K = layer.k;
  require(hist.defined() && hist.dim(0) == frame.dim(0) && hist.dim(1) == K - 1,
          Errc::uninitialized_state, "stream_conv: bad history shape");
  Tensor xin = nn::concat_cols({hist, frame});
  Tensor y = layer.forward(xin);
  hist = nn::slice_cols(xin, T, T + K - 1);
  return nn::slice_cols(y, K - 1, K - 1 + T);
}

}  // namespace

Tensor stream_conv(const DsConv& layer, const Tensor& frame, Tensor& hist) {
  return stream_conv_impl(layer, frame, hist);
}

Tensor stream_conv(const DenseConv& layer, const Tensor& frame, Tensor& hist) {
  return stream_conv_impl(layer, frame, hist);
}

}  // namespace ubgan
