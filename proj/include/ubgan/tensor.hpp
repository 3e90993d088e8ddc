#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace ubgan {

// Dense 32-bit float tensor with optional reverse-mode gradient. Ops in
// nn:: record a tape when gradients are enabled; nn::backward() replays it.
class Tensor {
 public:
  struct Impl {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Impl>> parents;
    std::function<void(Impl&)> backward_fn;  // reads grad, accumulates parents

    int64_t numel() const {
      int64_t n = 1;
      for (int d : shape) n *= d;
      return n;
    }
    void ensure_grad() {
      if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
  };

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f,
                  bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float v);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[i]; }
  int rank() const { return int(impl_->shape.size()); }
  int64_t numel() const { return impl_->numel(); }
  float* data() { return impl_->data.data(); }
  const float* data() const { return impl_->data.data(); }
  std::vector<float>& values() { return impl_->data; }
  const std::vector<float>& values() const { return impl_->data; }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }
  const std::vector<float>& grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  }

  // Same values, no recorded history.
  Tensor detach() const;

  std::shared_ptr<Impl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<Impl> impl);

 private:
  std::shared_ptr<Impl> impl_;
};

namespace nn {

// Gradient recording is on by default; inference paths disable it in scope.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

enum class InterpMode { linear, nearest };

// Exact rational interpolation factor. Output position j samples input
// position j*den/num; tails hold the last value.
struct Rational {
  int num = 1;
  int den = 1;
  double value() const { return double(num) / den; }
  Rational inverse() const { return {den, num}; }
  static Rational from_value(double v);  // matches the supported factor set
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor neg(const Tensor& a);

Tensor tanh_t(const Tensor& a);
Tensor sigmoid_t(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor square_t(const Tensor& a);
Tensor clamp_min(const Tensor& a, float lo);
Tensor leaky_relu(const Tensor& a, float slope);

Tensor sum(const Tensor& a);   // scalar; accumulates in double
Tensor mean(const Tensor& a);  // scalar

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, std::vector<int> shape);

// x[C,T] left-padded with K-1 zeros; one kernel row per channel, no bias.
Tensor depthwise_causal_conv1d(const Tensor& x, const Tensor& w);
// 1x1 channel mixing with bias: w[Cout,Cin], b[Cout].
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b);
// Dense causal conv: w[Cout,Cin,K] stored oldest-tap-first, b[Cout].
Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);
// Depthwise then pointwise; the standard separable composition.
Tensor dsconv1d(const Tensor& x, const Tensor& dw, const Tensor& pw,
                const Tensor& b);

// Per-time-step normalization over channels, then scale/shift per channel.
Tensor channel_norm(const Tensor& x, const Tensor& scale, const Tensor& shift);

// tanh(a) * sigmoid(b); callers split channels beforehand.
Tensor gated(const Tensor& a, const Tensor& b);

// Resample [C,T] -> [C, T*f]. frame_len > 0 applies the grid per chunk of
// frame_len input steps, which keeps streaming and batch paths identical.
Tensor interp(const Tensor& x, Rational f, InterpMode mode, int frame_len = 0);

// 4-bit scalar quantizer with a straight-through tanh gradient. Values are
// bounded by tanh, mapped to the 16-level grid {2k/15 - 1}; indices_out
// (optional) receives the level indices.
Tensor quantize_st(const Tensor& z, std::vector<int>* indices_out = nullptr);

// Hann-windowed STFT magnitude of x[T]: [bins, frames], bins = win/2+1.
Tensor stft_magnitude(const Tensor& x, int win, int hop);
// Real/imaginary STFT channels: [2, bins, frames].
Tensor stft_complex(const Tensor& x, int win, int hop);

// 2-D convolution over [C,H,W]; stride applies to W only.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride_w,
              int pad_h, int pad_w);

struct GruWeights {
  Tensor wz, uz, bz;  // update gate
  Tensor wr, ur, br;  // reset gate
  Tensor wh, uh, bh;  // candidate
};

// One recurrence step: x[D], h[H] -> h'[H].
// z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
// hc = tanh(Wh x + r*(Uh h) + bh), h' = (1-z)*hc + z*h.
Tensor gru_step(const Tensor& x, const Tensor& h, const GruWeights& w);

// Populates gradients for every tensor reachable from a scalar loss.
void backward(const Tensor& loss);

// Shared raw kernels; streaming inference reuses them so that chunked and
// batch execution are bit-exact.
namespace kernels {
void depthwise(const float* xpad, int C, int T, int K, const float* w,
               float* y);
void pointwise(const float* x, int cin, int T, const float* w, const float* b,
               int cout, float* y);
void dense_conv(const float* xpad, int cin, int T, int K, const float* w,
                const float* b, int cout, float* y);
void channel_norm_col(const float* x, int C, const float* scale,
                      const float* shift, float* y);
void interp_chunk(const float* x, int C, int stride_x, int t_in, int t_out,
                  int num, int den, bool nearest, float* y, int stride_y);
}  // namespace kernels

}  // namespace nn
}  // namespace ubgan
