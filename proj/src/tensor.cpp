#include "ubgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ubgan/error.hpp"
#include "ubgan/fft.hpp"

namespace ubgan {

Tensor::Tensor(std::vector<int> shape, float fill, bool requires_grad) {
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(size_t(impl_->numel()), fill);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values,
                    bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  require(int64_t(values.size()) == t.impl_->numel(), Errc::shape_mismatch,
          "Tensor::from: value count does not match shape");
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float v) { return from({1}, {v}); }

float Tensor::item() const {
  require(numel() == 1, Errc::shape_mismatch, "item: tensor is not scalar");
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

Tensor Tensor::wrap(std::shared_ptr<Impl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

namespace nn {

namespace {
thread_local bool g_grad_enabled = true;

using ImplPtr = std::shared_ptr<Tensor::Impl>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

Tensor make_node(std::vector<int> shape, std::vector<float> data,
                 std::vector<ImplPtr> parents,
                 std::function<void(Tensor::Impl&)> backward_fn) {
  auto impl = std::make_shared<Tensor::Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (backward_fn) {
    impl->requires_grad = true;
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(impl);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), Errc::shape_mismatch,
          std::string(op) + ": shape mismatch");
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Rational Rational::from_value(double v) {
  static const std::pair<double, Rational> table[] = {
      {1.0, {1, 1}},   {2.0, {2, 1}},   {2.5, {5, 2}},   {4.0, {4, 1}},
      {10.0, {10, 1}}, {20.0, {20, 1}}, {40.0, {40, 1}}, {80.0, {80, 1}},
  };
  for (const auto& [val, r] : table) {
    if (std::abs(v - val) < 1e-9) return r;
    if (std::abs(v - 1.0 / val) < 1e-12) return r.inverse();
  }
  fail(Errc::invalid_config, "unsupported interpolation factor");
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* /*name*/, Fwd fwd, Bwd bwd) {
  std::vector<float> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
  if (!recording({&a})) return Tensor::from(a.shape(), std::move(out));
  auto pa = a.impl();
  auto result = make_node(a.shape(), std::move(out), {pa},
                          [pa, bwd](Tensor::Impl& self) {
                            pa->ensure_grad();
                            for (size_t i = 0; i < self.grad.size(); ++i)
                              pa->grad[i] += self.grad[i] *
                                             bwd(pa->data[i], self.data[i]);
                          });
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<float> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  if (!recording({&a, &b})) return Tensor::from(a.shape(), std::move(out));
  auto pa = a.impl(), pb = b.impl();
  return make_node(a.shape(), std::move(out), {pa, pb},
                   [pa, pb](Tensor::Impl& self) {
                     pa->ensure_grad();
                     pb->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       pa->grad[i] += self.grad[i];
                       pb->grad[i] += self.grad[i];
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<float> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  if (!recording({&a, &b})) return Tensor::from(a.shape(), std::move(out));
  auto pa = a.impl(), pb = b.impl();
  return make_node(a.shape(), std::move(out), {pa, pb},
                   [pa, pb](Tensor::Impl& self) {
                     pa->ensure_grad();
                     pb->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       pa->grad[i] += self.grad[i];
                       pb->grad[i] -= self.grad[i];
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<float> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  if (!recording({&a, &b})) return Tensor::from(a.shape(), std::move(out));
  auto pa = a.impl(), pb = b.impl();
  return make_node(a.shape(), std::move(out), {pa, pb},
                   [pa, pb](Tensor::Impl& self) {
                     pa->ensure_grad();
                     pb->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       pa->grad[i] += self.grad[i] * pb->data[i];
                       pb->grad[i] += self.grad[i] * pa->data[i];
                     }
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::vector<float> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  if (!recording({&a, &b})) return Tensor::from(a.shape(), std::move(out));
  auto pa = a.impl(), pb = b.impl();
  return make_node(a.shape(), std::move(out), {pa, pb},
                   [pa, pb](Tensor::Impl& self) {
                     pa->ensure_grad();
                     pb->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       const float inv = 1.0f / pb->data[i];
                       pa->grad[i] += self.grad[i] * inv;
                       pb->grad[i] -= self.grad[i] * pa->data[i] * inv * inv;
                     }
                   });
}

Tensor scale(const Tensor& a, float s) {
  return unary_op(
      a, "scale", [s](float v) { return v * s; },
      [s](float, float) { return s; });
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary_op(
      a, "add_scalar", [s](float v) { return v + s; },
      [](float, float) { return 1.0f; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

Tensor tanh_t(const Tensor& a) {
  return unary_op(
      a, "tanh", [](float v) { return std::tanh(v); },
      [](float, float y) { return 1.0f - y * y; });
}

Tensor sigmoid_t(const Tensor& a) {
  return unary_op(
      a, "sigmoid", [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor abs_t(const Tensor& a) {
  return unary_op(
      a, "abs", [](float v) { return std::fabs(v); },
      [](float x, float) { return x >= 0.0f ? 1.0f : -1.0f; });
}

Tensor log_t(const Tensor& a) {
  return unary_op(
      a, "log", [](float v) { return std::log(v); },
      [](float x, float) { return 1.0f / x; });
}

Tensor sqrt_t(const Tensor& a) {
  return unary_op(
      a, "sqrt", [](float v) { return std::sqrt(v); },
      [](float, float y) { return 0.5f / std::max(y, 1e-20f); });
}

Tensor square_t(const Tensor& a) {
  return unary_op(
      a, "square", [](float v) { return v * v; },
      [](float x, float) { return 2.0f * x; });
}

Tensor clamp_min(const Tensor& a, float lo) {
  return unary_op(
      a, "clamp_min", [lo](float v) { return v < lo ? lo : v; },
      [lo](float x, float) { return x < lo ? 0.0f : 1.0f; });
}

Tensor leaky_relu(const Tensor& a, float slope) {
  return unary_op(
      a, "leaky_relu", [slope](float v) { return v >= 0.0f ? v : slope * v; },
      [slope](float x, float) { return x >= 0.0f ? 1.0f : slope; });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  std::vector<float> out{float(acc)};
  if (!recording({&a})) return Tensor::from({1}, std::move(out));
  auto pa = a.impl();
  return make_node({1}, std::move(out), {pa}, [pa](Tensor::Impl& self) {
    pa->ensure_grad();
    const float g = self.grad[0];
    for (auto& v : pa->grad) v += g;
  });
}

Tensor mean(const Tensor& a) {
  const int64_t n = a.numel();
  require(n > 0, Errc::shape_mismatch, "mean: empty tensor");
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  std::vector<float> out{float(acc / double(n))};
  if (!recording({&a})) return Tensor::from({1}, std::move(out));
  auto pa = a.impl();
  return make_node({1}, std::move(out), {pa}, [pa, n](Tensor::Impl& self) {
    pa->ensure_grad();
    const float g = self.grad[0] / float(n);
    for (auto& v : pa->grad) v += g;
  });
}

// ---------------------------------------------------------------------------
// shape ops

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  require(x.rank() == 2, Errc::shape_mismatch, "slice_rows: rank-2 only");
  const int R = x.dim(0), T = x.dim(1);
  require(0 <= r0 && r0 < r1 && r1 <= R, Errc::shape_mismatch,
          "slice_rows: bad range");
  std::vector<float> out(size_t(r1 - r0) * T);
  std::copy(x.data() + size_t(r0) * T, x.data() + size_t(r1) * T, out.begin());
  if (!recording({&x})) return Tensor::from({r1 - r0, T}, std::move(out));
  auto px = x.impl();
  return make_node({r1 - r0, T}, std::move(out), {px},
                   [px, r0, T](Tensor::Impl& self) {
                     px->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i)
                       px->grad[size_t(r0) * T + i] += self.grad[i];
                   });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require(x.rank() == 2, Errc::shape_mismatch, "slice_cols: rank-2 only");
  const int R = x.dim(0), T = x.dim(1);
  require(0 <= c0 && c0 < c1 && c1 <= T, Errc::shape_mismatch,
          "slice_cols: bad range");
  const int W = c1 - c0;
  std::vector<float> out(size_t(R) * W);
  for (int r = 0; r < R; ++r)
    std::copy(x.data() + size_t(r) * T + c0, x.data() + size_t(r) * T + c1,
              out.begin() + size_t(r) * W);
  if (!recording({&x})) return Tensor::from({R, W}, std::move(out));
  auto px = x.impl();
  return make_node({R, W}, std::move(out), {px},
                   [px, c0, T, R, W](Tensor::Impl& self) {
                     px->ensure_grad();
                     for (int r = 0; r < R; ++r)
                       for (int c = 0; c < W; ++c)
                         px->grad[size_t(r) * T + c0 + c] +=
                             self.grad[size_t(r) * W + c];
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), Errc::shape_mismatch, "concat_rows: empty");
  const int T = parts[0].dim(1);
  int R = 0;
  bool rec = false;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(1) == T, Errc::shape_mismatch,
            "concat_rows: column mismatch");
    R += p.dim(0);
    rec = rec || (g_grad_enabled && p.requires_grad());
  }
  std::vector<float> out;
  out.reserve(size_t(R) * T);
  for (const auto& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  if (!rec) return Tensor::from({R, T}, std::move(out));
  std::vector<ImplPtr> parents;
  for (const auto& p : parts) parents.push_back(p.impl());
  return make_node({R, T}, std::move(out), parents,
                   [parents, T](Tensor::Impl& self) {
                     size_t off = 0;
                     for (const auto& p : parents) {
                       p->ensure_grad();
                       for (size_t i = 0; i < p->grad.size(); ++i)
                         p->grad[i] += self.grad[off + i];
                       off += p->grad.size();
                     }
                   });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), Errc::shape_mismatch, "concat_cols: empty");
  const int R = parts[0].dim(0);
  int T = 0;
  bool rec = false;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(0) == R, Errc::shape_mismatch,
            "concat_cols: row mismatch");
    T += p.dim(1);
    rec = rec || (g_grad_enabled && p.requires_grad());
  }
  std::vector<float> out(size_t(R) * T);
  int off = 0;
  for (const auto& p : parts) {
    const int W = p.dim(1);
    for (int r = 0; r < R; ++r)
      std::copy(p.data() + size_t(r) * W, p.data() + size_t(r + 1) * W,
                out.begin() + size_t(r) * T + off);
    off += W;
  }
  if (!rec) return Tensor::from({R, T}, std::move(out));
  std::vector<ImplPtr> parents;
  for (const auto& p : parts) parents.push_back(p.impl());
  std::vector<int> widths;
  for (const auto& p : parts) widths.push_back(p.dim(1));
  return make_node({R, T}, std::move(out), parents,
                   [parents, widths, R, T](Tensor::Impl& self) {
                     int off = 0;
                     for (size_t n = 0; n < parents.size(); ++n) {
                       auto& p = parents[n];
                       p->ensure_grad();
                       const int W = widths[n];
                       for (int r = 0; r < R; ++r)
                         for (int c = 0; c < W; ++c)
                           p->grad[size_t(r) * W + c] +=
                               self.grad[size_t(r) * T + off + c];
                       off += W;
                     }
                   });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  require(n == x.numel(), Errc::shape_mismatch, "reshape: numel mismatch");
  std::vector<float> out = x.values();
  if (!recording({&x})) return Tensor::from(std::move(shape), std::move(out));
  auto px = x.impl();
  return make_node(std::move(shape), std::move(out), {px},
                   [px](Tensor::Impl& self) {
                     px->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i)
                       px->grad[i] += self.grad[i];
                   });
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          Errc::shape_mismatch, "matmul: incompatible shapes");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(size_t(m) * n, 0.0f);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const float av = a.data()[size_t(i) * k + p];
      const float* brow = b.data() + size_t(p) * n;
      float* orow = out.data() + size_t(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  if (!recording({&a, &b})) return Tensor::from({m, n}, std::move(out));
  auto pa = a.impl(), pb = b.impl();
  return make_node({m, n}, std::move(out), {pa, pb},
                   [pa, pb, m, k, n](Tensor::Impl& self) {
                     pa->ensure_grad();
                     pb->ensure_grad();
                     // dA = G B^T, dB = A^T G
                     for (int i = 0; i < m; ++i)
                       for (int p = 0; p < k; ++p) {
                         const float* grow = self.grad.data() + size_t(i) * n;
                         const float* brow = pb->data.data() + size_t(p) * n;
                         float acc = 0.0f;
                         for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                         pa->grad[size_t(i) * k + p] += acc;
                       }
                     for (int p = 0; p < k; ++p)
                       for (int i = 0; i < m; ++i) {
                         const float av = pa->data[size_t(i) * k + p];
                         const float* grow = self.grad.data() + size_t(i) * n;
                         float* brow = pb->grad.data() + size_t(p) * n;
                         for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                       }
                   });
}

// ---------------------------------------------------------------------------
// kernels shared with the streaming path

namespace kernels {

void depthwise(const float* xpad, int C, int T, int K, const float* w,
               float* y) {
  // xpad rows have K-1+T entries; y[c,t] = sum_k w[c,k] xpad[c, t+k]
  const int stride = T + K - 1;
  for (int c = 0; c < C; ++c) {
    const float* xr = xpad + size_t(c) * stride;
    const float* wr = w + size_t(c) * K;
    float* yr = y + size_t(c) * T;
    for (int t = 0; t < T; ++t) yr[t] = 0.0f;
    for (int k = 0; k < K; ++k) {
      const float wv = wr[k];
      for (int t = 0; t < T; ++t) yr[t] += wv * xr[t + k];
    }
  }
}

void pointwise(const float* x, int cin, int T, const float* w, const float* b,
               int cout, float* y) {
  for (int o = 0; o < cout; ++o) {
    float* yr = y + size_t(o) * T;
    const float bv = b ? b[o] : 0.0f;
    for (int t = 0; t < T; ++t) yr[t] = bv;
    const float* wr = w + size_t(o) * cin;
    for (int i = 0; i < cin; ++i) {
      const float wv = wr[i];
      const float* xr = x + size_t(i) * T;
      for (int t = 0; t < T; ++t) yr[t] += wv * xr[t];
    }
  }
}

void dense_conv(const float* xpad, int cin, int T, int K, const float* w,
                const float* b, int cout, float* y) {
  const int stride = T + K - 1;
  for (int o = 0; o < cout; ++o) {
    float* yr = y + size_t(o) * T;
    const float bv = b ? b[o] : 0.0f;
    for (int t = 0; t < T; ++t) yr[t] = bv;
    for (int i = 0; i < cin; ++i) {
      const float* xr = xpad + size_t(i) * stride;
      const float* wr = w + (size_t(o) * cin + i) * K;
      for (int k = 0; k < K; ++k) {
        const float wv = wr[k];
        for (int t = 0; t < T; ++t) yr[t] += wv * xr[t + k];
      }
    }
  }
}

void channel_norm_col(const float* x, int C, const float* scale,
                      const float* shift, float* y) {
  // x, y strided by the caller via gather/scatter; here contiguous columns
  double mu = 0.0;
  for (int c = 0; c < C; ++c) mu += x[c];
  mu /= C;
  double var = 0.0;
  for (int c = 0; c < C; ++c) {
    const double d = x[c] - mu;
    var += d * d;
  }
  var /= C;
  const float istd = float(1.0 / std::sqrt(var + 1e-5));
  for (int c = 0; c < C; ++c)
    y[c] = scale[c] * ((x[c] - float(mu)) * istd) + shift[c];
}

void interp_chunk(const float* x, int C, int stride_x, int t_in, int t_out,
                  int num, int den, bool nearest, float* y, int stride_y) {
  for (int j = 0; j < t_out; ++j) {
    const int64_t pos_num = int64_t(j) * den;
    const int i0 = int(pos_num / num);
    const int rem = int(pos_num - int64_t(i0) * num);
    if (nearest || rem == 0) {
      for (int c = 0; c < C; ++c)
        y[size_t(c) * stride_y + j] = x[size_t(c) * stride_x + i0];
    } else {
      const float wfrac = float(rem) / float(num);
      const int i1 = std::min(i0 + 1, t_in - 1);
      for (int c = 0; c < C; ++c) {
        const float a = x[size_t(c) * stride_x + i0];
        const float b = x[size_t(c) * stride_x + i1];
        y[size_t(c) * stride_y + j] = (1.0f - wfrac) * a + wfrac * b;
      }
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// convolutions

namespace {

std::vector<float> left_pad(const Tensor& x, int K) {
  const int C = x.dim(0), T = x.dim(1);
  std::vector<float> xpad(size_t(C) * (T + K - 1), 0.0f);
  for (int c = 0; c < C; ++c)
    std::copy(x.data() + size_t(c) * T, x.data() + size_t(c + 1) * T,
              xpad.begin() + size_t(c) * (T + K - 1) + (K - 1));
  return xpad;
}

}  // namespace

Tensor depthwise_causal_conv1d(const Tensor& x, const Tensor& w) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(0) == w.dim(0),
          Errc::shape_mismatch, "depthwise_conv: channel mismatch");
  const int C = x.dim(0), T = x.dim(1), K = w.dim(1);
  auto xpad = left_pad(x, K);
  std::vector<float> out(size_t(C) * T);
  kernels::depthwise(xpad.data(), C, T, K, w.data(), out.data());
  if (!recording({&x, &w})) return Tensor::from({C, T}, std::move(out));
  auto px = x.impl(), pw = w.impl();
  return make_node(
      {C, T}, std::move(out), {px, pw},
      [px, pw, xpad = std::move(xpad), C, T, K](Tensor::Impl& self) {
        px->ensure_grad();
        pw->ensure_grad();
        const int stride = T + K - 1;
        for (int c = 0; c < C; ++c) {
          const float* g = self.grad.data() + size_t(c) * T;
          const float* xr = xpad.data() + size_t(c) * stride;
          for (int k = 0; k < K; ++k) {
            const float wv = pw->data[size_t(c) * K + k];
            float dw = 0.0f;
            float* gx = px->grad.data() + size_t(c) * T;
            for (int t = 0; t < T; ++t) {
              dw += g[t] * xr[t + k];
              const int src = t + k - (K - 1);
              if (src >= 0) gx[src] += wv * g[t];
            }
            pw->grad[size_t(c) * K + k] += dw;
          }
        }
      });
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2 && x.dim(0) == w.dim(1),
          Errc::shape_mismatch, "pointwise_conv: channel mismatch");
  const int cin = x.dim(0), T = x.dim(1), cout = w.dim(0);
  require(b.numel() == cout, Errc::shape_mismatch, "pointwise_conv: bias size");
  std::vector<float> out(size_t(cout) * T);
  kernels::pointwise(x.data(), cin, T, w.data(), b.data(), cout, out.data());
  if (!recording({&x, &w, &b})) return Tensor::from({cout, T}, std::move(out));
  auto px = x.impl(), pw = w.impl(), pb = b.impl();
  return make_node(
      {cout, T}, std::move(out), {px, pw, pb},
      [px, pw, pb, cin, cout, T](Tensor::Impl& self) {
        px->ensure_grad();
        pw->ensure_grad();
        pb->ensure_grad();
        for (int o = 0; o < cout; ++o) {
          const float* g = self.grad.data() + size_t(o) * T;
          double db = 0.0;
          for (int t = 0; t < T; ++t) db += g[t];
          pb->grad[o] += float(db);
          for (int i = 0; i < cin; ++i) {
            const float* xr = px->data.data() + size_t(i) * T;
            float* gx = px->grad.data() + size_t(i) * T;
            const float wv = pw->data[size_t(o) * cin + i];
            float dw = 0.0f;
            for (int t = 0; t < T; ++t) {
              dw += g[t] * xr[t];
              gx[t] += wv * g[t];
            }
            pw->grad[size_t(o) * cin + i] += dw;
          }
        }
      });
}

Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 3 && x.dim(0) == w.dim(1),
          Errc::shape_mismatch, "causal_conv1d: channel mismatch");
  const int cin = x.dim(0), T = x.dim(1);
  const int cout = w.dim(0), K = w.dim(2);
  require(b.numel() == cout, Errc::shape_mismatch, "causal_conv1d: bias size");
  auto xpad = left_pad(x, K);
  std::vector<float> out(size_t(cout) * T);
  kernels::dense_conv(xpad.data(), cin, T, K, w.data(), b.data(), cout,
                      out.data());
  if (!recording({&x, &w, &b})) return Tensor::from({cout, T}, std::move(out));
  auto px = x.impl(), pw = w.impl(), pb = b.impl();
  return make_node(
      {cout, T}, std::move(out), {px, pw, pb},
      [px, pw, pb, xpad = std::move(xpad), cin, cout, T, K](Tensor::Impl& self) {
        px->ensure_grad();
        pw->ensure_grad();
        pb->ensure_grad();
        const int stride = T + K - 1;
        for (int o = 0; o < cout; ++o) {
          const float* g = self.grad.data() + size_t(o) * T;
          double db = 0.0;
          for (int t = 0; t < T; ++t) db += g[t];
          pb->grad[o] += float(db);
          for (int i = 0; i < cin; ++i) {
            const float* xr = xpad.data() + size_t(i) * stride;
            float* gx = px->grad.data() + size_t(i) * T;
            for (int k = 0; k < K; ++k) {
              const float wv = pw->data[(size_t(o) * cin + i) * K + k];
              float dw = 0.0f;
              for (int t = 0; t < T; ++t) {
                dw += g[t] * xr[t + k];
                const int src = t + k - (K - 1);
                if (src >= 0) gx[src] += wv * g[t];
              }
              pw->grad[(size_t(o) * cin + i) * K + k] += dw;
            }
          }
        }
      });
}

Tensor dsconv1d(const Tensor& x, const Tensor& dw, const Tensor& pw,
                const Tensor& b) {
  return pointwise_conv(depthwise_causal_conv1d(x, dw), pw, b);
}

// ---------------------------------------------------------------------------

Tensor channel_norm(const Tensor& x, const Tensor& scl, const Tensor& shf) {
  require(x.rank() == 2, Errc::shape_mismatch, "channel_norm: rank-2 only");
  const int C = x.dim(0), T = x.dim(1);
  require(scl.numel() == C && shf.numel() == C, Errc::shape_mismatch,
          "channel_norm: affine size mismatch");
  std::vector<float> out(size_t(C) * T);
  std::vector<float> col(C), ocol(C);
  std::vector<float> zsave(size_t(C) * T);
  std::vector<float> istds(T);
  for (int t = 0; t < T; ++t) {
    for (int c = 0; c < C; ++c) col[c] = x.data()[size_t(c) * T + t];
    kernels::channel_norm_col(col.data(), C, scl.data(), shf.data(),
                              ocol.data());
    // recover z and istd for the backward pass
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += col[c];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (col[c] - mu) * (col[c] - mu);
    var /= C;
    const float istd = float(1.0 / std::sqrt(var + 1e-5));
    istds[t] = istd;
    for (int c = 0; c < C; ++c) {
      zsave[size_t(c) * T + t] = (col[c] - float(mu)) * istd;
      out[size_t(c) * T + t] = ocol[c];
    }
  }
  if (!recording({&x, &scl, &shf}))
    return Tensor::from({C, T}, std::move(out));
  auto px = x.impl(), ps = scl.impl(), pf = shf.impl();
  return make_node(
      {C, T}, std::move(out), {px, ps, pf},
      [px, ps, pf, zsave = std::move(zsave), istds = std::move(istds), C,
       T](Tensor::Impl& self) {
        px->ensure_grad();
        ps->ensure_grad();
        pf->ensure_grad();
        for (int t = 0; t < T; ++t) {
          double gz_mean = 0.0, gzz_mean = 0.0;
          for (int c = 0; c < C; ++c) {
            const float g = self.grad[size_t(c) * T + t];
            const float z = zsave[size_t(c) * T + t];
            ps->grad[c] += g * z;
            pf->grad[c] += g;
            const float gz = g * ps->data[c];
            gz_mean += gz;
            gzz_mean += double(gz) * z;
          }
          gz_mean /= C;
          gzz_mean /= C;
          for (int c = 0; c < C; ++c) {
            const float g = self.grad[size_t(c) * T + t];
            const float z = zsave[size_t(c) * T + t];
            const float gz = g * ps->data[c];
            px->grad[size_t(c) * T + t] +=
                istds[t] * (gz - float(gz_mean) - z * float(gzz_mean));
          }
        }
      });
}

Tensor gated(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "gated");
  return mul(tanh_t(a), sigmoid_t(b));
}

Tensor interp(const Tensor& x, Rational f, InterpMode mode, int frame_len) {
  require(x.rank() == 2, Errc::shape_mismatch, "interp: rank-2 only");
  const int C = x.dim(0), T = x.dim(1);
  if (frame_len <= 0) frame_len = T;
  require(T % frame_len == 0, Errc::shape_mismatch,
          "interp: length not a multiple of frame_len");
  require((int64_t(frame_len) * f.num) % f.den == 0,
          Errc::non_integral_output_length,
          "interp: factor does not give an integral output length");
  const int chunks = T / frame_len;
  const int out_chunk = int(int64_t(frame_len) * f.num / f.den);
  const int T_out = chunks * out_chunk;
  const bool nearest = mode == InterpMode::nearest;

  std::vector<float> out(size_t(C) * T_out);
  for (int ch = 0; ch < chunks; ++ch)
    kernels::interp_chunk(x.data() + size_t(ch) * frame_len, C, T,
                          frame_len, out_chunk, f.num, f.den, nearest,
                          out.data() + size_t(ch) * out_chunk, T_out);
  if (!recording({&x})) return Tensor::from({C, T_out}, std::move(out));
  auto px = x.impl();
  return make_node(
      {C, T_out}, std::move(out), {px},
      [px, C, T, T_out, frame_len, out_chunk, f, nearest,
       chunks](Tensor::Impl& self) {
        px->ensure_grad();
        for (int ch = 0; ch < chunks; ++ch) {
          const int xoff = ch * frame_len;
          const int yoff = ch * out_chunk;
          for (int j = 0; j < out_chunk; ++j) {
            const int64_t pos_num = int64_t(j) * f.den;
            const int i0 = int(pos_num / f.num);
            const int rem = int(pos_num - int64_t(i0) * f.num);
            if (nearest || rem == 0) {
              for (int c = 0; c < C; ++c)
                px->grad[size_t(c) * T + xoff + i0] +=
                    self.grad[size_t(c) * T_out + yoff + j];
            } else {
              const float wfrac = float(rem) / float(f.num);
              const int i1 = std::min(i0 + 1, frame_len - 1);
              for (int c = 0; c < C; ++c) {
                const float g = self.grad[size_t(c) * T_out + yoff + j];
                px->grad[size_t(c) * T + xoff + i0] += (1.0f - wfrac) * g;
                px->grad[size_t(c) * T + xoff + i1] += wfrac * g;
              }
            }
          }
        }
      });
}

Tensor quantize_st(const Tensor& z, std::vector<int>* indices_out) {
  const int64_t n = z.numel();
  std::vector<float> out(size_t(n));
  if (indices_out) indices_out->assign(size_t(n), 0);
  std::vector<float> bounded(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    const float b = std::tanh(z.data()[i]);
    bounded[i] = b;
    // round half away from zero on the 16-level grid
    const double scaled = (double(b) + 1.0) / 2.0 * 15.0;
    int idx = int(scaled >= 0.0 ? std::floor(scaled + 0.5)
                                : std::ceil(scaled - 0.5));
    idx = std::clamp(idx, 0, 15);
    if (indices_out) (*indices_out)[i] = idx;
    out[i] = float(2.0 * idx / 15.0 - 1.0);
  }
  if (!recording({&z})) return Tensor::from(z.shape(), std::move(out));
  auto pz = z.impl();
  return make_node(z.shape(), std::move(out), {pz},
                   [pz, bounded = std::move(bounded)](Tensor::Impl& self) {
                     // straight-through: gradient of the tanh bound alone
                     pz->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i)
                       pz->grad[i] +=
                           self.grad[i] * (1.0f - bounded[i] * bounded[i]);
                   });
}

// ---------------------------------------------------------------------------
// STFT ops

namespace {

std::vector<double> hann_window(int win) {
  std::vector<double> w(win);
  for (int i = 0; i < win; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * i / win);
  return w;
}

}  // namespace

Tensor stft_magnitude(const Tensor& x, int win, int hop) {
  require(x.rank() == 1, Errc::shape_mismatch, "stft: rank-1 input");
  const int T = x.dim(0);
  require(T >= win, Errc::shape_mismatch, "stft: input shorter than window");
  const int frames = (T - win) / hop + 1;
  const int bins = win / 2 + 1;
  const auto window = hann_window(win);

  std::vector<float> out(size_t(bins) * frames);
  std::vector<float> res(size_t(bins) * frames), ims(size_t(bins) * frames);
  std::vector<float> frame(win);
  std::vector<double> re, im;
  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < win; ++i)
      frame[i] = float(double(x.data()[f * hop + i]) * window[i]);
    dsp::rfft(frame.data(), win, re, im);
    for (int k = 0; k < bins; ++k) {
      res[size_t(k) * frames + f] = float(re[k]);
      ims[size_t(k) * frames + f] = float(im[k]);
      out[size_t(k) * frames + f] = float(std::hypot(re[k], im[k]));
    }
  }
  if (!recording({&x})) return Tensor::from({bins, frames}, std::move(out));
  auto px = x.impl();
  return make_node(
      {bins, frames}, std::move(out), {px},
      [px, res = std::move(res), ims = std::move(ims),
       window = std::move(window), win, hop, frames, bins](Tensor::Impl& self) {
        px->ensure_grad();
        std::vector<double> gre(bins), gim(bins), gx(win);
        for (int f = 0; f < frames; ++f) {
          for (int k = 0; k < bins; ++k) {
            const size_t idx = size_t(k) * frames + f;
            const double m =
                std::max(double(self.data[idx]), 1e-20);
            const double g = self.grad[idx];
            gre[k] = g * res[idx] / m;
            gim[k] = g * ims[idx] / m;
          }
          std::fill(gx.begin(), gx.end(), 0.0);
          dsp::rfft_adjoint(gre, gim, win, gx);
          for (int i = 0; i < win; ++i)
            px->grad[f * hop + i] += float(gx[i] * window[i]);
        }
      });
}

Tensor stft_complex(const Tensor& x, int win, int hop) {
  require(x.rank() == 1, Errc::shape_mismatch, "stft: rank-1 input");
  const int T = x.dim(0);
  require(T >= win, Errc::shape_mismatch, "stft: input shorter than window");
  const int frames = (T - win) / hop + 1;
  const int bins = win / 2 + 1;
  const auto window = hann_window(win);

  std::vector<float> out(size_t(2) * bins * frames);
  std::vector<float> frame(win);
  std::vector<double> re, im;
  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < win; ++i)
      frame[i] = float(double(x.data()[f * hop + i]) * window[i]);
    dsp::rfft(frame.data(), win, re, im);
    for (int k = 0; k < bins; ++k) {
      out[size_t(k) * frames + f] = float(re[k]);
      out[size_t(bins + k) * frames + f] = float(im[k]);
    }
  }
  if (!recording({&x}))
    return Tensor::from({2, bins, frames}, std::move(out));
  auto px = x.impl();
  return make_node(
      {2, bins, frames}, std::move(out), {px},
      [px, window = std::move(window), win, hop, frames,
       bins](Tensor::Impl& self) {
        px->ensure_grad();
        std::vector<double> gre(bins), gim(bins), gx(win);
        for (int f = 0; f < frames; ++f) {
          for (int k = 0; k < bins; ++k) {
            gre[k] = self.grad[size_t(k) * frames + f];
            gim[k] = self.grad[size_t(bins + k) * frames + f];
          }
          std::fill(gx.begin(), gx.end(), 0.0);
          dsp::rfft_adjoint(gre, gim, win, gx);
          for (int i = 0; i < win; ++i)
            px->grad[f * hop + i] += float(gx[i] * window[i]);
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d (stride on the W axis only)

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride_w,
              int pad_h, int pad_w) {
  require(x.rank() == 3 && w.rank() == 4 && x.dim(0) == w.dim(1),
          Errc::shape_mismatch, "conv2d: channel mismatch");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  require(b.numel() == O, Errc::shape_mismatch, "conv2d: bias size");
  const int HO = H + 2 * pad_h - KH + 1;
  const int WO = (W + 2 * pad_w - KW) / stride_w + 1;
  require(HO > 0 && WO > 0, Errc::shape_mismatch, "conv2d: output too small");

  auto at = [&](const float* base, int c, int i, int j) -> float {
    if (i < 0 || i >= H || j < 0 || j >= W) return 0.0f;
    return base[(size_t(c) * H + i) * W + j];
  };
  std::vector<float> out(size_t(O) * HO * WO);
  for (int o = 0; o < O; ++o) {
    for (int i = 0; i < HO; ++i)
      for (int j = 0; j < WO; ++j) {
        float acc = b.data()[o];
        for (int c = 0; c < C; ++c)
          for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw)
              acc += w.data()[((size_t(o) * C + c) * KH + kh) * KW + kw] *
                     at(x.data(), c, i + kh - pad_h, j * stride_w + kw - pad_w);
        out[(size_t(o) * HO + i) * WO + j] = acc;
      }
  }
  if (!recording({&x, &w, &b}))
    return Tensor::from({O, HO, WO}, std::move(out));
  auto px = x.impl(), pw = w.impl(), pb = b.impl();
  return make_node(
      {O, HO, WO}, std::move(out), {px, pw, pb},
      [px, pw, pb, C, H, W, O, KH, KW, HO, WO, stride_w, pad_h,
       pad_w](Tensor::Impl& self) {
        px->ensure_grad();
        pw->ensure_grad();
        pb->ensure_grad();
        for (int o = 0; o < O; ++o)
          for (int i = 0; i < HO; ++i)
            for (int j = 0; j < WO; ++j) {
              const float g = self.grad[(size_t(o) * HO + i) * WO + j];
              if (g == 0.0f) continue;
              pb->grad[o] += g;
              for (int c = 0; c < C; ++c)
                for (int kh = 0; kh < KH; ++kh) {
                  const int xi = i + kh - pad_h;
                  if (xi < 0 || xi >= H) continue;
                  for (int kw = 0; kw < KW; ++kw) {
                    const int xj = j * stride_w + kw - pad_w;
                    if (xj < 0 || xj >= W) continue;
                    const size_t widx =
                        ((size_t(o) * C + c) * KH + kh) * KW + kw;
                    const size_t xidx = (size_t(c) * H + xi) * W + xj;
                    pw->grad[widx] += g * px->data[xidx];
                    px->grad[xidx] += g * pw->data[widx];
                  }
                }
            }
      });
}

// ---------------------------------------------------------------------------

Tensor gru_step(const Tensor& x, const Tensor& h, const GruWeights& w) {
  require(x.rank() == 1 && h.rank() == 1, Errc::shape_mismatch,
          "gru_step: rank-1 state/input");
  const int D = x.dim(0), H = h.dim(0);
  require(w.wz.shape() == std::vector<int>({H, D}) &&
              w.uz.shape() == std::vector<int>({H, H}) && w.bz.numel() == H,
          Errc::shape_mismatch, "gru_step: weight shapes");
  Tensor xc = reshape(x, {D, 1});
  Tensor hc = reshape(h, {H, 1});
  Tensor bz = reshape(w.bz, {H, 1});
  Tensor br = reshape(w.br, {H, 1});
  Tensor bh = reshape(w.bh, {H, 1});
  Tensor z = sigmoid_t(add(add(matmul(w.wz, xc), matmul(w.uz, hc)), bz));
  Tensor r = sigmoid_t(add(add(matmul(w.wr, xc), matmul(w.ur, hc)), br));
  Tensor cand =
      tanh_t(add(add(matmul(w.wh, xc), mul(r, matmul(w.uh, hc))), bh));
  // h' = (1-z) cand + z h
  Tensor hn = add(cand, mul(z, sub(hc, cand)));
  return reshape(hn, {H});
}

// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  require(loss.numel() == 1, Errc::not_scalar_loss,
          "backward: loss must be scalar");
  auto root = loss.impl();
  require(root->backward_fn || root->requires_grad, Errc::graph_detached,
          "backward: loss has no recorded graph");

  // post-order DFS (iterative) for a reverse topological order
  std::vector<Tensor::Impl*> order;
  std::unordered_set<Tensor::Impl*> visited;
  std::vector<std::pair<Tensor::Impl*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor::Impl* p = node->parents[idx++].get();
      if (!visited.count(p) && p->backward_fn) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Impl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

}  // namespace nn
}  // namespace ubgan
