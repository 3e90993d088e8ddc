#include "ubgan/adversary.hpp"

#include <cmath>

#include "ubgan/error.hpp"

namespace ubgan {

Spectrogram make_spectrogram(const Tensor& x, int window, int hop) {
  Spectrogram s;
  s.mag = nn::stft_magnitude(x, window, hop);
  s.window_length = window;
  s.hop_length = hop;
  return s;
}

Tensor loss_sc(const Spectrogram& ref, const Spectrogram& est) {
  require(ref.mag.shape() == est.mag.shape(), Errc::shape_mismatch,
          "loss_sc: spectrogram shapes differ");
  double ref_energy = 0.0;
  for (float v : ref.mag.values()) ref_energy += double(v) * v;
  require(ref_energy > 0.0, Errc::zero_reference,
          "loss_sc: reference spectrogram is all zero");
  Tensor diff = nn::sub(ref.mag, est.mag);
  Tensor num = nn::sqrt_t(nn::sum(nn::square_t(diff)));
  Tensor den = nn::sqrt_t(nn::sum(nn::square_t(ref.mag)));
  return nn::div(num, den);
}

Tensor loss_mag(const Spectrogram& ref, const Spectrogram& est) {
  require(ref.mag.shape() == est.mag.shape(), Errc::shape_mismatch,
          "loss_mag: spectrogram shapes differ");
  Tensor lr = nn::log_t(nn::clamp_min(ref.mag, 1e-7f));
  Tensor le = nn::log_t(nn::clamp_min(est.mag, 1e-7f));
  return nn::mean(nn::abs_t(nn::sub(lr, le)));
}

Tensor loss_adv_gen(const std::vector<Tensor>& disc_outputs) {
  require(disc_outputs.size() == 4, Errc::wrong_ensemble_size,
          "loss_adv_gen: expected four discriminator outputs");
  Tensor total = Tensor::scalar(0.0f);
  for (const Tensor& d : disc_outputs)
    total = nn::add(total, nn::mean(nn::square_t(nn::add_scalar(d, -1.0f))));
  return total;
}

Tensor loss_disc(const std::vector<Tensor>& real_outputs,
                 const std::vector<Tensor>& fake_outputs) {
  require(real_outputs.size() == 4 && fake_outputs.size() == 4,
          Errc::wrong_ensemble_size,
          "loss_disc: expected four discriminator outputs");
  Tensor total = Tensor::scalar(0.0f);
  for (size_t k = 0; k < 4; ++k) {
    total = nn::add(
        total, nn::mean(nn::square_t(nn::add_scalar(real_outputs[k], -1.0f))));
    total = nn::add(total, nn::mean(nn::square_t(fake_outputs[k])));
  }
  return total;
}

Tensor loss_feat(const std::vector<std::vector<Tensor>>& real_feats,
                 const std::vector<std::vector<Tensor>>& fake_feats) {
  require(real_feats.size() == fake_feats.size(), Errc::shape_mismatch,
          "loss_feat: discriminator count mismatch");
  Tensor total = Tensor::scalar(0.0f);
  for (size_t k = 0; k < real_feats.size(); ++k) {
    require(real_feats[k].size() == fake_feats[k].size(), Errc::shape_mismatch,
            "loss_feat: layer count mismatch");
    if (real_feats[k].empty()) continue;
    Tensor disc_total = Tensor::scalar(0.0f);
    for (size_t l = 0; l < real_feats[k].size(); ++l) {
      require(real_feats[k][l].shape() == fake_feats[k][l].shape(),
              Errc::shape_mismatch, "loss_feat: feature shape mismatch");
      disc_total = nn::add(
          disc_total,
          nn::mean(nn::abs_t(nn::sub(real_feats[k][l], fake_feats[k][l]))));
    }
    total = nn::add(total,
                    nn::scale(disc_total, 1.0f / float(real_feats[k].size())));
  }
  return total;
}

// ---------------------------------------------------------------------------
// discriminators

StftDiscriminator StftDiscriminator::make(LayerBuilder& bld,
                                          const std::string& prefix,
                                          int window, int channels) {
  StftDiscriminator d;
  d.window = window;
  d.hop = window / 4;  // 75% overlap
  int cin = 2;
  for (int l = 0; l < 5; ++l) {
    const float s = 1.0f / std::sqrt(float(cin * 3 * 9));
    d.conv_w.push_back(
        bld.param(prefix + ".c" + std::to_string(l) + ".w",
                  {channels, cin, 3, 9}, s));
    d.conv_b.push_back(
        bld.param(prefix + ".c" + std::to_string(l) + ".b", {channels}, 0.0f));
    cin = channels;
  }
  const float s = 1.0f / std::sqrt(float(cin * 3 * 3));
  d.conv_w.push_back(bld.param(prefix + ".out.w", {1, cin, 3, 3}, s));
  d.conv_b.push_back(bld.param(prefix + ".out.b", {1}, 0.0f));
  return d;
}

Tensor StftDiscriminator::forward(const Tensor& audio,
                                  std::vector<Tensor>* feats) const {
  Tensor x = nn::stft_complex(audio, window, hop);
  for (int l = 0; l < 5; ++l) {
    x = nn::leaky_relu(nn::conv2d(x, conv_w[l], conv_b[l], /*stride_w=*/2,
                                  /*pad_h=*/1, /*pad_w=*/4),
                       0.2f);
    if (feats) feats->push_back(x);
  }
  return nn::conv2d(x, conv_w[5], conv_b[5], 1, 1, 1);
}

std::vector<Tensor> StftDiscriminator::parameters() const {
  std::vector<Tensor> out;
  for (const auto& w : conv_w) out.push_back(w);
  for (const auto& b : conv_b) out.push_back(b);
  return out;
}

DiscriminatorEnsemble DiscriminatorEnsemble::init(unsigned seed,
                                                  int channels) {
  DiscriminatorEnsemble e;
  std::mt19937 rng(seed);
  LayerBuilder bld;
  bld.rng = &rng;
  for (int window : {2048, 1024, 512, 256})
    e.members.push_back(StftDiscriminator::make(
        bld, "disc." + std::to_string(window), window, channels));
  return e;
}

std::vector<Tensor> DiscriminatorEnsemble::forward(
    const Tensor& audio, std::vector<std::vector<Tensor>>* feats) const {
  std::vector<Tensor> outs;
  for (const auto& d : members) {
    std::vector<Tensor> f;
    outs.push_back(d.forward(audio, feats ? &f : nullptr));
    if (feats) feats->push_back(std::move(f));
  }
  return outs;
}

std::vector<Tensor> DiscriminatorEnsemble::parameters() const {
  std::vector<Tensor> out;
  for (const auto& d : members)
    for (const auto& p : d.parameters()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// optimizer

Optimizer::Optimizer(std::vector<Tensor> params, Variant variant, double lr,
                     double weight_decay)
    : params_(std::move(params)),
      variant_(variant),
      lr_(lr),
      weight_decay_(variant == Variant::adamw ? weight_decay : 0.0) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].values().size(), 0.0f);
    v_[i].assign(params_[i].values().size(), 0.0f);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, double(t_));
  const double bc2 = 1.0 - std::pow(beta2, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].values();
    const auto& g = params_[i].grad();
    for (size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : double(g[j]);
      m_[i][j] = float(beta1 * m_[i][j] + (1.0 - beta1) * gj);
      v_[i][j] = float(beta2 * v_[i][j] + (1.0 - beta2) * gj * gj);
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      double upd = lr_ * mhat / (std::sqrt(vhat) + eps);
      if (weight_decay_ > 0.0) upd += lr_ * weight_decay_ * p[j];
      p[j] = float(p[j] - upd);
    }
  }
}

void Optimizer::advance_epoch() {
  ++epoch_;
  if (epoch_ % 5 == 0) lr_ *= 0.99;
}

// ---------------------------------------------------------------------------
// toy trainer

namespace {

bool finite(double v) { return std::isfinite(v); }

}  // namespace

ToyTrainResult toy_train(const AudioBuffer& clip_swb,
                         GeneratorConfig::Mode mode,
                         const ToyTrainOptions& opts) {
  require(clip_swb.sample_rate == 32000, Errc::rate_mismatch,
          "toy_train: 32 kHz clip required");
  require(clip_swb.size() % 640 == 0, Errc::frame_alignment,
          "toy_train: clip length must be a multiple of 640 samples");

  GeneratorConfig cfg = mode == GeneratorConfig::Mode::blind
                            ? GeneratorConfig::blind()
                            : GeneratorConfig::guided();
  Model model = Model::init(cfg, opts.seed);

  const int L4 = model.proto4.length(), L8 = model.proto8.length();
  const int delay = 2 * (L4 - 1) + (L8 - 1);  // low-band chain delay at 32 kHz
  require(clip_swb.size() > delay + opts.stft_window, Errc::clip_too_short,
          "toy_train: clip too short for the loss window");
  const int len = int(clip_swb.size());

  // ideal-codec surrogate: synthesize the wideband input from the four low
  // subbands of the clip
  SubbandSignal sb8 = analysis(clip_swb, model.proto8);
  SubbandSignal low4;
  low4.num_bands = 4;
  low4.frames = sb8.frames;
  low4.data.assign(size_t(4) * sb8.frames, 0.0f);
  for (int b = 0; b < 4; ++b)
    std::copy(sb8.band(b), sb8.band(b) + sb8.frames, low4.band(b));
  AudioBuffer wb = synthesis(low4, model.proto4);

  SubbandSignal sb4 = analysis(wb, model.proto4);
  Tensor sb_low = Tensor::from({4, sb4.frames}, sb4.data);

  Tensor cond_const;  // blind conditioning, fixed across steps
  Tensor windows;     // guided encoder input, fixed across steps
  if (mode == GeneratorConfig::Mode::blind) {
    cond_const = mel_stream(wb);
  } else {
    SubbandSignal high4;
    high4.num_bands = 4;
    high4.frames = sb8.frames;
    high4.data.assign(size_t(4) * sb8.frames, 0.0f);
    for (int b = 0; b < 4; ++b)
      std::copy(sb8.band(4 + b), sb8.band(4 + b) + sb8.frames, high4.band(b));
    windows = rolling_windows(high4);
  }

  // reference: target aligned with the generated signal's chain delay
  Tensor target(std::vector<int>{len - delay});
  std::copy(clip_swb.samples.begin(), clip_swb.samples.end() - delay,
            target.values().begin());
  Spectrogram ref;
  {
    nn::NoGradGuard ng;
    ref = make_spectrogram(target, opts.stft_window, opts.stft_hop);
  }

  auto forward = [&](std::vector<int>* codes) {
    Tensor cond;
    if (mode == GeneratorConfig::Mode::blind) {
      cond = cond_const;
    } else {
      Tensor dq = model.encoder.forward(windows, codes);
      cond = model.gen.expand.forward(dq);
    }
    Tensor high = model.gen.synth_high(sb_low, cond);
    Tensor pair = model.gen.oc.forward(nn::slice_rows(sb_low, 3, 4),
                                       nn::slice_rows(high, 0, 1));
    Tensor bands8 = nn::concat_rows({
        nn::slice_rows(sb_low, 0, 3),
        pair,
        nn::slice_rows(high, 1, 4),
    });
    Tensor xhat = synthesis_op(bands8, model.proto8);  // [len]
    Tensor aligned = nn::reshape(
        nn::slice_cols(nn::reshape(xhat, {1, len}), delay, len), {len - delay});
    return aligned;
  };

  ToyTrainResult result;
  Optimizer opt_g(model.trainable(), Optimizer::Variant::adamw, opts.lr_gen);

  for (int step = 0; step < opts.steps; ++step) {
    opt_g.zero_grad();
    Tensor xhat = forward(nullptr);
    Spectrogram est = make_spectrogram(xhat, opts.stft_window, opts.stft_hop);
    Tensor l_sc = loss_sc(ref, est);
    Tensor l_mag = loss_mag(ref, est);
    Tensor loss = nn::add(l_sc, l_mag);
    require(finite(l_sc.item()) && finite(l_mag.item()), Errc::non_finite_loss,
            "toy_train: non-finite spectral loss");
    nn::backward(loss);
    opt_g.step();
    if (step % opts.trace_every == 0 || step + 1 == opts.steps)
      result.trace.push_back({step, l_sc.item(), l_mag.item(), 0, 0, 0});
  }

  if (opts.adversarial_steps > 0) {
    DiscriminatorEnsemble ensemble =
        DiscriminatorEnsemble::init(opts.seed + 17);
    Optimizer opt_d(ensemble.parameters(), Optimizer::Variant::adam,
                    opts.lr_disc);
    std::vector<std::vector<Tensor>> real_feats;
    std::vector<Tensor> real_out_const;
    {
      nn::NoGradGuard ng;  // real features are constants for the G step
      real_out_const = ensemble.forward(target, &real_feats);
    }
    for (int step = 0; step < opts.adversarial_steps; ++step) {
      // generator step: spectral + adversarial + scaled feature loss
      opt_g.zero_grad();
      Tensor xhat = forward(nullptr);
      Spectrogram est =
          make_spectrogram(xhat, opts.stft_window, opts.stft_hop);
      Tensor l_sc = loss_sc(ref, est);
      Tensor l_mag = loss_mag(ref, est);
      std::vector<std::vector<Tensor>> fake_feats;
      std::vector<Tensor> fake_out = ensemble.forward(xhat, &fake_feats);
      Tensor l_adv = loss_adv_gen(fake_out);
      Tensor l_feat = loss_feat(real_feats, fake_feats);
      Tensor loss = nn::add(nn::add(l_sc, l_mag),
                            nn::add(l_adv, nn::scale(l_feat, 10.0f)));
      require(finite(loss.item()), Errc::non_finite_loss,
              "toy_train: non-finite generator loss");
      nn::backward(loss);
      opt_g.step();

      // discriminator step on the detached estimate
      opt_d.zero_grad();
      Tensor fake = xhat.detach();
      std::vector<Tensor> d_real = ensemble.forward(target, nullptr);
      std::vector<Tensor> d_fake = ensemble.forward(fake, nullptr);
      Tensor l_d = loss_disc(d_real, d_fake);
      require(finite(l_d.item()), Errc::non_finite_loss,
              "toy_train: non-finite discriminator loss");
      nn::backward(l_d);
      opt_d.step();

      result.trace.push_back({opts.steps + step, l_sc.item(), l_mag.item(),
                              l_adv.item(), l_feat.item(), l_d.item()});
    }
  }

  if (mode == GeneratorConfig::Mode::guided) {
    nn::NoGradGuard ng;
    model.encoder.forward(windows, &result.final_codes);
  }
  result.weights = model.to_store();
  return result;
}

}  // namespace ubgan
