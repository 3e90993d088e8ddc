#include "ubgan/generator.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"

namespace ubgan {

using nlohmann::json;
using nn::Rational;

// ---------------------------------------------------------------------------
// config

void GeneratorConfig::validate() const {
  require(down_channels.size() == down_factors.size() &&
              down_channels.size() == cond_up_factors.size() &&
              !down_channels.empty(),
          Errc::invalid_config, "config: block lists must have equal length");
  require(kernel_size == 7, Errc::invalid_config,
          "config: signal-path kernel size must be 7");
  require(input_bands == 4, Errc::invalid_config,
          "config: four coded subbands expected");
  // factor product must take 80 steps/frame to an integral bottleneck
  int num = 1, den = 1;
  for (size_t i = 0; i < down_factors.size(); ++i) {
    // cond upsampling equals the block's input rate in steps per frame
    require(int64_t(frame_subband_steps) * den % num == 0 &&
                cond_up_factors[i] == frame_subband_steps * den / num,
            Errc::invalid_config,
            "config: cond_up_factors must mirror the downsample factors");
    Rational f = Rational::from_value(down_factors[i]);
    num *= f.num;
    den *= f.den;
    const int64_t g = std::gcd(int64_t(num), int64_t(den));
    num = int(num / g);
    den = int(den / g);
  }
  require(den == 1 && frame_subband_steps % num == 0, Errc::invalid_config,
          "config: factor product must divide the frame length");
  require(frame_subband_steps / num == 2 && num == 40, Errc::invalid_config,
          "config: factor product must be 40 (two bottleneck steps)");
  require(cond_dim == 80, Errc::invalid_config, "config: 80-dim conditioning");
}

int GeneratorConfig::bottleneck_steps_per_frame() const {
  double p = 1.0;
  for (double f : down_factors) p *= f;
  return int(std::lround(frame_subband_steps / p));
}

GeneratorConfig GeneratorConfig::blind() { return GeneratorConfig{}; }

GeneratorConfig GeneratorConfig::guided() {
  GeneratorConfig cfg;
  cfg.mode = Mode::guided;
  return cfg;
}

std::string GeneratorConfig::to_json() const {
  json j;
  j["arch"] = "ubgan";
  j["mode"] = mode == Mode::blind ? "blind" : "guided";
  j["down_channels"] = down_channels;
  j["down_factors"] = down_factors;
  j["cond_up_factors"] = cond_up_factors;
  j["kernel_size"] = kernel_size;
  j["frame_subband_steps"] = frame_subband_steps;
  j["cond_dim"] = cond_dim;
  j["input_bands"] = input_bands;
  j["pre_channels"] = pre_channels;
  j["pqmf4_taps_per_band"] = pqmf4_taps_per_band;
  j["pqmf8_taps_per_band"] = pqmf8_taps_per_band;
  j["se_window"] = se_window;
  j["se_latent"] = se_latent;
  j["se_gru_hidden"] = se_gru_hidden;
  return j.dump();
}

GeneratorConfig GeneratorConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception&) {
    fail(Errc::invalid_config, "config: invalid JSON");
  }
  require(j.value("arch", "") == "ubgan", Errc::invalid_config,
          "config: not a ubgan model");
  GeneratorConfig cfg;
  const std::string mode = j.value("mode", "blind");
  require(mode == "blind" || mode == "guided", Errc::invalid_config,
          "config: unknown mode");
  cfg.mode = mode == "blind" ? Mode::blind : Mode::guided;
  cfg.down_channels = j.value("down_channels", cfg.down_channels);
  cfg.down_factors = j.value("down_factors", cfg.down_factors);
  cfg.cond_up_factors = j.value("cond_up_factors", cfg.cond_up_factors);
  cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
  cfg.frame_subband_steps =
      j.value("frame_subband_steps", cfg.frame_subband_steps);
  cfg.cond_dim = j.value("cond_dim", cfg.cond_dim);
  cfg.input_bands = j.value("input_bands", cfg.input_bands);
  cfg.pre_channels = j.value("pre_channels", cfg.pre_channels);
  cfg.pqmf4_taps_per_band =
      j.value("pqmf4_taps_per_band", cfg.pqmf4_taps_per_band);
  cfg.pqmf8_taps_per_band =
      j.value("pqmf8_taps_per_band", cfg.pqmf8_taps_per_band);
  cfg.se_window = j.value("se_window", cfg.se_window);
  cfg.se_latent = j.value("se_latent", cfg.se_latent);
  cfg.se_gru_hidden = j.value("se_gru_hidden", cfg.se_gru_hidden);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// model construction

namespace {

void build_layers(Model& m, LayerBuilder& bld) {
  const GeneratorConfig& cfg = m.cfg;
  const int K = cfg.kernel_size;
  auto mark = [&](const std::string& name, auto&& fn) {
    const int start = int(m.params.size());
    fn();
    m.block_ranges.push_back({name, {start, int(m.params.size())}});
  };

  m.gen.cfg = cfg;
  mark("pre", [&] {
    m.gen.pre = DsConv::make(bld, "pre", cfg.input_bands, cfg.pre_channels, K);
  });

  const int n_blocks = int(cfg.down_channels.size());
  int cin = cfg.pre_channels;
  for (int i = 0; i < n_blocks; ++i) {
    mark("down." + std::to_string(i), [&] {
      const std::string p = "down." + std::to_string(i);
      DownBlock b;
      b.cin = cin;
      b.cout = cfg.down_channels[i];
      b.factor = Rational::from_value(cfg.down_factors[i]);
      b.cond_up = cfg.cond_up_factors[i];
      b.t_in = cfg.cond_up_factors[i];
      b.t_out = int(int64_t(b.t_in) * b.factor.den / b.factor.num);
      b.norm = NormLayer::make(bld, p + ".norm", b.cin);
      b.conv_tanh = DsConv::make(bld, p + ".tanh", b.cin, b.cin, K);
      b.conv_gate = DsConv::make(bld, p + ".gate", b.cin, b.cin, K);
      b.conv_mid = DsConv::make(bld, p + ".mid", b.cin, b.cin, K);
      b.conv_out = DsConv::make(bld, p + ".out", b.cin, b.cout, K);
      b.conv_cond = DsConv::make(bld, p + ".cond", cfg.cond_dim, b.cin, K);
      b.conv_gamma = DenseConv::make(bld, p + ".gamma", b.cin, b.cout, K);
      b.conv_beta = DenseConv::make(bld, p + ".beta", b.cin, b.cout, K);
      m.gen.down.push_back(b);
      cin = b.cout;
    });
  }

  for (int j = 0; j < n_blocks; ++j) {
    mark("up." + std::to_string(j), [&] {
      const std::string p = "up." + std::to_string(j);
      const DownBlock& mirror = m.gen.down[n_blocks - 1 - j];
      UpBlock b;
      b.cin = mirror.cout;
      b.cout = j < n_blocks - 1 ? m.gen.down[n_blocks - 2 - j].cout
                                : cfg.pre_channels;
      b.factor = mirror.factor;  // applied as an upsampling
      b.t_in = mirror.t_out;
      b.t_out = mirror.t_in;
      b.norm_in = NormLayer::make(bld, p + ".norm_in", b.cin);
      b.norm1 = NormLayer::make(bld, p + ".norm1", b.cin);
      b.r1_tanh = DsConv::make(bld, p + ".r1_tanh", b.cin, b.cin, K);
      b.r1_gate = DsConv::make(bld, p + ".r1_gate", b.cin, b.cin, K);
      b.norm2 = NormLayer::make(bld, p + ".norm2", b.cin);
      b.r2_tanh = DsConv::make(bld, p + ".r2_tanh", b.cin, b.cin, K);
      b.r2_gate = DsConv::make(bld, p + ".r2_gate", b.cin, b.cin, K);
      b.conv_out = DsConv::make(bld, p + ".out", b.cin, b.cout, K);
      m.gen.up.push_back(b);
    });
  }

  mark("post", [&] {
    m.gen.post = DsConv::make(bld, "post", cfg.pre_channels, cfg.input_bands,
                              K, /*zero_init=*/true);
  });
  mark("overlap", [&] {
    m.gen.oc.c1 = DenseConv::make(bld, "oc.c1", 2, 16, K);
    m.gen.oc.c2 = DenseConv::make(bld, "oc.c2", 16, 2, K, /*zero_init=*/true);
  });
  if (cfg.mode == GeneratorConfig::Mode::guided) {
    mark("cond", [&] {
      m.gen.expand = LinearLayer::make(bld, "cond.expand", 1, cfg.cond_dim);
    });
    mark("sideinfo", [&] {
      m.encoder = SideInfoEncoder::make(bld, cfg.se_window, cfg.se_latent,
                                        cfg.se_gru_hidden);
    });
  }
}

}  // namespace

Model Model::init(const GeneratorConfig& cfg, unsigned seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.proto4 = design_prototype(4, cfg.pqmf4_taps_per_band);
  m.proto8 = design_prototype(8, cfg.pqmf8_taps_per_band);
  std::mt19937 rng(seed);
  LayerBuilder bld;
  bld.rng = &rng;
  bld.registry = &m.params;
  build_layers(m, bld);
  return m;
}

Model Model::build(const WeightStore& store) {
  json j;
  try {
    j = json::parse(store.config_json);
  } catch (const json::exception&) {
    fail(Errc::invalid_config, "weights: invalid config JSON");
  }
  Model m;
  m.cfg = GeneratorConfig::from_json(store.config_json);

  auto load_proto = [&](const char* name, int bands, int taps_per_band,
                        const char* key) {
    PrototypeFilter p;
    p.num_bands = bands;
    const Tensor* taps = store.find(name);
    require(taps != nullptr, Errc::shape_table_mismatch,
            std::string("weights: missing ") + name);
    require(taps->numel() == int64_t(bands) * taps_per_band,
            Errc::shape_table_mismatch,
            std::string("weights: bad length for ") + name);
    p.taps = taps->values();
    if (j.contains(key)) {
      p.cutoff = j[key].value("cutoff", 0.0);
      p.window_beta = j[key].value("beta", 0.0);
    }
    return p;
  };
  m.proto4 = load_proto("pqmf4.taps", 4, m.cfg.pqmf4_taps_per_band, "pqmf4");
  m.proto8 = load_proto("pqmf8.taps", 8, m.cfg.pqmf8_taps_per_band, "pqmf8");

  LayerBuilder bld;
  bld.store = &store;
  bld.registry = &m.params;
  build_layers(m, bld);
  require(bld.consumed + 2 == int(store.entries.size()),
          Errc::shape_table_mismatch, "weights: unknown tensors in store");
  return m;
}

WeightStore Model::to_store() const {
  WeightStore store;
  json j = json::parse(cfg.to_json());
  j["pqmf4"] = {{"cutoff", proto4.cutoff}, {"beta", proto4.window_beta}};
  j["pqmf8"] = {{"cutoff", proto8.cutoff}, {"beta", proto8.window_beta}};
  store.config_json = j.dump();
  for (const auto& [name, t] : params) store.put(name, t.detach());
  store.put("pqmf4.taps", Tensor::from({proto4.length()}, proto4.taps));
  store.put("pqmf8.taps", Tensor::from({proto8.length()}, proto8.taps));
  return store;
}

std::vector<Tensor> Model::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

int64_t Model::param_count() const {
  int64_t n = proto4.length() + proto8.length();
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

// ---------------------------------------------------------------------------
// forward passes

Tensor OverlapComp::forward(const Tensor& x3, const Tensor& g4) const {
  Tensor in = nn::concat_rows({x3, g4});  // [2, T]
  Tensor corr = c2.forward(nn::tanh_t(c1.forward(in)));
  return nn::add(in, corr);
}

namespace {

Tensor down_block_batch(const DownBlock& b, const Tensor& x,
                        const Tensor& cond, Tensor* gamma, Tensor* beta) {
  const Rational down{b.factor.den, b.factor.num};  // 1/factor
  Tensor xn = b.norm.forward(x);
  Tensor at = b.conv_tanh.forward(xn);
  Tensor ag = b.conv_gate.forward(xn);
  Tensor g = nn::gated(at, ag);
  Tensor mid = b.conv_mid.forward(g);
  Tensor y =
      b.conv_out.forward(nn::interp(mid, down, nn::InterpMode::linear, b.t_in));
  // TADE parameters for the mirror upsample block
  Tensor cu = nn::interp(cond, Rational{b.cond_up, 1}, nn::InterpMode::nearest,
                         1);
  Tensor m = nn::add(at, b.conv_cond.forward(cu));
  Tensor md = nn::interp(m, down, nn::InterpMode::linear, b.t_in);
  *gamma = b.conv_gamma.forward(md);
  *beta = b.conv_beta.forward(md);
  return y;
}

Tensor up_block_batch(const UpBlock& b, const Tensor& x, const Tensor& gamma,
                      const Tensor& beta) {
  Tensor v = nn::add(nn::mul(gamma, b.norm_in.forward(x)), beta);
  Tensor n1 = b.norm1.forward(v);
  Tensor t1 = nn::gated(b.r1_tanh.forward(n1), b.r1_gate.forward(n1));
  Tensor n2 = b.norm2.forward(t1);
  Tensor t2 = nn::gated(b.r2_tanh.forward(n2), b.r2_gate.forward(n2));
  Tensor w = nn::add(v, t2);
  Tensor u = nn::interp(w, b.factor, nn::InterpMode::linear, b.t_in);
  return b.conv_out.forward(u);
}

}  // namespace

Tensor Generator::synth_high(const Tensor& sb_low, const Tensor& cond) const {
  require(sb_low.rank() == 2 && sb_low.dim(0) == cfg.input_bands,
          Errc::shape_mismatch, "generator: expected [4, T] subbands");
  require(cond.rank() == 2 && cond.dim(0) == cfg.cond_dim, Errc::shape_mismatch,
          "generator: expected [80, frames] conditioning");
  const int frames = cond.dim(1);
  require(sb_low.dim(1) == frames * cfg.frame_subband_steps,
          Errc::shape_mismatch,
          "generator: subband length must be 80 steps per frame");

  Tensor x = pre.forward(sb_low);
  const int n = int(down.size());
  std::vector<Tensor> gammas(n), betas(n);
  for (int i = 0; i < n; ++i)
    x = down_block_batch(down[i], x, cond, &gammas[i], &betas[i]);
  bottleneck_shape = x.shape();
  for (int j = 0; j < n; ++j)
    x = up_block_batch(up[j], x, gammas[n - 1 - j], betas[n - 1 - j]);
  return post.forward(x);
}

// ---------------------------------------------------------------------------
// streaming

GenStreamState Generator::make_state() const {
  GenStreamState st;
  const int K = cfg.kernel_size;
  auto conv = [&](int cin) { st.hist.push_back(Tensor({cin, K - 1})); };
  conv(pre.cin);
  for (const auto& b : down) {
    conv(b.conv_tanh.cin);
    conv(b.conv_gate.cin);
    conv(b.conv_mid.cin);
    conv(b.conv_out.cin);
    conv(b.conv_cond.cin);
    conv(b.conv_gamma.cin);
    conv(b.conv_beta.cin);
  }
  for (const auto& b : up) {
    conv(b.r1_tanh.cin);
    conv(b.r1_gate.cin);
    conv(b.r2_tanh.cin);
    conv(b.r2_gate.cin);
    conv(b.conv_out.cin);
  }
  conv(post.cin);
  conv(oc.c1.cin);
  conv(oc.c2.cin);
  return st;
}

Tensor Generator::forward_frame(const Tensor& sb_frame,
                                const Tensor& cond_frame,
                                GenStreamState& state) const {
  require(sb_frame.rank() == 2 && sb_frame.dim(0) == cfg.input_bands &&
              sb_frame.dim(1) == cfg.frame_subband_steps,
          Errc::shape_mismatch, "forward_frame: expected [4, 80] subbands");
  require(cond_frame.rank() == 2 && cond_frame.dim(0) == cfg.cond_dim &&
              cond_frame.dim(1) == 1,
          Errc::shape_mismatch, "forward_frame: expected [80, 1] conditioning");
  state.rewind();

  Tensor x = stream_conv(pre, sb_frame, state.next());
  const int n = int(down.size());
  std::vector<Tensor> gammas(n), betas(n);
  for (int i = 0; i < n; ++i) {
    const DownBlock& b = down[i];
    const Rational dn{b.factor.den, b.factor.num};
    Tensor xn = b.norm.forward(x);
    Tensor at = stream_conv(b.conv_tanh, xn, state.next());
    Tensor ag = stream_conv(b.conv_gate, xn, state.next());
    Tensor g = nn::gated(at, ag);
    Tensor mid = stream_conv(b.conv_mid, g, state.next());
    Tensor y = stream_conv(
        b.conv_out, nn::interp(mid, dn, nn::InterpMode::linear, b.t_in),
        state.next());
    Tensor cu = nn::interp(cond_frame, Rational{b.cond_up, 1},
                           nn::InterpMode::nearest, 1);
    Tensor m = nn::add(at, stream_conv(b.conv_cond, cu, state.next()));
    Tensor md = nn::interp(m, dn, nn::InterpMode::linear, b.t_in);
    gammas[i] = stream_conv(b.conv_gamma, md, state.next());
    betas[i] = stream_conv(b.conv_beta, md, state.next());
    x = y;
  }
  bottleneck_shape = x.shape();
  for (int j = 0; j < n; ++j) {
    const UpBlock& b = up[j];
    const Tensor& gamma = gammas[n - 1 - j];
    const Tensor& beta = betas[n - 1 - j];
    Tensor v = nn::add(nn::mul(gamma, b.norm_in.forward(x)), beta);
    Tensor n1 = b.norm1.forward(v);
    Tensor t1 = nn::gated(stream_conv(b.r1_tanh, n1, state.next()),
                          stream_conv(b.r1_gate, n1, state.next()));
    Tensor n2 = b.norm2.forward(t1);
    Tensor t2 = nn::gated(stream_conv(b.r2_tanh, n2, state.next()),
                          stream_conv(b.r2_gate, n2, state.next()));
    Tensor w = nn::add(v, t2);
    Tensor u = nn::interp(w, b.factor, nn::InterpMode::linear, b.t_in);
    x = stream_conv(b.conv_out, u, state.next());
  }
  return stream_conv(post, x, state.next());
}

Tensor Generator::oc_frame(const Tensor& x3, const Tensor& g4,
                           GenStreamState& state) const {
  Tensor in = nn::concat_rows({x3, g4});
  Tensor h = nn::tanh_t(stream_conv(oc.c1, in, state.next()));
  Tensor corr = stream_conv(oc.c2, h, state.next());
  return nn::add(in, corr);
}

// ---------------------------------------------------------------------------
// extend

double extend_delay_samples(const GeneratorConfig& cfg) {
  const int l4 = 4 * cfg.pqmf4_taps_per_band;
  const int l8 = 8 * cfg.pqmf8_taps_per_band;
  // synthesis output phase (N8-1) minus analysis sampling phase (N4-1)
  // in 32 kHz samples, plus both filter group delays
  return (8 - 1) - 2.0 * (4 - 1) + (l8 - 1) / 2.0 + (l4 - 1);
}

namespace {
constexpr int kFlushFrames = 2;

Tensor cond_from_codes(const Model& m, const std::vector<int>& codes) {
  Tensor dq({1, int(codes.size())});
  for (size_t i = 0; i < codes.size(); ++i) {
    require(codes[i] >= 0 && codes[i] <= 15, Errc::code_out_of_range,
            "extend: side-info code outside 0..15");
    dq.data()[i] = dequant_level(codes[i]);
  }
  return m.gen.expand.forward(dq);
}

}  // namespace

ExtendResult extend(const Model& m, const AudioBuffer& wb,
                    const std::vector<int>* codes) {
  require(wb.sample_rate == 16000, Errc::rate_mismatch,
          "extend: 16 kHz input required");
  require(wb.size() > 0 && wb.size() % 320 == 0, Errc::frame_alignment,
          "extend: length must be a multiple of 320 samples");
  const int frames = int(wb.size() / 320);
  const bool guided = m.cfg.mode == GeneratorConfig::Mode::guided;
  if (guided) {
    require(codes != nullptr && int(codes->size()) == frames,
            Errc::frame_count_mismatch,
            "extend: need one side-info code per 20 ms frame");
  }

  nn::NoGradGuard ng;
  AudioBuffer padded = wb;
  padded.samples.resize(wb.samples.size() + kFlushFrames * 320, 0.0f);

  SubbandSignal sb4 = analysis(padded, m.proto4);
  Tensor sb = Tensor::from({4, sb4.frames}, sb4.data);

  Tensor cond;
  if (guided) {
    std::vector<int> padded_codes = *codes;
    for (int i = 0; i < kFlushFrames; ++i)
      padded_codes.push_back(padded_codes.back());
    cond = cond_from_codes(m, padded_codes);
  } else {
    cond = mel_stream(padded);
  }

  Tensor high = m.gen.synth_high(sb, cond);
  Tensor pair = m.gen.oc.forward(nn::slice_rows(sb, 3, 4),
                                 nn::slice_rows(high, 0, 1));

  Tensor bands8 = nn::concat_rows({
      nn::slice_rows(sb, 0, 3),
      pair,
      nn::slice_rows(high, 1, 4),
  });
  SubbandSignal sb8;
  sb8.num_bands = 8;
  sb8.frames = sb4.frames;
  sb8.data = bands8.values();

  ExtendResult res;
  res.out = synthesis(sb8, m.proto8);
  res.delay_samples = extend_delay_samples(m.cfg);
  res.tail_samples = kFlushFrames * 640;
  return res;
}

// ---------------------------------------------------------------------------
// ExtendStream

ExtendStream::ExtendStream(const Model& m)
    : m_(m),
      gstate_(m.gen.make_state()),
      an_state_(make_pqmf_state(m.proto4)),
      syn_state_(make_pqmf_state(m.proto8)) {}

double ExtendStream::delay_samples() const {
  return extend_delay_samples(m_.cfg);
}

std::vector<float> ExtendStream::process_frame(int frame_index) {
  nn::NoGradGuard ng;
  require(!pending_.empty(), Errc::uninitialized_state,
          "ExtendStream: no pending frame");
  std::vector<float> frame = std::move(pending_.front());
  pending_.erase(pending_.begin());

  AudioBuffer fb;
  fb.sample_rate = 16000;
  fb.samples = frame;
  SubbandSignal sb4 = analysis_step(fb, m_.proto4, an_state_);
  Tensor sb = Tensor::from({4, sb4.frames}, sb4.data);

  Tensor cond;
  if (m_.cfg.mode == GeneratorConfig::Mode::guided) {
    std::vector<int> one{codes_[size_t(frame_index)]};
    cond = cond_from_codes(m_, one);
  } else {
    // mel window [i*320 - 80, i*320 + 400), zero-padded at stream edges
    MelConfig mc;
    std::vector<float> window(mc.window_samples(), 0.0f);
    const int64_t start = int64_t(frame_index) * 320 - 80;
    for (int i = 0; i < int(window.size()); ++i) {
      const int64_t idx = start + i - inbuf_base_;
      if (idx >= 0 && idx < int64_t(inbuf_.size())) window[i] = inbuf_[idx];
    }
    const auto mv = mel_frame(window, mc);
    cond = Tensor::from({mc.num_mels, 1}, std::vector<float>(mv));
  }

  Tensor high = m_.gen.forward_frame(sb, cond, gstate_);
  Tensor pair = m_.gen.oc_frame(nn::slice_rows(sb, 3, 4),
                                nn::slice_rows(high, 0, 1), gstate_);

  Tensor bands8 = nn::concat_rows({
      nn::slice_rows(sb, 0, 3),
      pair,
      nn::slice_rows(high, 1, 4),
  });
  SubbandSignal sb8;
  sb8.num_bands = 8;
  sb8.frames = 80;
  sb8.data = bands8.values();
  AudioBuffer out = synthesis_step(sb8, m_.proto8, syn_state_);

  // drop input samples no longer needed by future mel windows
  const int64_t keep_from = int64_t(frame_index + 1) * 320 - 80;
  if (keep_from > inbuf_base_) {
    const int64_t drop = keep_from - inbuf_base_;
    if (drop < int64_t(inbuf_.size())) {
      inbuf_.erase(inbuf_.begin(), inbuf_.begin() + drop);
      inbuf_base_ = keep_from;
    }
  }
  return out.samples;
}

std::vector<float> ExtendStream::push(std::span<const float> frame, int code) {
  require(!flushed_, Errc::uninitialized_state,
          "ExtendStream: already flushed");
  require(frame.size() == 320, Errc::frame_alignment,
          "ExtendStream: frames are 320 samples");
  if (m_.cfg.mode == GeneratorConfig::Mode::guided) {
    require(code >= 0 && code <= 15, Errc::code_out_of_range,
            "ExtendStream: guided mode needs a 4-bit code per frame");
    codes_.push_back(code);
  }
  inbuf_.insert(inbuf_.end(), frame.begin(), frame.end());
  pending_.emplace_back(frame.begin(), frame.end());

  std::vector<float> out;
  // process once the 5 ms look-ahead for the oldest pending frame exists
  while (int(pending_.size()) > 1) {
    auto chunk = process_frame(next_frame_);
    out.insert(out.end(), chunk.begin(), chunk.end());
    ++next_frame_;
  }
  return out;
}

std::vector<float> ExtendStream::flush() {
  require(!flushed_, Errc::uninitialized_state,
          "ExtendStream: already flushed");
  flushed_ = true;
  const std::vector<float> zeros(320, 0.0f);
  for (int i = 0; i < kFlushFrames; ++i) {
    if (m_.cfg.mode == GeneratorConfig::Mode::guided)
      codes_.push_back(codes_.empty() ? 8 : codes_.back());
    inbuf_.insert(inbuf_.end(), zeros.begin(), zeros.end());
    pending_.emplace_back(zeros);
  }
  std::vector<float> out;
  while (!pending_.empty()) {
    auto chunk = process_frame(next_frame_);
    out.insert(out.end(), chunk.begin(), chunk.end());
    ++next_frame_;
  }
  return out;
}

}  // namespace ubgan
