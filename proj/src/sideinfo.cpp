#include "ubgan/sideinfo.hpp"

#include <cstring>
#include <fstream>

#include "ubgan/error.hpp"

namespace ubgan {

namespace {
constexpr int kFrameSteps = 80;    // 20 ms at the 4 kHz subband rate
constexpr int kEdgeSteps = 20;     // 5 ms history / look-ahead
constexpr char kMagic[4] = {'U', 'B', 'S', '1'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kFrameMs = 20;
}  // namespace

std::vector<float> rolling_window(const SubbandSignal& high_bands,
                                  int frame_index) {
  require(high_bands.num_bands == 4, Errc::band_count_mismatch,
          "rolling_window: expected the 4 high bands");
  const int frames = high_bands.frames / kFrameSteps;
  require(frame_index >= 0 && frame_index < frames, Errc::index_out_of_range,
          "rolling_window: frame index out of range");
  std::vector<float> out(4 * (kFrameSteps + 2 * kEdgeSteps), 0.0f);
  const int seg = kFrameSteps + 2 * kEdgeSteps;  // 120 per band
  for (int b = 0; b < 4; ++b) {
    const float* band = high_bands.band(b);
    for (int i = 0; i < seg; ++i) {
      const int64_t t = int64_t(frame_index) * kFrameSteps - kEdgeSteps + i;
      out[size_t(b) * seg + i] =
          (t >= 0 && t < high_bands.frames) ? band[t] : 0.0f;
    }
  }
  return out;
}

Tensor rolling_windows(const SubbandSignal& high_bands) {
  const int frames = high_bands.frames / kFrameSteps;
  const int dim = 4 * (kFrameSteps + 2 * kEdgeSteps);
  Tensor out({dim, frames});
  for (int f = 0; f < frames; ++f) {
    const auto w = rolling_window(high_bands, f);
    for (int i = 0; i < dim; ++i) out.data()[size_t(i) * frames + f] = w[i];
  }
  return out;
}

SideInfoEncoder SideInfoEncoder::make(LayerBuilder& bld, int window,
                                      int latent, int gru_hidden) {
  SideInfoEncoder e;
  e.window = window;
  e.latent = latent;
  e.engaged = true;
  e.pre = LinearLayer::make(bld, "se.pre", window, latent);
  e.gru = GruLayer::make(bld, "se.gru", latent, gru_hidden);
  e.post = LinearLayer::make(bld, "se.post", gru_hidden, latent);
  e.proj = LinearLayer::make(bld, "se.proj", latent, 1);
  return e;
}

Tensor SideInfoEncoder::forward(const Tensor& windows,
                                std::vector<int>* codes) const {
  require(windows.rank() == 2 && windows.dim(0) == window,
          Errc::shape_mismatch, "sideinfo: window matrix shape");
  const int F = windows.dim(1);
  Tensor lat = pre.forward(windows);  // [latent, F]
  Tensor h({gru.hidden});
  std::vector<Tensor> zs;
  zs.reserve(F);
  for (int f = 0; f < F; ++f) {
    Tensor x = nn::reshape(nn::slice_cols(lat, f, f + 1), {latent});
    h = gru.step(x, h);
    Tensor o = post.forward(nn::reshape(h, {gru.hidden, 1}));  // [latent,1]
    zs.push_back(proj.forward(o));                             // [1,1]
  }
  Tensor z = nn::concat_cols(zs);  // [1, F]
  return nn::quantize_st(z, codes);
}

std::vector<int> SideInfoEncoder::encode_codes(
    const AudioBuffer& swb, const PrototypeFilter& proto8) const {
  require(swb.sample_rate == 32000, Errc::rate_mismatch,
          "sideinfo encode: 32 kHz input required");
  require(swb.size() > 0 && swb.size() % 640 == 0, Errc::frame_alignment,
          "sideinfo encode: length must be a multiple of 640 samples");
  nn::NoGradGuard ng;
  SubbandSignal sb = analysis(swb, proto8);
  SubbandSignal high;
  high.num_bands = 4;
  high.frames = sb.frames;
  high.data.assign(size_t(4) * sb.frames, 0.0f);
  for (int b = 0; b < 4; ++b)
    std::copy(sb.band(4 + b), sb.band(4 + b) + sb.frames, high.band(b));
  std::vector<int> codes;
  forward(rolling_windows(high), &codes);
  return codes;
}

std::vector<uint8_t> pack_codes(const std::vector<int>& codes) {
  for (int c : codes)
    require(c >= 0 && c <= 15, Errc::code_out_of_range,
            "pack_codes: code outside 0..15");
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  auto put_u32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
  };
  put_u32(kVersion);
  put_u32(kFrameMs);
  put_u32(uint32_t(codes.size()));
  for (size_t i = 0; i < codes.size(); i += 2) {
    uint8_t byte = uint8_t(codes[i]) << 4;  // high nibble first
    if (i + 1 < codes.size()) byte |= uint8_t(codes[i + 1]);
    out.push_back(byte);
  }
  return out;
}

std::vector<int> unpack_codes(const std::vector<uint8_t>& bytes) {
  require(bytes.size() >= 16, Errc::truncated_file,
          "bitstream: header too short");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, Errc::bad_magic,
          "bitstream: bad magic");
  auto get_u32 = [&](size_t off) {
    return uint32_t(bytes[off]) | uint32_t(bytes[off + 1]) << 8 |
           uint32_t(bytes[off + 2]) << 16 | uint32_t(bytes[off + 3]) << 24;
  };
  require(get_u32(4) == kVersion, Errc::bad_magic,
          "bitstream: unsupported version");
  require(get_u32(8) == kFrameMs, Errc::bad_magic,
          "bitstream: unsupported frame duration");
  const uint32_t num = get_u32(12);
  const size_t expect = 16 + (num + 1) / 2;
  require(bytes.size() == expect, Errc::length_mismatch,
          "bitstream: payload length does not match header");
  std::vector<int> codes(num);
  for (uint32_t i = 0; i < num; ++i) {
    const uint8_t byte = bytes[16 + i / 2];
    codes[i] = (i % 2 == 0) ? (byte >> 4) : (byte & 0x0f);
  }
  return codes;
}

void save_bitstream_file(const std::string& path,
                         const std::vector<int>& codes) {
  const auto bytes = pack_codes(codes);
  std::ofstream os(path, std::ios::binary);
  require(os.good(), Errc::truncated_file, "bitstream: cannot open " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  require(os.good(), Errc::truncated_file, "bitstream: write failed");
}

std::vector<int> load_bitstream_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), Errc::truncated_file, "bitstream: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  return unpack_codes(bytes);
}

}  // namespace ubgan
