#include "ubgan/audio.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "ubgan/error.hpp"
#include "ubgan/fft.hpp"
#include "ubgan/pqmf.hpp"

namespace ubgan {

namespace {

constexpr uint16_t kFormatPcm = 0x0001;
constexpr uint16_t kFormatFloat = 0x0003;

uint32_t rd_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}
uint16_t rd_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

void wr_u32(std::ostream& os, uint32_t v) {
  uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16),
                  uint8_t(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void wr_u16(std::ostream& os, uint16_t v) {
  uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

int16_t float_to_pcm16(float v) {
  // Symmetric scaling by 32768 with saturation; ties round away from zero.
  double s = double(v) * 32768.0;
  s = s >= 0.0 ? std::floor(s + 0.5) : std::ceil(s - 0.5);
  if (s > 32767.0) s = 32767.0;
  if (s < -32768.0) s = -32768.0;
  return int16_t(s);
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), Errc::corrupt_header, "read_wav: cannot open " + path);
  is.seekg(0, std::ios::end);
  const int64_t file_size = is.tellg();
  is.seekg(0, std::ios::beg);
  require(file_size >= 44, Errc::corrupt_header, "read_wav: file too small");

  uint8_t hdr[12];
  is.read(reinterpret_cast<char*>(hdr), 12);
  require(std::memcmp(hdr, "RIFF", 4) == 0 && std::memcmp(hdr + 8, "WAVE", 4) == 0,
          Errc::corrupt_header, "read_wav: not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  AudioBuffer out;

  while (is.good()) {
    uint8_t chunk[8];
    is.read(reinterpret_cast<char*>(chunk), 8);
    if (!is.good()) break;
    const uint32_t chunk_size = rd_u32(chunk + 4);
    const int64_t chunk_pos = is.tellg();
    require(chunk_pos + int64_t(chunk_size) <= file_size, Errc::corrupt_header,
            "read_wav: chunk extends past end of file");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      require(chunk_size >= 16, Errc::corrupt_header, "read_wav: short fmt chunk");
      uint8_t fmt[16];
      is.read(reinterpret_cast<char*>(fmt), 16);
      format = rd_u16(fmt + 0);
      channels = rd_u16(fmt + 2);
      rate = rd_u32(fmt + 4);
      bits = rd_u16(fmt + 14);
      have_fmt = true;
      is.seekg(chunk_pos + chunk_size + (chunk_size & 1), std::ios::beg);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      require(have_fmt, Errc::corrupt_header, "read_wav: data before fmt");
      require(channels == 1, Errc::not_mono, "read_wav: mono only");
      require(format == kFormatPcm || format == kFormatFloat,
              Errc::unsupported_format, "read_wav: only PCM16/float32");
      if (format == kFormatPcm)
        require(bits == 16, Errc::unsupported_format, "read_wav: PCM must be 16-bit");
      else
        require(bits == 32, Errc::unsupported_format, "read_wav: float must be 32-bit");
      const uint32_t bytes_per = bits / 8;
      require(chunk_size % bytes_per == 0, Errc::corrupt_header,
              "read_wav: data size not a sample multiple");
      const size_t n = chunk_size / bytes_per;
      out.sample_rate = int(rate);
      out.samples.resize(n);
      if (format == kFormatPcm) {
        std::vector<int16_t> raw(n);
        is.read(reinterpret_cast<char*>(raw.data()), chunk_size);
        require(is.good(), Errc::corrupt_header, "read_wav: truncated data");
        for (size_t i = 0; i < n; ++i) out.samples[i] = raw[i] / 32768.0f;
      } else {
        is.read(reinterpret_cast<char*>(out.samples.data()), chunk_size);
        require(is.good(), Errc::corrupt_header, "read_wav: truncated data");
      }
      return out;
    } else {
      is.seekg(chunk_pos + chunk_size + (chunk_size & 1), std::ios::beg);
    }
  }
  fail(Errc::corrupt_header, "read_wav: no data chunk");
}

void write_wav(const std::string& path, const AudioBuffer& buf,
               WavEncoding enc) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), Errc::corrupt_header, "write_wav: cannot open " + path);
  const uint16_t format = enc == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat;
  const uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const uint32_t data_size = uint32_t(buf.samples.size()) * (bits / 8);

  os.write("RIFF", 4);
  wr_u32(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  wr_u32(os, 16);
  wr_u16(os, format);
  wr_u16(os, 1);  // mono
  wr_u32(os, uint32_t(buf.sample_rate));
  wr_u32(os, uint32_t(buf.sample_rate) * (bits / 8));
  wr_u16(os, bits / 8);
  wr_u16(os, bits);
  os.write("data", 4);
  wr_u32(os, data_size);
  if (enc == WavEncoding::pcm16) {
    std::vector<int16_t> raw(buf.samples.size());
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = float_to_pcm16(buf.samples[i]);
    os.write(reinterpret_cast<const char*>(raw.data()), data_size);
  } else {
    os.write(reinterpret_cast<const char*>(buf.samples.data()), data_size);
  }
  require(os.good(), Errc::corrupt_header, "write_wav: write failed");
}

MetricReport align_and_snr(const AudioBuffer& ref, const AudioBuffer& test,
                           int max_lag) {
  require(ref.sample_rate == test.sample_rate, Errc::rate_mismatch,
          "align_and_snr: sample rates differ");
  require(ref.size() > 0 && test.size() > 0, Errc::empty_signal,
          "align_and_snr: empty signal");

  int best_lag = 0;
  double best_corr = -1e300;
  for (int lag = 0; lag <= max_lag; ++lag) {
    double corr = 0.0;
    const int64_t n = std::min<int64_t>(ref.size(), test.size() - lag);
    for (int64_t i = 0; i < n; ++i)
      corr += double(ref.samples[i]) * test.samples[i + lag];
    if (corr > best_corr) {
      best_corr = corr;
      best_lag = lag;
    }
  }

  MetricReport rep;
  rep.delay_samples = best_lag;

  auto snr_of = [](const float* a, const float* b, int64_t n) {
    double sig = 0.0, err = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      sig += double(a[i]) * a[i];
      const double d = double(a[i]) - b[i];
      err += d * d;
    }
    if (sig <= 0.0) return 0.0;
    if (err <= 0.0) return 120.0;
    return std::min(120.0, 10.0 * std::log10(sig / err));
  };

  const int64_t n = std::min<int64_t>(ref.size(), test.size() - best_lag);
  rep.snr_db = snr_of(ref.samples.data(), test.samples.data() + best_lag, n);

  // Per-PQMF-band SNR at the aligned lag; 4 bands at 16 kHz, 8 at 32 kHz.
  const int bands = ref.sample_rate / 4000;
  if ((bands == 4 || bands == 8) && n >= 4 * bands) {
    static const PrototypeFilter proto4 = design_prototype(4, 16);
    static const PrototypeFilter proto8 = design_prototype(8, 16);
    const PrototypeFilter& p = bands == 4 ? proto4 : proto8;
    AudioBuffer ra, ta;
    ra.sample_rate = ta.sample_rate = ref.sample_rate;
    const int64_t na = n - n % bands;
    ra.samples.assign(ref.samples.begin(), ref.samples.begin() + na);
    ta.samples.assign(test.samples.begin() + best_lag,
                      test.samples.begin() + best_lag + na);
    SubbandSignal rs = analysis(ra, p), ts = analysis(ta, p);
    for (int b = 0; b < bands; ++b)
      rep.band_snr_db.push_back(snr_of(rs.band(b), ts.band(b), rs.frames));
  }

  // Spectral distances over the aligned region (window 1024, hop 256).
  if (n >= 1024) {
    int frames = 0;
    auto mr = dsp::magnitude_spectrogram(ref.samples.data(), int(n), 1024, 256,
                                         &frames);
    auto mt = dsp::magnitude_spectrogram(test.samples.data() + best_lag, int(n),
                                         1024, 256, &frames);
    double num = 0.0, den = 0.0, l1 = 0.0;
    for (size_t i = 0; i < mr.size(); ++i) {
      num += (mr[i] - mt[i]) * (mr[i] - mt[i]);
      den += mr[i] * mr[i];
      l1 += std::abs(std::log(std::max(mr[i], 1e-7)) -
                     std::log(std::max(mt[i], 1e-7)));
    }
    rep.sc = den > 0.0 ? std::sqrt(num) / std::sqrt(den) : 0.0;
    rep.mag = mr.empty() ? 0.0 : l1 / double(mr.size());
  }
  return rep;
}

}  // namespace ubgan
