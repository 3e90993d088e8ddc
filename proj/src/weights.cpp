#include "ubgan/weights.hpp"

#include <cstring>
#include <fstream>

#include "ubgan/error.hpp"

namespace ubgan {

namespace {

constexpr char kMagic[4] = {'U', 'B', 'W', '1'};
constexpr uint32_t kVersion = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

struct Reader {
  const uint8_t* p;
  size_t left;
  void need(size_t n) {
    require(left >= n, Errc::truncated_file, "weights: truncated file");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(p[0]) | uint16_t(p[1]) << 8;
    p += 2;
    left -= 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
                 uint32_t(p[3]) << 24;
    p += 4;
    left -= 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    uint8_t v = *p;
    ++p;
    --left;
    return v;
  }
  void bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
};

}  // namespace

const Tensor* WeightStore::find(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

void WeightStore::put(const std::string& name, const Tensor& t) {
  entries.emplace_back(name, t);
}

int64_t WeightStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries) n += t.numel();
  return n;
}

std::vector<uint8_t> save_weights(const WeightStore& store) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, uint32_t(store.config_json.size()));
  out.insert(out.end(), store.config_json.begin(), store.config_json.end());
  put_u32(out, uint32_t(store.entries.size()));
  for (const auto& [name, t] : store.entries) {
    require(name.size() <= 0xffff, Errc::invalid_config,
            "weights: entry name too long");
    put_u16(out, uint16_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    require(t.rank() <= 255, Errc::invalid_config, "weights: rank too large");
    out.push_back(uint8_t(t.rank()));
    for (int d : t.shape()) put_u32(out, uint32_t(d));
    const size_t bytes = size_t(t.numel()) * 4;
    const size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, t.data(), bytes);
  }
  return out;
}

WeightStore load_weights(const std::vector<uint8_t>& bytes) {
  Reader r{bytes.data(), bytes.size()};
  char magic[4];
  r.bytes(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, Errc::bad_magic,
          "weights: bad magic");
  const uint32_t version = r.u32();
  require(version == kVersion, Errc::bad_magic,
          "weights: unsupported version " + std::to_string(version));
  const uint32_t cfg_len = r.u32();
  WeightStore store;
  store.config_json.resize(cfg_len);
  if (cfg_len) r.bytes(store.config_json.data(), cfg_len);
  const uint32_t count = r.u32();
  for (uint32_t e = 0; e < count; ++e) {
    const uint16_t name_len = r.u16();
    std::string name(name_len, '\0');
    if (name_len) r.bytes(name.data(), name_len);
    const uint8_t rank = r.u8();
    std::vector<int> shape(rank);
    int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      shape[i] = int(r.u32());
      numel *= shape[i];
    }
    require(numel >= 0 && uint64_t(numel) * 4 <= r.left, Errc::truncated_file,
            "weights: entry data truncated");
    std::vector<float> data(size_t(numel));
    r.bytes(data.data(), size_t(numel) * 4);
    store.put(name, Tensor::from(std::move(shape), std::move(data)));
  }
  require(r.left == 0, Errc::truncated_file, "weights: trailing bytes");
  return store;
}

void save_weights_file(const std::string& path, const WeightStore& store) {
  const auto bytes = save_weights(store);
  std::ofstream os(path, std::ios::binary);
  require(os.good(), Errc::truncated_file, "weights: cannot open " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  require(os.good(), Errc::truncated_file, "weights: write failed");
}

WeightStore load_weights_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), Errc::truncated_file, "weights: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  return load_weights(bytes);
}

}  // namespace ubgan
