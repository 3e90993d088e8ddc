#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ubgan/tensor.hpp"

namespace ubgan {

// Named-tensor container backing the "UBW1" file format:
//   magic "UBW1", u32 version, u32 config length, UTF-8 config text,
//   u32 entry count, then per entry: u16 name length, name, u8 rank,
//   u32 dims..., raw little-endian float32 data. Round-trips bit-exactly.
struct WeightStore {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> entries;  // insertion order

  const Tensor* find(const std::string& name) const;
  void put(const std::string& name, const Tensor& t);
  int64_t total_params() const;
};

std::vector<uint8_t> save_weights(const WeightStore& store);
WeightStore load_weights(const std::vector<uint8_t>& bytes);

void save_weights_file(const std::string& path, const WeightStore& store);
WeightStore load_weights_file(const std::string& path);

}  // namespace ubgan
