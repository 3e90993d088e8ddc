#pragma once

#include <cstdint>
#include <vector>

#include "ubgan/audio.hpp"
#include "ubgan/layers.hpp"
#include "ubgan/pqmf.hpp"
#include "ubgan/tensor.hpp"

namespace ubgan {

// Rolling-window frame over the 4 high subbands: for each band 4..7 in
// order, [20 history | 80 current | 20 look-ahead] samples at the 4 kHz
// subband rate; 480 values total. History and look-ahead are zero-padded
// at the stream edges.
std::vector<float> rolling_window(const SubbandSignal& high_bands,
                                  int frame_index);

// All frames stacked as a [480, F] matrix (column per frame).
Tensor rolling_windows(const SubbandSignal& high_bands);

// Recurrent encoder: pointwise 480->80, GRU(80), pointwise 80->80, then a
// 1-dim projection quantized to 4 bits. The GRU state persists across
// frames within a stream.
struct SideInfoEncoder {
  LinearLayer pre;   // 480 -> 80
  GruLayer gru;      // 80 -> 80
  LinearLayer post;  // 80 -> 80
  LinearLayer proj;  // 80 -> 1
  int window = 480;
  int latent = 80;
  bool engaged = false;

  static SideInfoEncoder make(LayerBuilder& bld, int window, int latent,
                              int gru_hidden);
  // windows [480, F] -> dequantized scalars [1, F] (straight-through
  // gradient in training); `codes` receives the 4-bit indices.
  Tensor forward(const Tensor& windows, std::vector<int>* codes) const;
  // Full encode of a 32 kHz clip: 8-band analysis, keep bands 4..7,
  // rolling window, DPCRNN, quantize. One code per 20 ms frame.
  std::vector<int> encode_codes(const AudioBuffer& swb,
                                const PrototypeFilter& proto8) const;
  int64_t params() const {
    return pre.params() + gru.params() + post.params() + proj.params();
  }
};

// "UBS1" side-info bitstream: magic, u32 version, u32 frame_ms, u32
// num_frames, then packed 4-bit codes, high nibble first; an odd count
// pads the final low nibble with zero. Payload rate is exactly 200 bit/s.
std::vector<uint8_t> pack_codes(const std::vector<int>& codes);
std::vector<int> unpack_codes(const std::vector<uint8_t>& bytes);

void save_bitstream_file(const std::string& path,
                         const std::vector<int>& codes);
std::vector<int> load_bitstream_file(const std::string& path);

// Dequantization grid value for a 4-bit index: 2k/15 - 1.
inline float dequant_level(int index) {
  return float(2.0 * index / 15.0 - 1.0);
}

}  // namespace ubgan
