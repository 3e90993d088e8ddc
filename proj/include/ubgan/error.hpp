#pragma once

#include <stdexcept>
#include <string>

namespace ubgan {

// One code per failure mode surfaced by the public API. The CLI maps these
// onto exit codes (usage / format / consistency).
enum class Errc {
  unsupported_band_count,
  design_failure,
  frame_alignment,
  rate_mismatch,
  band_count_mismatch,
  shape_mismatch,
  window_length_mismatch,
  non_integral_output_length,
  not_scalar_loss,
  graph_detached,
  invalid_config,
  bad_magic,
  shape_table_mismatch,
  truncated_file,
  code_out_of_range,
  length_mismatch,
  index_out_of_range,
  wrong_ensemble_size,
  zero_reference,
  clip_too_short,
  non_finite_loss,
  unsupported_format,
  not_mono,
  corrupt_header,
  empty_signal,
  frame_count_mismatch,
  uninitialized_state,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) {
  throw Error(code, msg);
}

inline void require(bool ok, Errc code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

}  // namespace ubgan
