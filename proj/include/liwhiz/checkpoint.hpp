#pragma once

#include <filesystem>
#include <iosfwd>

#include "liwhiz/model.hpp"

namespace liwhiz {

inline constexpr std::uint8_t kCheckpointVersion = 1;

// LWPZ checkpoint layout (little-endian):
//   "LWPZ" | u8 version | u8 mode (0 full, 1 y_only) | u16 reserved |
//   u32 L | u32 F | u32 H |
//   f32 tensors in `tensors()` order: lml_enc_x, lml_enc_y, lml_dec_x,
//   lml_dec_y, lstm_enc.{fwd,bwd}.{w_ih,w_hh,bias}, lstm_dec.{...},
//   head_weight, head_bias. Matrices are row-major; x-side LML vectors are
//   absent (length 0) in y_only mode.
void save_checkpoint(const BackendParams& params, std::ostream& out);
void save_checkpoint(const BackendParams& params, const std::filesystem::path& path);
BackendParams load_checkpoint(std::istream& in);
BackendParams load_checkpoint(const std::filesystem::path& path);

/// Loads every `*.lwpz` in `dir` in lexicographic order.
std::vector<BackendParams> load_checkpoints(const std::filesystem::path& dir);

/// Bitwise equality of config, mode and every tensor.
bool bit_equal(const BackendParams& a, const BackendParams& b);

} // namespace liwhiz
