#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "limarec/model.hpp"

namespace limarec {

// A trained model plus the raw item ids of its vocabulary, so that event
// streams in the original id space can be mapped onto embedding rows.
struct Checkpoint {
  Model model;
  std::vector<std::string> item_ids;  // dense id -> raw id; entry 0 unused

  bool operator==(const Checkpoint&) const = default;
};

// Layout (little-endian):
//   "LMRC", u16 version, u16 flags (bit 0 multi-interest, bit 1 input scaling)
//   u32 d, u32 m, u32 K, u32 max_len, u32 vocab, u64 seed, f64 dropout
//   every trainable tensor as f64 in for_each_tensor order
//   Omega (m x d) as f64
//   u32 count, then count length-prefixed item id strings
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
// Throws DataError ("not a checkpoint", unsupported version, truncation,
// trailing bytes, inconsistent dims). Nothing is returned on failure.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Whole-file helpers shared by the on-disk formats.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace limarec
