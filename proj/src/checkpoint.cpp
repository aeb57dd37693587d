#include "limarec/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "limarec/byte_io.hpp"
#include "limarec/errors.hpp"

namespace limarec {

namespace {

constexpr std::uint16_t kFlagMultiInterest = 1;
constexpr std::uint16_t kFlagScaleInputs = 2;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& c = ckpt.model.config;
  if (ckpt.item_ids.size() != c.vocab_size + 1)
    throw std::invalid_argument("serialize_checkpoint: item id table does not match vocab");
  ByteWriter w;
  w.bytes("LMRC");
  w.u16(kCheckpointVersion);
  w.u16(static_cast<std::uint16_t>((c.multi_interest ? kFlagMultiInterest : 0) |
                                   (c.scale_by_sqrt_d ? kFlagScaleInputs : 0)));
  w.u32(static_cast<std::uint32_t>(c.dim));
  w.u32(static_cast<std::uint32_t>(c.features()));
  w.u32(static_cast<std::uint32_t>(c.num_interests));
  w.u32(static_cast<std::uint32_t>(c.max_len));
  w.u32(static_cast<std::uint32_t>(c.vocab_size));
  w.u64(c.seed);
  w.f64(c.dropout);
  for_each_tensor(ckpt.model.params, [&](std::string_view, std::span<const double> t) {
    for (double v : t) w.f64(v);
  });
  for (double v : ckpt.model.feature_map.omega.values()) w.f64(v);
  w.u32(static_cast<std::uint32_t>(ckpt.item_ids.size()));
  for (const auto& id : ckpt.item_ids) w.str(id);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  if (bytes.size() < 4 || r.bytes(4) != "LMRC") throw DataError("not a checkpoint");
  const auto version = r.u16();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto flags = r.u16();
  ModelConfig c;
  c.multi_interest = (flags & kFlagMultiInterest) != 0;
  c.scale_by_sqrt_d = (flags & kFlagScaleInputs) != 0;
  c.dim = r.u32();
  c.feature_dim = r.u32();
  c.num_interests = r.u32();
  c.max_len = r.u32();
  c.vocab_size = r.u32();
  c.seed = r.u64();
  c.dropout = r.f64();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }
  // Payload length is fixed by the header; check it before allocating.
  const std::size_t d = c.dim, m = c.features(), k = c.num_interests;
  const std::size_t tensor_values = (c.vocab_size + 1) * d + c.max_len * d +
                                    kNumBlocks * (5 * d * d + 6 * d) + k * d + 2 * d * d + m * d;
  if (r.remaining() < tensor_values * 8) throw DataError("checkpoint: truncated");

  Checkpoint out;
  out.model = Model::init(c);
  for_each_tensor(out.model.params, [&](std::string_view, std::span<double> t) {
    for (double& v : t) v = r.f64();
  });
  for (double& v : out.model.feature_map.omega.values()) v = r.f64();
  const auto count = r.u32();
  if (count != c.vocab_size + 1) throw DataError("checkpoint: item id table does not match vocab");
  out.item_ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.item_ids.push_back(r.str());
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace limarec
