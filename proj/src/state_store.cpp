#include "limarec/state_store.hpp"

#include <filesystem>

#include "limarec/byte_io.hpp"
#include "limarec/errors.hpp"

namespace limarec {

namespace {

constexpr std::uint16_t kStoreVersion = 1;

std::vector<std::uint8_t> read_at(std::fstream& f, std::uint64_t offset, std::size_t n,
                                  const std::string& path) {
  std::vector<std::uint8_t> buf(n);
  f.clear();
  f.seekg(static_cast<std::streamoff>(offset));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(f.gcount()) != n) throw DataError(path + ": truncated state store");
  return buf;
}

void write_at(std::fstream& f, std::uint64_t offset, std::span<const std::uint8_t> bytes,
              const std::string& path) {
  f.clear();
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError(path + ": write failed");
}

}  // namespace

std::size_t StateStore::slot_size() const {
  return 2 + key_capacity_ + state_record_size(dims_, enc_);
}

std::uint64_t StateStore::slot_offset(std::size_t slot) const {
  return kHeaderBytes + static_cast<std::uint64_t>(slot) * slot_size();
}

StateStore StateStore::open(const std::string& path, const StateDims& dims, StateEncoding enc,
                            std::size_t key_capacity) {
  if (std::filesystem::exists(path)) {
    StateStore s = open_existing(path);
    if (s.dims_.dim != dims.dim || s.dims_.features != dims.features ||
        s.dims_.interests != dims.interests)
      throw DataError(path + ": state store dims do not match the model");
    if (s.enc_ != enc) throw DataError(path + ": state store value width does not match");
    return s;
  }
  if (key_capacity == 0 || key_capacity > 0xffff)
    throw std::invalid_argument("state store: key capacity must be in [1, 65535]");
  ByteWriter w;
  w.bytes("LMSS");
  w.u16(kStoreVersion);
  w.u16(static_cast<std::uint16_t>(enc));
  w.u32(dims.dim);
  w.u32(dims.features);
  w.u32(dims.interests);
  w.u32(static_cast<std::uint32_t>(key_capacity));
  {
    std::ofstream create(path, std::ios::binary);
    if (!create) throw DataError("cannot create " + path);
    create.write(reinterpret_cast<const char*>(w.buffer().data()),
                 static_cast<std::streamsize>(w.buffer().size()));
  }
  return open_existing(path);
}

StateStore StateStore::open_existing(const std::string& path) {
  StateStore s;
  s.path_ = path;
  s.file_.open(path, std::ios::binary | std::ios::in | std::ios::out);
  if (!s.file_) throw DataError("cannot open state store " + path);
  const auto header = read_at(s.file_, 0, kHeaderBytes, path);
  ByteReader r(header, path);
  if (r.bytes(4) != "LMSS") throw DataError(path + ": not a state store");
  if (const auto v = r.u16(); v != kStoreVersion)
    throw DataError(path + ": unsupported state store version " + std::to_string(v));
  const auto width = r.u16();
  if (width != 4 && width != 8) throw DataError(path + ": bad value width");
  s.enc_ = static_cast<StateEncoding>(width);
  s.dims_.dim = r.u32();
  s.dims_.features = r.u32();
  s.dims_.interests = r.u32();
  s.key_capacity_ = r.u32();
  if (s.dims_.dim == 0 || s.dims_.features == 0 || s.dims_.interests == 0 || s.key_capacity_ == 0)
    throw DataError(path + ": bad state store header");
  s.load_index(std::filesystem::file_size(path));
  return s;
}

void StateStore::load_index(std::uint64_t file_size) {
  const std::uint64_t body = file_size - kHeaderBytes;
  if (body % slot_size() != 0) throw DataError(path_ + ": partial slot at end of state store");
  const std::size_t slots = body / slot_size();
  for (std::size_t i = keys_.size(); i < slots; ++i) {
    const auto head = read_at(file_, slot_offset(i), 2 + key_capacity_, path_);
    const std::size_t len = head[0] | (static_cast<std::size_t>(head[1]) << 8);
    if (len == 0 || len > key_capacity_) throw DataError(path_ + ": bad key in slot " + std::to_string(i));
    std::string key(reinterpret_cast<const char*>(head.data() + 2), len);
    if (!index_.emplace(key, i).second) throw DataError(path_ + ": duplicate user '" + key + "'");
    keys_.push_back(std::move(key));
  }
}

void StateStore::refresh() { load_index(std::filesystem::file_size(path_)); }

void StateStore::flush() { file_.flush(); }

std::vector<std::uint8_t> StateStore::get_record(const std::string& user) {
  const auto it = index_.find(user);
  if (it == index_.end()) return {};
  return read_at(file_, slot_offset(it->second) + 2 + key_capacity_, state_record_size(dims_, enc_),
                 path_);
}

std::optional<UserState> StateStore::get(const std::string& user) {
  const auto rec = get_record(user);
  if (rec.empty()) return std::nullopt;
  return deserialize_state(rec, dims_);
}

void StateStore::put(const std::string& user, const UserState& state) {
  put_record(user, serialize_state(state, dims_, enc_));
}

void StateStore::put_record(const std::string& user, std::span<const std::uint8_t> record) {
  if (user.empty() || user.size() > key_capacity_)
    throw DataError("state store: user id '" + user + "' must have 1.." +
                    std::to_string(key_capacity_) + " bytes");
  if (record.size() != state_record_size(dims_, enc_))
    throw DataError("state store: record has the wrong length or value width");
  deserialize_state(record, dims_);  // validates header and dims
  const auto it = index_.find(user);
  if (it != index_.end()) {
    write_at(file_, slot_offset(it->second) + 2 + key_capacity_, record, path_);
    return;
  }
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(user.size()));
  w.bytes(user);
  w.bytes(std::string(key_capacity_ - user.size(), '\0'));
  auto slot = w.take();
  slot.insert(slot.end(), record.begin(), record.end());
  const std::size_t index = keys_.size();
  write_at(file_, slot_offset(index), slot, path_);
  keys_.push_back(user);
  index_.emplace(user, index);
}

}  // namespace limarec
