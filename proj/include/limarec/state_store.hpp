#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "limarec/streaming_state.hpp"

namespace limarec {

// File of fixed-length slots, one per user:
//   header: "LMSS", u16 version, u16 value width, u32 d, u32 m, u32 K,
//           u32 key capacity
//   slot:   u16 key length, key bytes zero-padded to the capacity, then one
//           serialized UserState record
// Updates overwrite a user's slot in place; new users are appended. The file
// size depends only on the number of users.
class StateStore {
 public:
  static constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 4 + 4 + 4 + 4;
  static constexpr std::size_t kDefaultKeyCapacity = 64;

  // Opens path, creating an empty store if it does not exist. An existing
  // store must have matching dims and encoding.
  static StateStore open(const std::string& path, const StateDims& dims,
                         StateEncoding enc = StateEncoding::f32,
                         std::size_t key_capacity = kDefaultKeyCapacity);
  // Opens an existing store with whatever dims its header declares.
  static StateStore open_existing(const std::string& path);

  const StateDims& dims() const { return dims_; }
  StateEncoding encoding() const { return enc_; }
  std::size_t slot_size() const;
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& users() const { return keys_; }  // slot order
  bool contains(const std::string& user) const { return index_.count(user) != 0; }

  std::optional<UserState> get(const std::string& user);
  std::vector<std::uint8_t> get_record(const std::string& user);
  void put(const std::string& user, const UserState& state);
  // Stores an already serialized record after validating it against dims.
  void put_record(const std::string& user, std::span<const std::uint8_t> record);

  // Picks up slots appended by another writer since open.
  void refresh();
  void flush();

 private:
  StateStore() = default;
  void load_index(std::uint64_t file_size);
  std::uint64_t slot_offset(std::size_t slot) const;

  std::string path_;
  std::fstream file_;
  StateDims dims_;
  StateEncoding enc_ = StateEncoding::f32;
  std::size_t key_capacity_ = kDefaultKeyCapacity;
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace limarec
