#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "limarec/model.hpp"
#include "limarec/numerics.hpp"

namespace limarec {

// K up-to-date user representations, one per row.
struct InterestSet {
  Matrix phis;  // K x d

  std::size_t size() const { return phis.rows(); }
};

// Constant-size summary of a user's whole history: running sums for both
// self-attention blocks and for the interest head. Nothing in here grows with
// the number of ingested items.
struct UserState {
  std::array<Matrix, kNumBlocks> r;  // m x d each
  Matrix r_tilde;                    // m x d
  std::array<Vector, kNumBlocks> z;  // m each
  Vector z_tilde;                    // m
  std::uint64_t position = 0;

  // Representations after the most recent ingest. Not part of the record.
  std::optional<InterestSet> last_interests;

  std::size_t dim() const { return r_tilde.cols(); }
  std::size_t features() const { return r_tilde.rows(); }
  // Equality of the persisted part.
  bool same_record(const UserState& other) const;
};

// Per-ingest intermediate vectors, for tests and diagnostics.
struct IngestTrace {
  std::array<Vector, kNumBlocks> s;  // attention sub-layer outputs
  Vector h2;
};

// O(1) per-click encoder. Holds a reference to the model, which must outlive
// it and must not change while it is in use; phi(mu_k) is computed once here.
class IncrementalEncoder {
 public:
  explicit IncrementalEncoder(const Model& model);

  const Model& model() const { return *model_; }

  UserState init_state() const;

  // Appends one click. Keys and values of the new position are added to the
  // running sums before the new query is evaluated, so position l attends to
  // itself. Throws std::out_of_range on an invalid item and NumericError if a
  // non-finite value appears; in both cases the state is left untouched.
  InterestSet ingest(UserState& state, ItemId item, IngestTrace* trace = nullptr) const;

  // Current representations. Throws std::logic_error at position 0.
  InterestSet interest_set(const UserState& state) const;

 private:
  const Model* model_;
  Matrix phi_mu_;  // K x m
};

enum class ScoreMode { universal, exact_max };

// Scores every row of item_embs against the interest set.
//   universal: all items use the interest with the largest score on target_emb
//   exact_max: each item takes its maximum score over the interests
std::vector<double> score_items(const InterestSet& interests, const Matrix& item_embs,
                                ScoreMode mode,
                                std::optional<std::span<const double>> target_emb = std::nullopt);

enum class StateEncoding : std::uint16_t { f32 = 4, f64 = 8 };

struct StateDims {
  std::uint32_t dim = 0;
  std::uint32_t features = 0;
  std::uint32_t interests = 0;
};

StateDims state_dims(const Model& model);

// Fixed-length record: "LMST", u16 version, u16 value width, u32 d, u32 m,
// u32 K, u64 position, then r1, r2, r_tilde, z1, z2, z_tilde as little-endian
// IEEE values of the chosen width.
inline constexpr std::size_t kStateHeaderBytes = 4 + 2 + 2 + 4 + 4 + 4 + 8;
std::size_t state_record_size(const StateDims& dims, StateEncoding enc = StateEncoding::f32);

std::vector<std::uint8_t> serialize_state(const UserState& state, const StateDims& dims,
                                          StateEncoding enc = StateEncoding::f32);
UserState deserialize_state(std::span<const std::uint8_t> bytes, const StateDims& dims);

}  // namespace limarec
