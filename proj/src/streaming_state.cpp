#include "limarec/streaming_state.hpp"

#include <stdexcept>
#include <string>

#include "limarec/byte_io.hpp"
#include "limarec/encoder.hpp"
#include "limarec/errors.hpp"

namespace limarec {

bool UserState::same_record(const UserState& other) const {
  return position == other.position && r == other.r && r_tilde == other.r_tilde &&
         z == other.z && z_tilde == other.z_tilde;
}

IncrementalEncoder::IncrementalEncoder(const Model& model)
    : model_(&model), phi_mu_(interest_query_features(model)) {}

UserState IncrementalEncoder::init_state() const {
  const std::size_t d = model_->dim();
  const std::size_t m = model_->feature_map.feature_dim;
  UserState s;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    s.r[b] = Matrix(m, d);
    s.z[b] = Vector(m, 0.0);
  }
  s.r_tilde = Matrix(m, d);
  s.z_tilde = Vector(m, 0.0);
  return s;
}

namespace {

// Attends with query vector q against (r, z); writes r^T phi(q) / phi(q).z.
void ratio_query(std::span<const double> phi_q, const Matrix& r,
                 const Vector& z, std::span<double> out) {
  matvec_t(r, phi_q, out);
  const double den = dot(phi_q, z);
  for (double& v : out) v /= den;
}

Matrix interests_from(const Matrix& phi_mu, const Matrix& r, const Vector& z) {
  Matrix out(phi_mu.rows(), r.cols());
  for (std::size_t k = 0; k < phi_mu.rows(); ++k) {
    matvec_t(r, phi_mu.row(k), out.row(k));
    const double den = dot(phi_mu.row(k), z);
    for (double& v : out.row(k)) v /= den;
  }
  return out;
}

}  // namespace

InterestSet IncrementalEncoder::ingest(UserState& state, ItemId item, IngestTrace* trace) const {
  const Model& model = *model_;
  const auto& emb = model.params.emb;
  const std::size_t d = model.dim();
  const std::size_t m = model.feature_map.feature_dim;
  if (item < 1 || item > model.config.vocab_size)
    throw std::out_of_range("ingest: item index " + std::to_string(item) + " outside [1, " +
                            std::to_string(model.config.vocab_size) + "]");

  UserState next = state;
  next.last_interests.reset();
  const std::size_t pos_row = position_row(next.position, emb.pos_table.rows());

  Vector h(d);
  {
    auto e = emb.item_table.row(item);
    auto p = emb.pos_table.row(pos_row);
    for (std::size_t j = 0; j < d; ++j) h[j] = e[j] + p[j];
  }

  Vector q(d), k(d), v(d), s(d), phi_q(m), phi_k(m);
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const auto& blk = model.params.blocks[b];
    const Vector a = layer_norm(h, blk.ln_attn_gain, blk.ln_attn_bias, kLayerNormEps);
    matvec(blk.w_q, a, q);
    matvec(blk.w_k, a, k);
    matvec(blk.w_v, a, v);
    apply_into(model.feature_map, k, phi_k);
    add_outer(1.0, phi_k, v, next.r[b]);
    axpy(1.0, phi_k, next.z[b]);
    apply_query_into(model.feature_map, q, phi_q);
    ratio_query(phi_q, next.r[b], next.z[b], s);
    if (trace != nullptr) trace->s[b] = s;

    axpy(1.0, s, h);
    const Vector bn = layer_norm(h, blk.ln_ffn_gain, blk.ln_ffn_bias, kLayerNormEps);
    const Vector f = ffn(bn, blk);
    axpy(1.0, f, h);
  }
  if (trace != nullptr) trace->h2 = h;

  InterestSet out;
  if (model.config.multi_interest) {
    const auto& head = model.params.interest;
    matvec(head.w_k_tilde, h, k);
    matvec(head.w_v_tilde, h, v);
    apply_into(model.feature_map, k, phi_k);
    add_outer(1.0, phi_k, v, next.r_tilde);
    axpy(1.0, phi_k, next.z_tilde);
    out.phis = interests_from(phi_mu_, next.r_tilde, next.z_tilde);
  } else {
    out.phis = Matrix(1, d);
    std::copy(h.begin(), h.end(), out.phis.row(0).begin());
  }

  if (!all_finite(out.phis.values()) || !all_finite(next.z_tilde) ||
      !all_finite(next.z[0]) || !all_finite(next.z[1]))
    throw NumericError("ingest: non-finite value at position " +
                       std::to_string(next.position + 1));

  next.position += 1;
  next.last_interests = out;
  state = std::move(next);
  return out;
}

InterestSet IncrementalEncoder::interest_set(const UserState& state) const {
  if (state.position == 0) throw std::logic_error("interest_set: no behaviors ingested");
  if (state.last_interests) return *state.last_interests;
  if (!model_->config.multi_interest)
    throw std::logic_error(
        "interest_set: without the interest head the representation is only available "
        "right after an ingest");
  return InterestSet{interests_from(phi_mu_, state.r_tilde, state.z_tilde)};
}

std::vector<double> score_items(const InterestSet& interests, const Matrix& item_embs,
                                ScoreMode mode, std::optional<std::span<const double>> target_emb) {
  const Matrix& phis = interests.phis;
  if (phis.rows() == 0) throw std::invalid_argument("score_items: empty interest set");
  if (item_embs.cols() != phis.cols())
    throw std::invalid_argument("score_items: embedding width mismatch");
  std::vector<double> scores(item_embs.rows());
  if (mode == ScoreMode::universal) {
    if (!target_emb) throw std::invalid_argument("score_items: universal mode needs a target");
    if (target_emb->size() != phis.cols())
      throw std::invalid_argument("score_items: target width mismatch");
    std::size_t best = 0;
    double best_score = dot(phis.row(0), *target_emb);
    for (std::size_t k = 1; k < phis.rows(); ++k) {
      const double sc = dot(phis.row(k), *target_emb);
      if (sc > best_score) {
        best_score = sc;
        best = k;
      }
    }
    for (std::size_t j = 0; j < item_embs.rows(); ++j)
      scores[j] = dot(phis.row(best), item_embs.row(j));
  } else {
    for (std::size_t j = 0; j < item_embs.rows(); ++j) {
      double best = dot(phis.row(0), item_embs.row(j));
      for (std::size_t k = 1; k < phis.rows(); ++k)
        best = std::max(best, dot(phis.row(k), item_embs.row(j)));
      scores[j] = best;
    }
  }
  return scores;
}

StateDims state_dims(const Model& model) {
  return StateDims{static_cast<std::uint32_t>(model.dim()),
                   static_cast<std::uint32_t>(model.feature_map.feature_dim),
                   static_cast<std::uint32_t>(model.config.interests())};
}

namespace {

constexpr std::string_view kStateMagic = "LMST";
constexpr std::uint16_t kStateVersion = 1;

std::size_t state_values(const StateDims& dims) {
  return 3 * static_cast<std::size_t>(dims.features) * dims.dim + 3 * std::size_t{dims.features};
}

}  // namespace

std::size_t state_record_size(const StateDims& dims, StateEncoding enc) {
  return kStateHeaderBytes + state_values(dims) * static_cast<std::size_t>(enc);
}

std::vector<std::uint8_t> serialize_state(const UserState& state, const StateDims& dims,
                                          StateEncoding enc) {
  if (state.dim() != dims.dim || state.features() != dims.features)
    throw std::invalid_argument("serialize_state: state does not match dims");
  ByteWriter w;
  w.bytes(kStateMagic);
  w.u16(kStateVersion);
  w.u16(static_cast<std::uint16_t>(enc));
  w.u32(dims.dim);
  w.u32(dims.features);
  w.u32(dims.interests);
  w.u64(state.position);
  auto put = [&](std::span<const double> values) {
    for (double v : values) {
      if (enc == StateEncoding::f32)
        w.f32(static_cast<float>(v));
      else
        w.f64(v);
    }
  };
  put(state.r[0].values());
  put(state.r[1].values());
  put(state.r_tilde.values());
  put(state.z[0]);
  put(state.z[1]);
  put(state.z_tilde);
  return w.take();
}

UserState deserialize_state(std::span<const std::uint8_t> bytes, const StateDims& dims) {
  ByteReader rd(bytes, "state record");
  if (rd.bytes(4) != kStateMagic) throw DataError("state record: bad magic");
  const std::uint16_t version = rd.u16();
  if (version != kStateVersion)
    throw DataError("state record: unsupported version " + std::to_string(version));
  const std::uint16_t width = rd.u16();
  if (width != 4 && width != 8)
    throw DataError("state record: bad value width " + std::to_string(width));
  const StateDims got{rd.u32(), rd.u32(), rd.u32()};
  if (got.dim != dims.dim || got.features != dims.features || got.interests != dims.interests)
    throw DataError("state record: dims (" + std::to_string(got.dim) + ", " +
                    std::to_string(got.features) + ", " + std::to_string(got.interests) +
                    ") do not match model (" + std::to_string(dims.dim) + ", " +
                    std::to_string(dims.features) + ", " + std::to_string(dims.interests) + ")");
  const std::size_t expected = state_record_size(dims, static_cast<StateEncoding>(width));
  if (bytes.size() != expected)
    throw DataError("state record: length " + std::to_string(bytes.size()) + ", expected " +
                    std::to_string(expected));

  UserState s;
  s.position = rd.u64();
  auto get = [&](std::span<double> values) {
    for (double& v : values) v = width == 4 ? static_cast<double>(rd.f32()) : rd.f64();
  };
  const std::size_t d = dims.dim, m = dims.features;
  for (auto& r : s.r) {
    r = Matrix(m, d);
    get(r.values());
  }
  s.r_tilde = Matrix(m, d);
  get(s.r_tilde.values());
  for (auto& z : s.z) {
    z = Vector(m);
    get(z);
  }
  s.z_tilde = Vector(m);
  get(s.z_tilde);
  return s;
}

}  // namespace limarec
