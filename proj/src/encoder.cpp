#include "limarec/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace limarec {

Matrix embed_sequence(std::span<const ItemId> items, const EmbeddingTables& tables) {
  const std::size_t d = tables.item_table.cols();
  const std::size_t vocab = tables.item_table.rows() - 1;
  const std::size_t max_len = tables.pos_table.rows();
  if (max_len == 0) throw std::invalid_argument("embed_sequence: empty positional table");
  Matrix out(items.size(), d);
  for (std::size_t l = 0; l < items.size(); ++l) {
    if (items[l] < 1 || items[l] > vocab)
      throw std::out_of_range("embed_sequence: item index " + std::to_string(items[l]) +
                              " outside [1, " + std::to_string(vocab) + "]");
    auto row = out.row(l);
    auto e = tables.item_table.row(items[l]);
    auto p = tables.pos_table.row(position_row(l, max_len));
    for (std::size_t j = 0; j < d; ++j) row[j] = e[j] + p[j];
  }
  return out;
}

namespace {

Matrix project(const Matrix& h, const Matrix& w) {
  Matrix out(h.rows(), w.rows());
  for (std::size_t l = 0; l < h.rows(); ++l) matvec(w, h.row(l), out.row(l));
  return out;
}

void check_width(const Matrix& h, const AttentionBlockParams& p) {
  if (h.cols() != p.w_q.cols())
    throw std::invalid_argument("attention: input width " + std::to_string(h.cols()) +
                                " does not match projection width " +
                                std::to_string(p.w_q.cols()));
}

}  // namespace

Matrix causal_softmax_attention(const Matrix& h, const AttentionBlockParams& p, std::size_t d) {
  check_width(h, p);
  const Matrix q = project(h, p.w_q);
  const Matrix k = project(h, p.w_k);
  const Matrix v = project(h, p.w_v);
  const double inv_temp = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix out(h.rows(), v.cols());
  Vector logits;
  for (std::size_t l = 0; l < h.rows(); ++l) {
    logits.resize(l + 1);
    for (std::size_t j = 0; j <= l; ++j) logits[j] = dot(q.row(l), k.row(j)) * inv_temp;
    const Vector w = softmax(logits);
    for (std::size_t j = 0; j <= l; ++j) axpy(w[j], v.row(j), out.row(l));
  }
  return out;
}

Matrix causal_linear_attention(const Matrix& h, const AttentionBlockParams& p,
                               const FeatureMapSpec& fm) {
  check_width(h, p);
  const std::size_t m = fm.feature_dim;
  const std::size_t dv = p.w_v.rows();
  Matrix r(m, dv);
  Vector z(m, 0.0);
  Vector q(p.w_q.rows()), k(p.w_k.rows()), v(dv), phi_q(m), phi_k(m), num(dv);
  Matrix out(h.rows(), dv);
  for (std::size_t l = 0; l < h.rows(); ++l) {
    matvec(p.w_q, h.row(l), q);
    matvec(p.w_k, h.row(l), k);
    matvec(p.w_v, h.row(l), v);
    apply_into(fm, k, phi_k);
    add_outer(1.0, phi_k, v, r);
    axpy(1.0, phi_k, z);
    apply_query_into(fm, q, phi_q);
    matvec_t(r, phi_q, num);
    const double den = dot(phi_q, z);
    auto dst = out.row(l);
    for (std::size_t j = 0; j < dv; ++j) dst[j] = num[j] / den;
  }
  return out;
}

Vector ffn(std::span<const double> s, const AttentionBlockParams& p) {
  const std::size_t d = p.ffn_w1.rows();
  if (s.size() != p.ffn_w1.cols()) throw std::invalid_argument("ffn: input size mismatch");
  Vector hidden(d);
  matvec(p.ffn_w1, s, hidden);
  for (std::size_t i = 0; i < d; ++i) hidden[i] = std::max(0.0, hidden[i] + p.ffn_b1[i]);
  Vector out(p.ffn_w2.cols());
  matvec_t(p.ffn_w2, hidden, out);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += p.ffn_b2[j];
  return out;
}

namespace {

Matrix layer_norm_rows(const Matrix& x, const Vector& gain, const Vector& bias) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t l = 0; l < x.rows(); ++l) {
    const Vector y = layer_norm(x.row(l), gain, bias, kLayerNormEps);
    std::copy(y.begin(), y.end(), out.row(l).begin());
  }
  return out;
}

void dropout_inplace(Matrix& x, double rate, SeededRng* rng) {
  if (rng == nullptr || rate <= 0.0) return;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : x.values()) v = rng->uniform() < rate ? 0.0 : v * keep_scale;
}

Matrix attention(const Matrix& a, const AttentionBlockParams& p, const FeatureMapSpec& fm,
                 AttentionMode mode) {
  return mode == AttentionMode::linear ? causal_linear_attention(a, p, fm)
                                       : causal_softmax_attention(a, p, a.cols());
}

Matrix block_forward_impl(const Matrix& h, const AttentionBlockParams& p,
                          const FeatureMapSpec& fm, AttentionMode mode, double dropout,
                          SeededRng* rng, Matrix* attn_out) {
  Matrix s = attention(layer_norm_rows(h, p.ln_attn_gain, p.ln_attn_bias), p, fm, mode);
  if (attn_out != nullptr) *attn_out = s;
  dropout_inplace(s, dropout, rng);
  Matrix x1 = h;
  axpy(1.0, s.values(), x1.values());

  Matrix f(x1.rows(), x1.cols());
  const Matrix b = layer_norm_rows(x1, p.ln_ffn_gain, p.ln_ffn_bias);
  for (std::size_t l = 0; l < b.rows(); ++l) {
    const Vector y = ffn(b.row(l), p);
    std::copy(y.begin(), y.end(), f.row(l).begin());
  }
  dropout_inplace(f, dropout, rng);
  axpy(1.0, f.values(), x1.values());
  return x1;
}

}  // namespace

Matrix block_forward(const Matrix& h, const AttentionBlockParams& p, const FeatureMapSpec& fm,
                     AttentionMode mode, double dropout, SeededRng* rng) {
  check_width(h, p);
  return block_forward_impl(h, p, fm, mode, dropout, rng, nullptr);
}

BatchTrace encode_batch_trace(std::span<const ItemId> items, const Model& model,
                              AttentionMode mode, double dropout, SeededRng* rng) {
  BatchTrace t;
  t.h0 = embed_sequence(items, model.params.emb);
  Matrix h0_dropped = t.h0;
  dropout_inplace(h0_dropped, dropout, rng);
  const auto& blocks = model.params.blocks;
  t.h1 = block_forward_impl(h0_dropped, blocks[0], model.feature_map, mode, dropout, rng, &t.s1);
  t.h2 = block_forward_impl(t.h1, blocks[1], model.feature_map, mode, dropout, rng, &t.s2);
  return t;
}

Matrix encode_batch(std::span<const ItemId> items, const Model& model, AttentionMode mode) {
  return encode_batch_trace(items, model, mode).h2;
}

Matrix interest_query_features(const Model& model) {
  const auto& mu = model.params.interest.mu;
  Matrix phi(mu.rows(), model.feature_map.feature_dim);
  for (std::size_t k = 0; k < mu.rows(); ++k)
    apply_query_into(model.feature_map, mu.row(k), phi.row(k));
  return phi;
}

std::vector<Matrix> batch_interests(const Matrix& h2, const Model& model) {
  const std::size_t d = model.dim();
  std::vector<Matrix> out;
  out.reserve(h2.rows());
  if (!model.config.multi_interest) {
    for (std::size_t l = 0; l < h2.rows(); ++l) {
      Matrix one(1, d);
      std::copy(h2.row(l).begin(), h2.row(l).end(), one.row(0).begin());
      out.push_back(std::move(one));
    }
    return out;
  }
  const auto& head = model.params.interest;
  const std::size_t m = model.feature_map.feature_dim;
  const std::size_t num_k = head.mu.rows();
  const Matrix phi_mu = interest_query_features(model);
  Matrix r(m, d);
  Vector z(m, 0.0), key(d), value(d), phi_k(m), num(d);
  for (std::size_t l = 0; l < h2.rows(); ++l) {
    matvec(head.w_k_tilde, h2.row(l), key);
    matvec(head.w_v_tilde, h2.row(l), value);
    apply_into(model.feature_map, key, phi_k);
    add_outer(1.0, phi_k, value, r);
    axpy(1.0, phi_k, z);
    Matrix interests(num_k, d);
    for (std::size_t k = 0; k < num_k; ++k) {
      matvec_t(r, phi_mu.row(k), num);
      const double den = dot(phi_mu.row(k), z);
      auto dst = interests.row(k);
      for (std::size_t j = 0; j < d; ++j) dst[j] = num[j] / den;
    }
    out.push_back(std::move(interests));
  }
  return out;
}

}  // namespace limarec
