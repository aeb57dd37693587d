#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "limarec/feature_map.hpp"
#include "limarec/model.hpp"
#include "limarec/numerics.hpp"

namespace limarec {

enum class AttentionMode { linear, softmax_reference };

inline constexpr double kLayerNormEps = 1e-8;

// Row of the positional table used for 0-based position l. Positions past the
// trained horizon reuse the last row.
inline std::size_t position_row(std::size_t l, std::size_t max_len) {
  return l < max_len ? l : max_len - 1;
}

// Row l is e_{v_l} + p_l. Throws on item indices outside [1, |V|].
Matrix embed_sequence(std::span<const ItemId> items, const EmbeddingTables& tables);

// Exact causal scaled dot-product attention over the rows of h. This is the
// reference the linear path approximates.
Matrix causal_softmax_attention(const Matrix& h, const AttentionBlockParams& p, std::size_t d);

// Causal linear attention with running prefix sums of phi(k) v^T and phi(k).
Matrix causal_linear_attention(const Matrix& h, const AttentionBlockParams& p,
                               const FeatureMapSpec& fm);

// ReLU(W1 s + b1) W2 + b2, with the second product taken as row vector times W2.
Vector ffn(std::span<const double> s, const AttentionBlockParams& p);

// Pre-norm residual block:
//   x1 = h + Dropout(Attn(LN_attn(h)))
//   out = x1 + Dropout(FFN(LN_ffn(x1)))
// Dropout is applied only when rng is non-null and rate > 0.
Matrix block_forward(const Matrix& h, const AttentionBlockParams& p, const FeatureMapSpec& fm,
                     AttentionMode mode, double dropout = 0.0, SeededRng* rng = nullptr);

// Intermediate tensors of a whole-sequence forward pass.
struct BatchTrace {
  Matrix h0;  // embeddings
  Matrix s1;  // attention sub-layer output of block 1 (before residual)
  Matrix h1;
  Matrix s2;
  Matrix h2;
};

BatchTrace encode_batch_trace(std::span<const ItemId> items, const Model& model,
                              AttentionMode mode, double dropout = 0.0,
                              SeededRng* rng = nullptr);

Matrix encode_batch(std::span<const ItemId> items, const Model& model,
                    AttentionMode mode = AttentionMode::linear);

// Interest representations at every prefix, evaluated from H^(2) with prefix
// sums. Entry l is a K x d matrix. Without the multi-interest head the single
// representation is h^(2)_l itself.
std::vector<Matrix> batch_interests(const Matrix& h2, const Model& model);

// Query features phi(mu_k) for every interest vector, K x m.
Matrix interest_query_features(const Model& model);

}  // namespace limarec
