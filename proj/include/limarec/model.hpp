#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "limarec/feature_map.hpp"
#include "limarec/numerics.hpp"

namespace limarec {

using ItemId = std::uint32_t;  // dense item index, 1-based; 0 is padding

inline constexpr std::size_t kNumBlocks = 2;

struct ModelConfig {
  std::size_t dim = 32;            // d
  std::size_t feature_dim = 0;     // m; 0 means "same as dim"
  std::size_t num_interests = 2;   // K
  std::size_t max_len = 1000;      // positional table rows
  std::size_t vocab_size = 0;      // |V|
  double dropout = 0.1;
  bool multi_interest = true;      // false: use h^(2)_l directly as one interest
  bool scale_by_sqrt_d = true;
  std::uint64_t seed = 0;

  std::size_t features() const { return feature_dim == 0 ? dim : feature_dim; }
  // Number of user representations the model emits.
  std::size_t interests() const { return multi_interest ? num_interests : 1; }
  void validate() const;
};

struct EmbeddingTables {
  Matrix item_table;  // (|V| + 1) x d, row 0 is padding and stays zero
  Matrix pos_table;   // max_len x d
};

struct AttentionBlockParams {
  Matrix w_q, w_k, w_v;  // d x d, applied as W h
  Matrix ffn_w1;         // d x d, applied as W1 s
  Matrix ffn_w2;         // d x d, applied as row vector times W2
  Vector ffn_b1, ffn_b2;
  Vector ln_attn_gain, ln_attn_bias;
  Vector ln_ffn_gain, ln_ffn_bias;
};

struct MultiInterestParams {
  Matrix mu;         // K x d
  Matrix w_k_tilde;  // d x d
  Matrix w_v_tilde;  // d x d
};

// Every trainable tensor. The feature map is not trainable and lives in Model.
struct ModelParams {
  EmbeddingTables emb;
  std::array<AttentionBlockParams, kNumBlocks> blocks;
  MultiInterestParams interest;

  // Same shapes, all zeros.
  ModelParams zeros_like() const;
};

// Visits every trainable tensor in a fixed declared order. The callback gets
// a stable name and a span over the tensor's values.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::string_view("item_table"), p.emb.item_table.values());
  fn(std::string_view("pos_table"), p.emb.pos_table.values());
  static constexpr std::array<std::string_view, kNumBlocks> prefixes{"block1.", "block2."};
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    auto& blk = p.blocks[b];
    const std::string_view pre = prefixes[b];
    auto visit = [&](std::string_view field, auto&& values) {
      std::string name(pre);
      name += field;
      fn(std::string_view(name), std::span(values));
    };
    visit("w_q", blk.w_q.values());
    visit("w_k", blk.w_k.values());
    visit("w_v", blk.w_v.values());
    visit("ffn_w1", blk.ffn_w1.values());
    visit("ffn_w2", blk.ffn_w2.values());
    visit("ffn_b1", blk.ffn_b1);
    visit("ffn_b2", blk.ffn_b2);
    visit("ln_attn_gain", blk.ln_attn_gain);
    visit("ln_attn_bias", blk.ln_attn_bias);
    visit("ln_ffn_gain", blk.ln_ffn_gain);
    visit("ln_ffn_bias", blk.ln_ffn_bias);
  }
  fn(std::string_view("mu"), p.interest.mu.values());
  fn(std::string_view("w_k_tilde"), p.interest.w_k_tilde.values());
  fn(std::string_view("w_v_tilde"), p.interest.w_v_tilde.values());
}

struct Model {
  ModelConfig config;
  ModelParams params;
  FeatureMapSpec feature_map;

  // Random initialization from config.seed. Omega is drawn from its own stream
  // so it does not depend on the shapes of the trainable tensors.
  static Model init(const ModelConfig& config);

  std::size_t dim() const { return config.dim; }
  bool operator==(const Model& other) const;
};

bool operator==(const AttentionBlockParams& a, const AttentionBlockParams& b);
bool operator==(const ModelParams& a, const ModelParams& b);

}  // namespace limarec
