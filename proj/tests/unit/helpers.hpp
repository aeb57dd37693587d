#pragma once

#include <cstdint>
#include <vector>

#include "limarec/model.hpp"
#include "limarec/numerics.hpp"

namespace limarec::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, SeededRng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

inline Vector random_vector(std::size_t n, SeededRng& rng, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

// Random model with the layer-norm and bias vectors moved off their initial
// values so that every parameter matters.
inline Model random_model(std::size_t vocab, std::size_t d, std::size_t m, std::size_t k,
                          std::uint64_t seed, bool multi_interest = true, std::size_t max_len = 1000) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.dim = d;
  c.feature_dim = m;
  c.num_interests = k;
  c.max_len = max_len;
  c.multi_interest = multi_interest;
  c.dropout = 0.0;
  c.seed = seed;
  Model model = Model::init(c);
  SeededRng rng(seed ^ 0x5eedULL);
  for (auto& b : model.params.blocks)
    for (Vector* v : {&b.ffn_b1, &b.ffn_b2, &b.ln_attn_gain, &b.ln_attn_bias, &b.ln_ffn_gain,
                      &b.ln_ffn_bias})
      for (double& x : *v) x += 0.2 * rng.normal();
  return model;
}

inline std::vector<ItemId> random_items(std::size_t n, std::size_t vocab, SeededRng& rng) {
  std::vector<ItemId> items(n);
  for (auto& i : items) i = static_cast<ItemId>(1 + rng.below(vocab));
  return items;
}

}  // namespace limarec::test
