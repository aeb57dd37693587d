#include "limarec/model.hpp"

#include <cmath>
#include <stdexcept>

namespace limarec {

void ModelConfig::validate() const {
  if (dim == 0) throw std::invalid_argument("model: dim must be >= 1");
  if (num_interests == 0) throw std::invalid_argument("model: num_interests must be >= 1");
  if (max_len == 0) throw std::invalid_argument("model: max_len must be >= 1");
  if (vocab_size == 0) throw std::invalid_argument("model: vocab_size must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("model: dropout must lie in [0, 1)");
}

namespace {

AttentionBlockParams zero_block(std::size_t d) {
  AttentionBlockParams b;
  b.w_q = b.w_k = b.w_v = b.ffn_w1 = b.ffn_w2 = Matrix(d, d);
  b.ffn_b1 = b.ffn_b2 = b.ln_attn_gain = b.ln_attn_bias = b.ln_ffn_gain = b.ln_ffn_bias = Vector(d);
  return b;
}

void fill_normal(Matrix& m, double stddev, SeededRng& rng) {
  for (double& x : m.values()) x = stddev * rng.normal();
}

}  // namespace

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  z.emb.item_table = Matrix(emb.item_table.rows(), emb.item_table.cols());
  z.emb.pos_table = Matrix(emb.pos_table.rows(), emb.pos_table.cols());
  for (std::size_t b = 0; b < kNumBlocks; ++b) z.blocks[b] = zero_block(blocks[b].w_q.rows());
  z.interest.mu = Matrix(interest.mu.rows(), interest.mu.cols());
  z.interest.w_k_tilde = Matrix(interest.w_k_tilde.rows(), interest.w_k_tilde.cols());
  z.interest.w_v_tilde = Matrix(interest.w_v_tilde.rows(), interest.w_v_tilde.cols());
  return z;
}

Model Model::init(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Model model;
  model.config = config;
  SeededRng rng(mix_seed(config.seed, 1));

  auto& p = model.params;
  p.emb.item_table = Matrix(config.vocab_size + 1, d);
  fill_normal(p.emb.item_table, scale, rng);
  std::fill(p.emb.item_table.row(0).begin(), p.emb.item_table.row(0).end(), 0.0);
  p.emb.pos_table = Matrix(config.max_len, d);
  fill_normal(p.emb.pos_table, scale, rng);

  for (auto& blk : p.blocks) {
    blk = zero_block(d);
    for (Matrix* w : {&blk.w_q, &blk.w_k, &blk.w_v, &blk.ffn_w1, &blk.ffn_w2})
      fill_normal(*w, scale, rng);
    std::fill(blk.ln_attn_gain.begin(), blk.ln_attn_gain.end(), 1.0);
    std::fill(blk.ln_ffn_gain.begin(), blk.ln_ffn_gain.end(), 1.0);
  }

  p.interest.mu = Matrix(config.num_interests, d);
  fill_normal(p.interest.mu, 1.0, rng);
  p.interest.w_k_tilde = Matrix(d, d);
  p.interest.w_v_tilde = Matrix(d, d);
  fill_normal(p.interest.w_k_tilde, scale, rng);
  fill_normal(p.interest.w_v_tilde, scale, rng);

  SeededRng omega_rng(mix_seed(config.seed, 2));
  model.feature_map =
      FeatureMapSpec::draw(d, config.features(), config.scale_by_sqrt_d, omega_rng);
  return model;
}

bool operator==(const AttentionBlockParams& a, const AttentionBlockParams& b) {
  return a.w_q == b.w_q && a.w_k == b.w_k && a.w_v == b.w_v && a.ffn_w1 == b.ffn_w1 &&
         a.ffn_w2 == b.ffn_w2 && a.ffn_b1 == b.ffn_b1 && a.ffn_b2 == b.ffn_b2 &&
         a.ln_attn_gain == b.ln_attn_gain && a.ln_attn_bias == b.ln_attn_bias &&
         a.ln_ffn_gain == b.ln_ffn_gain && a.ln_ffn_bias == b.ln_ffn_bias;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  return a.emb.item_table == b.emb.item_table && a.emb.pos_table == b.emb.pos_table &&
         a.blocks == b.blocks && a.interest.mu == b.interest.mu &&
         a.interest.w_k_tilde == b.interest.w_k_tilde &&
         a.interest.w_v_tilde == b.interest.w_v_tilde;
}

bool Model::operator==(const Model& other) const {
  const auto& a = config;
  const auto& b = other.config;
  return a.dim == b.dim && a.features() == b.features() && a.num_interests == b.num_interests &&
         a.max_len == b.max_len && a.vocab_size == b.vocab_size &&
         a.multi_interest == b.multi_interest && a.scale_by_sqrt_d == b.scale_by_sqrt_d &&
         a.seed == b.seed && params == other.params && feature_map == other.feature_map;
}

}  // namespace limarec
