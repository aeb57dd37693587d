#include "limarec/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace limarec {

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss: lambda must be >= 0");
  if (negatives_per_positive < 1)
    throw std::invalid_argument("loss: negatives_per_positive must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("loss: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("loss: learning_rate must be > 0");
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t select_interest(const Matrix& interests, std::span<const double> target_emb) {
  if (interests.rows() == 0) throw std::invalid_argument("select_interest: no interests");
  std::size_t best = 0;
  double best_score = dot(interests.row(0), target_emb);
  for (std::size_t k = 1; k < interests.rows(); ++k) {
    const double s = dot(interests.row(k), target_emb);
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

double reg_loss(const Matrix& interests, std::span<const double> target_emb) {
  Vector scores(interests.rows());
  for (std::size_t k = 0; k < interests.rows(); ++k) scores[k] = dot(interests.row(k), target_emb);
  return softmax(scores)[select_interest(interests, target_emb)];
}

double rec_loss(const Matrix& interests, std::span<const double> target_emb,
                const Matrix& negative_embs) {
  if (negative_embs.rows() == 0) throw std::invalid_argument("rec_loss: need at least one negative");
  const auto phi = interests.row(select_interest(interests, target_emb));
  double neg = 0.0;
  for (std::size_t j = 0; j < negative_embs.rows(); ++j) neg += softplus(dot(phi, negative_embs.row(j)));
  return softplus(-dot(phi, target_emb)) + neg / static_cast<double>(negative_embs.rows());
}

double total_loss(const Matrix& interests, std::span<const double> target_emb,
                  const Matrix& negative_embs, const LossConfig& config) {
  return total_loss(rec_loss(interests, target_emb, negative_embs),
                    reg_loss(interests, target_emb), config.lambda, config.reg_sign);
}

ItemSet::ItemSet(std::vector<ItemId> items) : items_(std::move(items)) {
  std::sort(items_.begin(), items_.end());
  items_.erase(std::unique(items_.begin(), items_.end()), items_.end());
}

bool ItemSet::contains(ItemId item) const {
  return std::binary_search(items_.begin(), items_.end(), item);
}

std::vector<ItemId> sample_negatives(std::size_t vocab_size, const ItemSet& exclude, std::size_t n,
                                     SeededRng& rng) {
  const auto in_range = std::count_if(exclude.items().begin(), exclude.items().end(),
                                      [&](ItemId i) { return i >= 1 && i <= vocab_size; });
  if (static_cast<std::size_t>(in_range) >= vocab_size)
    throw std::invalid_argument("sample_negatives: exclusion covers the whole vocabulary");
  std::vector<ItemId> out;
  out.reserve(n);
  while (out.size() < n) {
    const auto item = static_cast<ItemId>(1 + rng.below(vocab_size));
    if (!exclude.contains(item)) out.push_back(item);
  }
  return out;
}

AdamState AdamState::for_params(const ModelParams& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

std::vector<std::span<double>> tensor_spans(ModelParams& params) {
  std::vector<std::span<double>> out;
  for_each_tensor(params, [&](std::string_view, std::span<double> v) { out.push_back(v); });
  return out;
}

std::vector<std::span<const double>> tensor_spans(const ModelParams& params) {
  std::vector<std::span<const double>> out;
  for_each_tensor(params, [&](std::string_view, auto v) { out.push_back(v); });
  return out;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const LossConfig& config) {
  auto p = tensor_spans(params);
  const auto g = tensor_spans(grads);
  auto m1 = tensor_spans(state.first_moment);
  auto m2 = tensor_spans(state.second_moment);
  if (g.size() != p.size() || m1.size() != p.size() || m2.size() != p.size())
    throw std::invalid_argument("adam_step: tensor count mismatch");
  for (std::size_t t = 0; t < p.size(); ++t)
    if (g[t].size() != p[t].size() || m1[t].size() != p[t].size() || m2[t].size() != p[t].size())
      throw std::invalid_argument("adam_step: shape mismatch in tensor " + std::to_string(t));

  state.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double step = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(b1, step);
  const double correction2 = 1.0 - std::pow(b2, step);
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      const double gi = g[t][i];
      m1[t][i] = b1 * m1[t][i] + (1.0 - b1) * gi;
      m2[t][i] = b2 * m2[t][i] + (1.0 - b2) * gi * gi;
      const double mhat = m1[t][i] / correction1;
      const double vhat = m2[t][i] / correction2;
      p[t][i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  }
}

}  // namespace limarec
