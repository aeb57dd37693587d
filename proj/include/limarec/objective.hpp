#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "limarec/model.hpp"
#include "limarec/numerics.hpp"

namespace limarec {

struct LossConfig {
  double lambda = 0.01;
  std::size_t negatives_per_positive = 1;
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // The regularizer is added as written (+1). -1 subtracts it instead.
  double reg_sign = 1.0;

  void validate() const;
};

// Index of the interest with the largest score phi_k . target; ties go to the
// lowest index.
std::size_t select_interest(const Matrix& interests, std::span<const double> target_emb);

// Softmax over the interest scores, evaluated at the selected interest.
// Lies in [1/K, 1].
double reg_loss(const Matrix& interests, std::span<const double> target_emb);

// Binary cross-entropy with the selected interest: -log s(x_t) minus the mean
// over negatives of log(1 - s(x_j)). Uses log-sigmoid in softplus form.
double rec_loss(const Matrix& interests, std::span<const double> target_emb,
                const Matrix& negative_embs);

inline double total_loss(double rec, double reg, double lambda, double reg_sign = 1.0) {
  return rec + reg_sign * lambda * reg;
}
double total_loss(const Matrix& interests, std::span<const double> target_emb,
                  const Matrix& negative_embs, const LossConfig& config);

// log(1 + exp(x)) without overflow.
double softplus(double x);
double sigmoid(double x);

// Sorted set of item ids with O(log n) membership.
class ItemSet {
 public:
  ItemSet() = default;
  explicit ItemSet(std::vector<ItemId> items);
  bool contains(ItemId item) const;
  std::size_t size() const { return items_.size(); }
  std::span<const ItemId> items() const { return items_; }

 private:
  std::vector<ItemId> items_;
};

// n draws, uniform over [1, vocab_size] minus `exclude`, by rejection. Draws
// are independent (with replacement). Throws if nothing is left to draw.
std::vector<ItemId> sample_negatives(std::size_t vocab_size, const ItemSet& exclude, std::size_t n,
                                     SeededRng& rng);

struct AdamState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ModelParams& params);
};

// Bias-corrected Adam update of every trainable tensor.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const LossConfig& config);

// Flat list of tensor views in for_each_tensor order.
std::vector<std::span<double>> tensor_spans(ModelParams& params);
std::vector<std::span<const double>> tensor_spans(const ModelParams& params);

}  // namespace limarec
