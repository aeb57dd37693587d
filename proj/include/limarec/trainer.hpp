#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "limarec/model.hpp"
#include "limarec/objective.hpp"

namespace limarec {

// Per-position supervision for one sequence: position l (0-based) predicts
// items[l + 1] and is contrasted against negatives[l].
struct SequenceBatchItem {
  std::span<const ItemId> items;
  std::span<const std::vector<ItemId>> negatives;  // items.size() - 1 entries
};

struct SequenceLoss {
  double loss_sum = 0.0;       // summed over positions
  std::size_t positions = 0;
  std::vector<std::size_t> chosen;  // selected interest per position
  // Largest entry-wise distance between any interest and the first one, per
  // position. Zero spread means the selection is immaterial there.
  std::vector<double> spread;
};

// Linear-mode forward pass of one sequence and the summed per-position loss
//   rec + reg_sign * lambda * reg.
// When grads is non-null, d(loss_sum)/d(params) is added into it. Dropout
// (rate model.config.dropout) is applied only when dropout_rng is non-null and
// draws masks in the same order as encode_batch_trace. The selected interest
// index is treated as a constant.
SequenceLoss sequence_loss(const Model& model, const SequenceBatchItem& example,
                           const LossConfig& config, ModelParams* grads = nullptr,
                           SeededRng* dropout_rng = nullptr);

struct TrainConfig {
  LossConfig loss;
  std::size_t epochs = 1;
};

// One pass over the training sequences in a shuffled order, one Adam step per
// batch of batch_size sequences on the mean per-position loss of the batch.
// Each sequence is truncated to its most recent max_len items. Negatives are
// drawn uniformly from items the user never touched. Returns the mean
// per-position loss of the epoch. Throws NumericError if the loss or an
// updated parameter stops being finite.
double train_epoch(Model& model, AdamState& adam, const std::vector<std::vector<ItemId>>& sequences,
                   const LossConfig& config, SeededRng& rng);

// Runs config.epochs epochs from a fresh Adam state. Shuffling, negatives and
// dropout all come from one stream derived from seed. on_epoch, if set, is
// called with the 1-based epoch number and its mean loss.
std::vector<double> train(Model& model, const std::vector<std::vector<ItemId>>& sequences,
                          const TrainConfig& config, std::uint64_t seed,
                          const std::function<void(std::size_t, double)>& on_epoch = nullptr);

struct GradCheckConfig {
  std::size_t vocab_size = 20;
  std::size_t dim = 8;
  std::size_t feature_dim = 16;
  std::size_t num_interests = 2;
  std::size_t seq_len = 10;
  std::size_t max_len = 16;  // rows past seq_len must get zero gradient
  double lambda = 0.01;
  double reg_sign = 1.0;
  bool multi_interest = true;
  double step = 1e-5;
  // Gradients are compared relative to max(|analytic|, |numeric|, floor).
  double relative_floor = 1e-6;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t probes = 0;
  std::size_t rejected_probes = 0;  // argmax flipped under perturbation
  double max_unused_position_grad = 0.0;
  double max_mu_grad = 0.0;
};

// Compares analytic gradients of the total loss against central finite
// differences for every entry of every trainable tensor, on a tiny random
// 64-bit model with dropout off.
GradCheckReport grad_check(const GradCheckConfig& config, std::uint64_t seed);

}  // namespace limarec
