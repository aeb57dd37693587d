#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "limarec/dataset.hpp"
#include "limarec/model.hpp"
#include "limarec/streaming_state.hpp"

namespace limarec {

// 1-based rank of the target among itself and the negatives. A negative that
// ties the target counts as ranked above it.
std::size_t pessimistic_rank(double target_score, std::span<const double> negative_scores);

double hr_at_k(std::size_t rank, std::size_t k);
double ndcg_at_k(std::size_t rank, std::size_t k);
// Fraction of the C(k, 2) pairs among the first k items whose categories
// differ. Throws DataError if an item has no category.
double diversity_at_k(std::span<const ItemId> items, std::span<const std::int32_t> item_category,
                      std::size_t k);

// The k items with the highest exact_max score over the whole vocabulary,
// best first; ties go to the lower id.
std::vector<ItemId> top_k_items(const Model& model, const InterestSet& interests, std::size_t k);

// Scores for `candidates` given the user's training history. The target is
// candidates[0]; scorers may use it only the way ScoreMode::universal does.
using CandidateScorer = std::function<std::vector<double>(
    std::size_t user, std::span<const ItemId> history, std::span<const ItemId> candidates)>;
// Top-k items over the whole vocabulary, best first.
using TopKRecommender =
    std::function<std::vector<ItemId>(std::size_t user, std::span<const ItemId> history, std::size_t k)>;

struct EvalConfig {
  std::size_t negatives = 100;
  std::vector<std::size_t> ks{5, 10};
  ScoreMode mode = ScoreMode::universal;
  std::uint64_t seed = 0;
  std::size_t diversity_k = 10;
};

struct EvalReport {
  std::size_t users = 0;
  std::vector<std::size_t> ks;
  std::vector<double> hr, ndcg;  // parallel to ks
  std::optional<double> diversity;  // at diversity_k, when categories exist
  std::size_t diversity_k = 0;
  std::vector<std::pair<std::string, std::size_t>> ranks;  // (user id, rank), sorted by id

  double hr_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
  bool operator==(const EvalReport&) const = default;
};

// Negatives for a user come from a stream seeded by (seed, user id), and all
// sums run in user-id order, so the report does not depend on how users are
// ordered in the dataset.
EvalReport evaluate_scorer(const InteractionDataset& ds, const LeaveOneOutSplit& split,
                           const CandidateScorer& scorer, const EvalConfig& config,
                           const TopKRecommender& recommender = nullptr);

// Streams each user's training history through the incremental encoder and
// scores the candidates with the interest set. Diversity uses exact_max top-k
// over the full vocabulary.
EvalReport evaluate_model(const Model& model, const InteractionDataset& ds,
                          const LeaveOneOutSplit& split, const EvalConfig& config);

// Scores items by their training-set frequency.
EvalReport evaluate_popularity(const InteractionDataset& ds, const LeaveOneOutSplit& split,
                               const EvalConfig& config);

std::string report_text(const EvalReport& report);
std::string report_json(const EvalReport& report);

}  // namespace limarec
