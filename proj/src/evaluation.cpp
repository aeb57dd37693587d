#include "limarec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "limarec/errors.hpp"

namespace limarec {

std::size_t pessimistic_rank(double target_score, std::span<const double> negative_scores) {
  std::size_t above = 0;
  for (double s : negative_scores)
    if (!(s < target_score)) ++above;
  return above + 1;
}

double hr_at_k(std::size_t rank, std::size_t k) { return rank >= 1 && rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1 || rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

double diversity_at_k(std::span<const ItemId> items, std::span<const std::int32_t> item_category,
                      std::size_t k) {
  if (k < 2) throw std::invalid_argument("diversity_at_k: k must be at least 2");
  if (items.size() < k) throw std::invalid_argument("diversity_at_k: fewer than k items");
  auto category = [&](ItemId i) {
    if (i >= item_category.size() || item_category[i] < 0)
      throw DataError("diversity_at_k: item " + std::to_string(i) + " has no category");
    return item_category[i];
  };
  std::size_t differing = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b)
      if (category(items[a]) != category(items[b])) ++differing;
  return static_cast<double>(differing) / static_cast<double>(k * (k - 1) / 2);
}

namespace {

std::uint64_t user_stream(const std::string& user_id) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : user_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

EvalReport evaluate_scorer(const InteractionDataset& ds, const LeaveOneOutSplit& split,
                           const CandidateScorer& scorer, const EvalConfig& config,
                           const TopKRecommender& recommender) {
  if (split.eval.empty()) throw DataError("evaluate: no users to evaluate");
  for (std::size_t k : config.ks)
    if (k == 0) throw std::invalid_argument("evaluate: k must be positive");
  struct Row {
    const std::string* id;
    std::size_t rank;
    double diversity;
  };
  const bool with_diversity = recommender && ds.has_categories() && config.diversity_k >= 2 &&
                              ds.vocab_size() >= config.diversity_k;
  std::vector<Row> rows;
  rows.reserve(split.eval.size());
  for (const auto& c : split.eval) {
    const auto& id = ds.users.at(c.user).user_id;
    SeededRng rng(mix_seed(config.seed, user_stream(id)));
    std::vector<ItemId> candidates{c.target};
    const auto negs = sample_eval_negatives(ds, c.user, config.negatives, rng);
    candidates.insert(candidates.end(), negs.begin(), negs.end());
    const auto& history = split.train.at(c.user);
    const auto scores = scorer(c.user, history, candidates);
    if (scores.size() != candidates.size())
      throw std::logic_error("evaluate: scorer returned the wrong number of scores");
    if (!all_finite(scores)) throw NumericError("evaluate: non-finite score for user '" + id + "'");
    Row row{&id, pessimistic_rank(scores[0], std::span(scores).subspan(1)), 0.0};
    if (with_diversity) {
      const auto top = recommender(c.user, history, config.diversity_k);
      row.diversity = diversity_at_k(top, ds.item_category, config.diversity_k);
    }
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return *a.id < *b.id; });

  EvalReport report;
  report.users = rows.size();
  report.ks = config.ks;
  report.hr.assign(config.ks.size(), 0.0);
  report.ndcg.assign(config.ks.size(), 0.0);
  double div = 0.0;
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < config.ks.size(); ++j) {
      report.hr[j] += hr_at_k(r.rank, config.ks[j]);
      report.ndcg[j] += ndcg_at_k(r.rank, config.ks[j]);
    }
    div += r.diversity;
    report.ranks.emplace_back(*r.id, r.rank);
  }
  const double n = static_cast<double>(rows.size());
  for (auto& v : report.hr) v /= n;
  for (auto& v : report.ndcg) v /= n;
  if (with_diversity) {
    report.diversity = div / n;
    report.diversity_k = config.diversity_k;
  }
  return report;
}

std::vector<ItemId> top_k_items(const Model& model, const InterestSet& interests, std::size_t k) {
  const std::size_t vocab = model.config.vocab_size;
  k = std::min(k, vocab);
  // Row 0 of the table is padding; its score is computed and ignored.
  const auto scores = score_items(interests, model.params.emb.item_table, ScoreMode::exact_max);
  std::vector<ItemId> order(vocab);
  std::iota(order.begin(), order.end(), ItemId{1});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](ItemId a, ItemId b) {
                      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                    });
  order.resize(k);
  return order;
}

EvalReport evaluate_model(const Model& model, const InteractionDataset& ds,
                          const LeaveOneOutSplit& split, const EvalConfig& config) {
  if (ds.vocab_size() != model.config.vocab_size)
    throw DataError("evaluate: dataset has " + std::to_string(ds.vocab_size()) +
                    " items but the model was trained on " +
                    std::to_string(model.config.vocab_size));
  const IncrementalEncoder encoder(model);
  const auto& table = model.params.emb.item_table;
  const std::size_t d = model.dim();

  // The scorer and recommender are called back to back for the same user, so
  // the streamed interest set is shared between them.
  std::optional<InterestSet> current;
  auto interests_for = [&](std::span<const ItemId> history) {
    UserState state = encoder.init_state();
    InterestSet last;
    for (ItemId i : history) last = encoder.ingest(state, i);
    current = std::move(last);
  };

  CandidateScorer scorer = [&](std::size_t, std::span<const ItemId> history,
                               std::span<const ItemId> candidates) {
    interests_for(history);
    Matrix embs(candidates.size(), d);
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      const auto src = table.row(candidates[j]);
      std::copy(src.begin(), src.end(), embs.row(j).begin());
    }
    if (config.mode == ScoreMode::universal)
      return score_items(*current, embs, ScoreMode::universal, embs.row(0));
    return score_items(*current, embs, ScoreMode::exact_max);
  };

  TopKRecommender recommender = [&](std::size_t, std::span<const ItemId>, std::size_t k) {
    return top_k_items(model, *current, k);
  };
  return evaluate_scorer(ds, split, scorer, config, recommender);
}

EvalReport evaluate_popularity(const InteractionDataset& ds, const LeaveOneOutSplit& split,
                               const EvalConfig& config) {
  std::vector<double> counts(ds.vocab_size() + 1, 0.0);
  for (const auto& seq : split.train)
    for (ItemId i : seq) counts.at(i) += 1.0;
  CandidateScorer scorer = [&](std::size_t, std::span<const ItemId>,
                               std::span<const ItemId> candidates) {
    std::vector<double> s;
    s.reserve(candidates.size());
    for (ItemId i : candidates) s.push_back(counts[i]);
    return s;
  };
  return evaluate_scorer(ds, split, scorer, config);
}

namespace {

std::size_t k_index(const EvalReport& r, std::size_t k) {
  const auto it = std::find(r.ks.begin(), r.ks.end(), k);
  if (it == r.ks.end()) throw std::out_of_range("report has no metrics at k=" + std::to_string(k));
  return static_cast<std::size_t>(it - r.ks.begin());
}

}  // namespace

double EvalReport::hr_at(std::size_t k) const { return hr[k_index(*this, k)]; }
double EvalReport::ndcg_at(std::size_t k) const { return ndcg[k_index(*this, k)]; }

std::string report_text(const EvalReport& r) {
  char buf[256];
  std::string out = "users\t" + std::to_string(r.users) + "\n";
  for (std::size_t j = 0; j < r.ks.size(); ++j) {
    std::snprintf(buf, sizeof buf, "HR@%zu\t%.6f\nNDCG@%zu\t%.6f\n", r.ks[j], r.hr[j], r.ks[j],
                  r.ndcg[j]);
    out += buf;
  }
  if (r.diversity) {
    std::snprintf(buf, sizeof buf, "Diversity@%zu\t%.6f\n", r.diversity_k, *r.diversity);
    out += buf;
  }
  return out;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["users"] = r.users;
  for (std::size_t k = 0; k < r.ks.size(); ++k) {
    j["hr@" + std::to_string(r.ks[k])] = r.hr[k];
    j["ndcg@" + std::to_string(r.ks[k])] = r.ndcg[k];
  }
  if (r.diversity) j["diversity@" + std::to_string(r.diversity_k)] = *r.diversity;
  return j.dump(2) + "\n";
}

}  // namespace limarec
