#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "limarec/model.hpp"
#include "limarec/numerics.hpp"
#include "limarec/objective.hpp"

namespace limarec {

struct UserSequence {
  std::string user_id;
  std::vector<ItemId> items;  // chronological
};

// Per-user item sequences over a dense item vocabulary [1, vocab_size].
struct InteractionDataset {
  std::vector<UserSequence> users;        // first-appearance order
  std::vector<std::string> item_ids;      // dense id -> raw id; entry 0 unused
  std::vector<std::int32_t> item_category;  // dense id -> category index, -1 unknown; empty if none
  std::vector<std::string> category_names;

  std::size_t vocab_size() const { return item_ids.empty() ? 0 : item_ids.size() - 1; }
  std::size_t num_actions() const;
  bool has_categories() const { return !item_category.empty(); }
};

// One row of an interaction file, ids as written.
struct Event {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  std::string category;  // empty when the row has no category column
};

// Rows of a `user<TAB>item<TAB>timestamp[<TAB>category]` file in file order.
// Blank lines and lines starting with '#' are skipped. Throws DataError naming
// the offending line.
std::vector<Event> parse_events(std::istream& in, const std::string& source = "<input>");
std::vector<Event> load_events(const std::string& path);
// Stable sort by timestamp.
void sort_events(std::vector<Event>& events);

// Parses `user<TAB>item<TAB>timestamp[<TAB>category]` rows. Blank lines and
// lines starting with '#' are skipped. Rows are grouped by user and stably
// sorted by timestamp, so ties keep file order. Item ids are assigned densely
// in first-appearance order. Throws DataError naming the offending line.
InteractionDataset parse_interactions(std::istream& in, const std::string& source = "<input>");
InteractionDataset load_interactions(const std::string& path);
InteractionDataset build_dataset(std::vector<Event> events);

// Repeatedly drops items with fewer than min_count occurrences and users with
// fewer than min_count actions until neither rule removes anything, then
// re-indexes surviving items densely from 1 in their previous order.
InteractionDataset preprocess(const InteractionDataset& ds, std::size_t min_count = 5);

struct EvalCase {
  std::size_t user = 0;  // index into InteractionDataset::users
  ItemId target = 0;
};

struct LeaveOneOutSplit {
  std::vector<std::vector<ItemId>> train;  // one per user, all but the last item
  std::vector<EvalCase> eval;
};

LeaveOneOutSplit split_leave_one_out(const InteractionDataset& ds);

// n distinct items the user never interacted with, uniform over the rest of
// the vocabulary.
std::vector<ItemId> sample_eval_negatives(const InteractionDataset& ds, std::size_t user,
                                          std::size_t n, SeededRng& rng);

struct SynthConfig {
  std::size_t num_users = 2000;
  std::size_t items_per_interest = 200;
  std::size_t num_interests = 2;
  std::size_t seq_len = 60;
  double switch_prob = 0.2;
  // Probability that a chain jumps to a random item of its block instead of
  // advancing to the next one.
  double noise = 0.1;
};

// Users interleave num_interests Markov chains. Chain b walks the item block
// [b * n + 1, (b + 1) * n] cyclically (item i -> i + 1, wrapping) with random
// jumps at rate `noise`; every chain keeps its own position while inactive.
// Before each step after the first, the active chain switches to a uniformly
// chosen other chain with probability switch_prob. Block index = category.
InteractionDataset synth_multi_interest(const SynthConfig& config, SeededRng& rng);

}  // namespace limarec
