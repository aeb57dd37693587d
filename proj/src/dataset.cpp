#include "limarec/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string_view>
#include <unordered_map>

#include "limarec/errors.hpp"

namespace limarec {

std::size_t InteractionDataset::num_actions() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.items.size();
  return n;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

std::vector<Event> parse_events(std::istream& in, const std::string& source) {
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    auto fail = [&](const std::string& why) {
      throw DataError(source + ":" + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 3 && fields.size() != 4)
      fail("expected 3 or 4 tab-separated fields, got " + std::to_string(fields.size()));
    for (auto f : fields)
      if (f.empty()) fail("empty field");
    std::int64_t ts = 0;
    const auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), ts);
    if (ec != std::errc() || ptr != fields[2].data() + fields[2].size())
      fail("timestamp '" + std::string(fields[2]) + "' is not an integer");
    events.push_back(Event{std::string(fields[0]), std::string(fields[1]), ts,
                           fields.size() == 4 ? std::string(fields[3]) : std::string()});
  }
  return events;
}

std::vector<Event> load_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_events(in, path);
}

void sort_events(std::vector<Event>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
}

InteractionDataset build_dataset(std::vector<Event> events) {
  InteractionDataset ds;
  ds.item_ids.emplace_back();
  std::unordered_map<std::string, ItemId> item_index;
  std::unordered_map<std::string, std::size_t> user_index;
  std::unordered_map<std::string, std::int32_t> category_index;
  std::vector<std::int32_t> category{-1};
  bool any_category = false;

  for (const auto& e : events) {
    auto [it, fresh] = item_index.try_emplace(e.item, static_cast<ItemId>(ds.item_ids.size()));
    if (fresh) {
      ds.item_ids.push_back(e.item);
      category.push_back(-1);
    }
    if (!e.category.empty()) {
      any_category = true;
      auto [ct, cat_fresh] =
          category_index.try_emplace(e.category, static_cast<std::int32_t>(ds.category_names.size()));
      if (cat_fresh) ds.category_names.push_back(e.category);
      if (category[it->second] < 0) category[it->second] = ct->second;
    }
    if (user_index.try_emplace(e.user, ds.users.size()).second)
      ds.users.push_back(UserSequence{e.user, {}});
  }
  sort_events(events);
  for (const auto& e : events) ds.users[user_index[e.user]].items.push_back(item_index[e.item]);
  if (any_category) ds.item_category = std::move(category);
  return ds;
}

InteractionDataset parse_interactions(std::istream& in, const std::string& source) {
  return build_dataset(parse_events(in, source));
}

InteractionDataset load_interactions(const std::string& path) {
  return build_dataset(load_events(path));
}

InteractionDataset preprocess(const InteractionDataset& ds, std::size_t min_count) {
  std::vector<UserSequence> users = ds.users;
  const std::size_t vocab = ds.vocab_size();
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<std::size_t> counts(vocab + 1, 0);
    for (const auto& u : users)
      for (ItemId i : u.items) ++counts[i];
    for (auto& u : users) {
      const auto before = u.items.size();
      std::erase_if(u.items, [&](ItemId i) { return counts[i] < min_count; });
      changed |= u.items.size() != before;
    }
    const auto before = users.size();
    std::erase_if(users, [&](const UserSequence& u) { return u.items.size() < min_count; });
    changed |= users.size() != before;
  }
  if (users.empty()) throw DataError("preprocess: no users left after filtering");

  std::vector<bool> alive(vocab + 1, false);
  for (const auto& u : users)
    for (ItemId i : u.items) alive[i] = true;
  std::vector<ItemId> remap(vocab + 1, 0);
  InteractionDataset out;
  out.item_ids.emplace_back();
  if (ds.has_categories()) out.item_category.push_back(-1);
  for (ItemId i = 1; i <= vocab; ++i) {
    if (!alive[i]) continue;
    remap[i] = static_cast<ItemId>(out.item_ids.size());
    out.item_ids.push_back(ds.item_ids[i]);
    if (ds.has_categories()) out.item_category.push_back(ds.item_category[i]);
  }
  out.category_names = ds.category_names;
  for (auto& u : users)
    for (ItemId& i : u.items) i = remap[i];
  out.users = std::move(users);
  return out;
}

LeaveOneOutSplit split_leave_one_out(const InteractionDataset& ds) {
  LeaveOneOutSplit split;
  split.train.reserve(ds.users.size());
  split.eval.reserve(ds.users.size());
  for (std::size_t u = 0; u < ds.users.size(); ++u) {
    const auto& items = ds.users[u].items;
    if (items.size() < 2)
      throw DataError("split_leave_one_out: user '" + ds.users[u].user_id + "' has " +
                      std::to_string(items.size()) + " actions, need at least 2");
    split.train.emplace_back(items.begin(), items.end() - 1);
    split.eval.push_back(EvalCase{u, items.back()});
  }
  return split;
}

std::vector<ItemId> sample_eval_negatives(const InteractionDataset& ds, std::size_t user,
                                          std::size_t n, SeededRng& rng) {
  const std::size_t vocab = ds.vocab_size();
  const ItemSet history(ds.users.at(user).items);
  const std::size_t available = vocab - history.size();
  if (available < n)
    throw DataError("sample_eval_negatives: user '" + ds.users[user].user_id + "' leaves only " +
                    std::to_string(available) + " candidate items, need " + std::to_string(n));

  std::vector<ItemId> out;
  out.reserve(n);
  if (available <= 4 * n) {
    // Dense case: partial Fisher-Yates over the explicit candidate list.
    std::vector<ItemId> pool;
    pool.reserve(available);
    for (ItemId i = 1; i <= vocab; ++i)
      if (!history.contains(i)) pool.push_back(i);
    for (std::size_t k = 0; k < n; ++k) {
      std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
      out.push_back(pool[k]);
    }
    return out;
  }
  while (out.size() < n) {
    const auto item = static_cast<ItemId>(1 + rng.below(vocab));
    if (history.contains(item) || std::find(out.begin(), out.end(), item) != out.end()) continue;
    out.push_back(item);
  }
  return out;
}

InteractionDataset synth_multi_interest(const SynthConfig& config, SeededRng& rng) {
  if (config.num_interests < 2) throw std::invalid_argument("synth: need at least two interests");
  if (config.items_per_interest < 1 || config.seq_len < 1 || config.num_users < 1)
    throw std::invalid_argument("synth: sizes must be positive");
  const std::size_t n = config.items_per_interest;
  const std::size_t blocks = config.num_interests;

  InteractionDataset ds;
  ds.item_ids.emplace_back();
  ds.item_category.push_back(-1);
  for (std::size_t b = 0; b < blocks; ++b) ds.category_names.push_back("c" + std::to_string(b));
  for (std::size_t i = 0; i < n * blocks; ++i) {
    ds.item_ids.push_back("i" + std::to_string(i + 1));
    ds.item_category.push_back(static_cast<std::int32_t>(i / n));
  }

  const std::size_t width = std::to_string(config.num_users - 1).size();
  std::vector<std::size_t> cursor(blocks);
  for (std::size_t u = 0; u < config.num_users; ++u) {
    std::string id = std::to_string(u);
    id.insert(0, width - id.size(), '0');
    UserSequence seq{"u" + id, {}};
    for (auto& c : cursor) c = rng.below(n);
    std::size_t active = rng.below(blocks);
    for (std::size_t step = 0; step < config.seq_len; ++step) {
      if (step > 0 && rng.uniform() < config.switch_prob)
        active = (active + 1 + rng.below(blocks - 1)) % blocks;
      if (rng.uniform() < config.noise)
        cursor[active] = rng.below(n);
      else
        cursor[active] = (cursor[active] + 1) % n;
      seq.items.push_back(static_cast<ItemId>(active * n + cursor[active] + 1));
    }
    ds.users.push_back(std::move(seq));
  }
  return ds;
}

}  // namespace limarec
