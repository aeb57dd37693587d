#include "limarec/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "CLI11.hpp"
#include "json.hpp"
#include "limarec/checkpoint.hpp"
#include "limarec/dataset.hpp"
#include "limarec/errors.hpp"
#include "limarec/evaluation.hpp"
#include "limarec/state_store.hpp"
#include "limarec/streaming_state.hpp"
#include "limarec/trainer.hpp"

namespace limarec::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw UsageError(what + ": '" + s + "' is not an unsigned integer");
  return v;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("LIMAREC_SEED")) return parse_u64(env, "LIMAREC_SEED");
  return 0;
}

std::string stamp(bool enabled) {
  if (!enabled) return {};
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ\t", &tm);
  return buf;
}

std::string hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

std::vector<std::uint8_t> unhex(const std::string& s) {
  if (s.size() % 2 != 0) throw DataError("state dump: odd-length record");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw DataError("state dump: bad hex digit");
  };
  std::vector<std::uint8_t> out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(s[2 * i]) << 4 | nibble(s[2 * i + 1]));
  return out;
}

StateEncoding parse_encoding(const std::string& s) {
  if (s == "f32") return StateEncoding::f32;
  if (s == "f64") return StateEncoding::f64;
  throw UsageError("--encoding must be f32 or f64");
}

struct TrainOptions {
  std::string data, out, log;
  std::size_t dim = 32, feature_dim = 0, interests = 2, max_len = 1000, epochs = 10;
  std::size_t batch = 128, negatives = 1, min_count = 5;
  double lr = 0.001, lambda = 0.01, dropout = 0.1, reg_sign = 1.0;
  bool no_multi_interest = false, timestamps = false;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  const std::uint64_t seed = resolve_seed(o.seed);
  const InteractionDataset ds = preprocess(load_interactions(o.data), o.min_count);
  const LeaveOneOutSplit split = split_leave_one_out(ds);

  ModelConfig mc;
  mc.dim = o.dim;
  mc.feature_dim = o.feature_dim;
  mc.num_interests = o.interests;
  mc.max_len = o.max_len;
  mc.vocab_size = ds.vocab_size();
  mc.dropout = o.dropout;
  mc.multi_interest = !o.no_multi_interest;
  mc.seed = seed;
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.loss.learning_rate = o.lr;
  tc.loss.batch_size = o.batch;
  tc.loss.lambda = o.lambda;
  tc.loss.reg_sign = o.reg_sign;
  tc.loss.negatives_per_positive = o.negatives;
  try {
    mc.validate();
    tc.loss.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  std::ofstream log_file;
  if (!o.log.empty()) {
    log_file.open(o.log, std::ios::trunc);
    if (!log_file) throw DataError("cannot write " + o.log);
  }
  std::ostream& log = o.log.empty() ? out : log_file;
  err << "train: " << ds.users.size() << " users, " << ds.vocab_size() << " items, "
      << ds.num_actions() << " actions\n";

  Checkpoint ckpt{Model::init(mc), ds.item_ids};
  train(ckpt.model, split.train, tc, seed, [&](std::size_t epoch, double loss) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch\t%zu\tloss\t%.9f\n", epoch, loss);
    log << stamp(o.timestamps) << buf << std::flush;
  });
  save_checkpoint(ckpt, o.out);
  return kExitOk;
}

// Applies the training-time preprocessing and checks that the surviving
// vocabulary is the one the checkpoint was trained on.
InteractionDataset dataset_for(const Checkpoint& ckpt, const std::string& path, std::size_t min_count) {
  InteractionDataset ds = preprocess(load_interactions(path), min_count);
  if (ds.vocab_size() != ckpt.model.config.vocab_size)
    throw DataError("checkpoint vocabulary has " + std::to_string(ckpt.model.config.vocab_size) +
                    " items but the dataset has " + std::to_string(ds.vocab_size()));
  if (ds.item_ids != ckpt.item_ids)
    throw DataError("dataset item ids do not match the checkpoint vocabulary");
  return ds;
}

struct EvalOptions {
  std::string checkpoint, data, out, json, mode = "universal";
  std::size_t negatives = 100, min_count = 5, diversity_k = 10;
  std::vector<std::size_t> ks{5, 10};
  bool popularity = false;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream&) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const InteractionDataset ds = dataset_for(ckpt, o.data, o.min_count);
  const LeaveOneOutSplit split = split_leave_one_out(ds);
  EvalConfig ec;
  ec.negatives = o.negatives;
  ec.ks = o.ks;
  ec.mode = o.mode == "exact_max" ? ScoreMode::exact_max : ScoreMode::universal;
  ec.seed = resolve_seed(o.seed);
  ec.diversity_k = o.diversity_k;
  const EvalReport report =
      o.popularity ? evaluate_popularity(ds, split, ec) : evaluate_model(ckpt.model, ds, split, ec);
  const std::string text = report_text(report);
  out << text;
  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::trunc);
    if (!(f << text)) throw DataError("cannot write " + o.out);
  }
  if (!o.json.empty()) {
    std::ofstream f(o.json, std::ios::trunc);
    if (!(f << report_json(report))) throw DataError("cannot write " + o.json);
  }
  return kExitOk;
}

struct StreamOptions {
  std::string checkpoint, events, store, encoding = "f32";
  std::size_t topk = 0;
  bool strict = false, timestamps = false;
};

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
  return v[std::min(idx, v.size() - 1)];
}

int cmd_stream(const StreamOptions& o, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const Model& model = ckpt.model;
  std::unordered_map<std::string, ItemId> item_index;
  for (std::size_t i = 1; i < ckpt.item_ids.size(); ++i)
    item_index.emplace(ckpt.item_ids[i], static_cast<ItemId>(i));

  std::vector<Event> events = load_events(o.events);
  sort_events(events);
  // Strict mode rejects the whole file before the store is touched.
  if (o.strict)
    for (const auto& e : events)
      if (!item_index.contains(e.item))
        throw DataError("stream: unknown item '" + e.item + "' for user '" + e.user + "'");
  StateStore store = StateStore::open(o.store, state_dims(model), parse_encoding(o.encoding));
  const IncrementalEncoder encoder(model);

  std::vector<double> latency_us;
  latency_us.reserve(events.size());
  std::size_t skipped = 0;
  for (const auto& e : events) {
    const auto it = item_index.find(e.item);
    if (it == item_index.end()) {
      err << "warning: skipping unknown item '" << e.item << "' for user '" << e.user << "'\n";
      ++skipped;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    UserState state = store.get(e.user).value_or(encoder.init_state());
    const InterestSet interests = encoder.ingest(state, it->second);
    store.put(e.user, state);
    const auto t1 = std::chrono::steady_clock::now();
    latency_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());

    if (o.topk > 0) {
      out << stamp(o.timestamps) << e.user << '\t' << e.item << '\t' << state.position << '\t';
      const auto top = top_k_items(model, interests, o.topk);
      for (std::size_t j = 0; j < top.size(); ++j) out << (j ? "," : "") << ckpt.item_ids[top[j]];
      out << '\n';
    }
  }
  store.flush();
  out << stamp(o.timestamps) << "events\t" << events.size() << "\tingested\t"
      << events.size() - skipped << "\tskipped\t" << skipped << "\tusers\t" << store.size() << '\n';
  char buf[160];
  std::snprintf(buf, sizeof buf, "latency_us\tp50\t%.1f\tp90\t%.1f\tp99\t%.1f\tmax\t%.1f\n",
                percentile(latency_us, 0.5), percentile(latency_us, 0.9),
                percentile(latency_us, 0.99), percentile(latency_us, 1.0));
  err << buf;
  return kExitOk;
}

int cmd_state_dump(const std::string& store_path, const std::vector<std::string>& users,
                   const std::string& out_path, std::ostream& out) {
  StateStore store = StateStore::open_existing(store_path);
  nlohmann::ordered_json j;
  j["format"] = "limarec-state-dump";
  j["d"] = store.dims().dim;
  j["m"] = store.dims().features;
  j["K"] = store.dims().interests;
  j["width"] = static_cast<int>(store.encoding());
  j["users"] = nlohmann::json::array();
  const auto& selected = users.empty() ? store.users() : users;
  for (const auto& u : selected) {
    const auto rec = store.get_record(u);
    if (rec.empty()) throw DataError("state-dump: no state for user '" + u + "'");
    const UserState s = deserialize_state(rec, store.dims());
    j["users"].push_back({{"user", u}, {"position", s.position}, {"record", hex(rec)}});
  }
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    std::ofstream f(out_path, std::ios::trunc);
    if (!(f << text)) throw DataError("cannot write " + out_path);
  }
  return kExitOk;
}

int cmd_state_load(const std::string& store_path, const std::string& in_path, std::ostream& out) {
  std::ifstream in(in_path);
  if (!in) throw DataError("cannot open " + in_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("format") != "limarec-state-dump") throw DataError(in_path + ": not a state dump");
    StateDims dims{j.at("d").get<std::uint32_t>(), j.at("m").get<std::uint32_t>(),
                   j.at("K").get<std::uint32_t>()};
    const auto width = j.at("width").get<int>();
    if (width != 4 && width != 8) throw DataError(in_path + ": bad value width");
    // Decode everything before the store is touched.
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> records;
    for (const auto& u : j.at("users")) {
      auto bytes = unhex(u.at("record").get<std::string>());
      if (bytes.size() != state_record_size(dims, static_cast<StateEncoding>(width)))
        throw DataError(in_path + ": record width differs from the dump header");
      deserialize_state(bytes, dims);
      records.emplace_back(u.at("user").get<std::string>(), std::move(bytes));
    }
    StateStore store = StateStore::open(store_path, dims, static_cast<StateEncoding>(width));
    for (const auto& [user, bytes] : records) store.put_record(user, bytes);
    store.flush();
    out << "loaded\t" << records.size() << "\tusers\t" << store.size() << '\n';
  } catch (const nlohmann::json::exception& e) {
    throw DataError(in_path + ": " + e.what());
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streaming multi-interest sequential recommender", "limarec"};
  app.require_subcommand(1);

  TrainOptions t;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--data", t.data, "Interaction TSV")->required();
  train_cmd->add_option("--out", t.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", t.log, "Loss log path (default: stdout)");
  train_cmd->add_option("--dim", t.dim, "Embedding dimension")->capture_default_str();
  train_cmd->add_option("--feature-dim", t.feature_dim, "Random features (0: same as --dim)")
      ->capture_default_str();
  train_cmd->add_option("--interests", t.interests, "Number of interests")
      ->check(CLI::Range(1, 9))
      ->capture_default_str();
  train_cmd->add_flag("--no-multi-interest", t.no_multi_interest,
                      "Use the encoder output as the only interest");
  train_cmd->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch", t.batch, "Sequences per update")->capture_default_str();
  train_cmd->add_option("--lambda", t.lambda, "Regularizer weight")->capture_default_str();
  train_cmd->add_option("--reg-sign", t.reg_sign, "Sign of the regularizer term (1 or -1)")
      ->check(CLI::IsMember({-1.0, 1.0}))
      ->capture_default_str();
  train_cmd->add_option("--dropout", t.dropout, "Dropout rate")->capture_default_str();
  train_cmd->add_option("--max-len", t.max_len, "Positional table size")->capture_default_str();
  train_cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--negatives", t.negatives, "Negatives per position")->capture_default_str();
  train_cmd->add_option("--min-count", t.min_count, "Drop items and users below this count")
      ->capture_default_str();
  train_cmd->add_option("--seed", t.seed, "Random seed (default: $LIMAREC_SEED or 0)");
  train_cmd->add_flag("--timestamps", t.timestamps, "Prefix log lines with wall-clock time");

  EvalOptions e;
  auto* eval_cmd = app.add_subcommand("eval", "Leave-one-out evaluation of a checkpoint");
  eval_cmd->add_option("--checkpoint", e.checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--data", e.data, "Interaction TSV")->required();
  eval_cmd->add_option("--negatives", e.negatives, "Sampled negatives per user")->capture_default_str();
  eval_cmd->add_option("--mode", e.mode, "universal or exact_max")
      ->check(CLI::IsMember({"universal", "exact_max"}))
      ->capture_default_str();
  eval_cmd->add_option("--k", e.ks, "Cutoffs")->delimiter(',')->capture_default_str();
  eval_cmd->add_option("--diversity-k", e.diversity_k, "Diversity cutoff")->capture_default_str();
  eval_cmd->add_option("--min-count", e.min_count, "Same value as used for training")
      ->capture_default_str();
  eval_cmd->add_option("--out", e.out, "Also write the text report here");
  eval_cmd->add_option("--json", e.json, "Write a JSON report here");
  eval_cmd->add_flag("--popularity", e.popularity, "Evaluate the popularity baseline instead");
  eval_cmd->add_option("--seed", e.seed, "Random seed (default: $LIMAREC_SEED or 0)");

  StreamOptions s;
  auto* stream_cmd = app.add_subcommand("stream", "Replay events through the incremental encoder");
  stream_cmd->add_option("--checkpoint", s.checkpoint, "Checkpoint path")->required();
  stream_cmd->add_option("--events", s.events, "Event TSV")->required();
  stream_cmd->add_option("--store", s.store, "State store path")->required();
  stream_cmd->add_option("--topk", s.topk, "Emit the top-n items after each event")
      ->capture_default_str();
  stream_cmd->add_option("--encoding", s.encoding, "State value width: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  stream_cmd->add_flag("--strict", s.strict, "Fail on unknown items instead of skipping them");
  stream_cmd->add_flag("--timestamps", s.timestamps, "Prefix output lines with wall-clock time");

  std::string dump_store, dump_out;
  std::vector<std::string> dump_users;
  auto* dump_cmd = app.add_subcommand("state-dump", "Export user states as JSON");
  dump_cmd->add_option("--store", dump_store, "State store path")->required();
  dump_cmd->add_option("--user", dump_users, "Only these users");
  dump_cmd->add_option("--out", dump_out, "Output path (default: stdout)");

  std::string load_store, load_in;
  auto* load_cmd = app.add_subcommand("state-load", "Import user states from a state-dump file");
  load_cmd->add_option("--store", load_store, "State store path")->required();
  load_cmd->add_option("--in", load_in, "state-dump JSON")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(t, out, err);
    if (*eval_cmd) return cmd_eval(e, out, err);
    if (*stream_cmd) return cmd_stream(s, out, err);
    if (*dump_cmd) return cmd_state_dump(dump_store, dump_users, dump_out, out);
    if (*load_cmd) return cmd_state_load(load_store, load_in, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace limarec::cli
