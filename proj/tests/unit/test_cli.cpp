#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "limarec/checkpoint.hpp"
#include "limarec/cli.hpp"
#include "limarec/dataset.hpp"
#include "limarec/encoder.hpp"
#include "limarec/state_store.hpp"

using namespace limarec;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("limarec_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    SynthConfig sc;
    sc.num_users = 40;
    sc.items_per_interest = 20;
    sc.seq_len = 15;
    SeededRng rng(3);
    const auto ds = synth_multi_interest(sc, rng);
    std::ofstream f(file("toy.tsv"));
    f << "# user\titem\ttime\tcategory\n";
    int t = 0;
    for (const auto& u : ds.users)
      for (ItemId i : u.items)
        f << u.user_id << '\t' << ds.item_ids[i] << '\t' << t++ << '\t' << ds.item_category[i] << '\n';
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string file(const std::string& name) const { return (dir / name).string(); }
};

std::vector<std::string> train_args(const Workspace& w, const std::string& out) {
  return {"train", "--data", w.file("toy.tsv"), "--dim", "8", "--interests", "2", "--epochs", "5",
          "--seed", "7", "--out", out};
}

std::size_t count_lines(const std::string& s, const std::string& prefix) {
  std::size_t n = 0;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
  return n;
}

}  // namespace

TEST_CASE("train writes a checkpoint and one loss line per epoch") {
  Workspace w;
  const auto r = run_cli(train_args(w, w.file("a.lmrc")));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(w.file("a.lmrc")));
  CHECK(count_lines(r.out, "epoch\t") == 5);

  const auto r2 = run_cli(train_args(w, w.file("b.lmrc")));
  CHECK(r2.out == r.out);
  CHECK(slurp(w.file("a.lmrc")) == slurp(w.file("b.lmrc")));

  auto args = train_args(w, w.file("c.lmrc"));
  args.insert(args.end(), {"--lambda", "0"});
  REQUIRE(run_cli(args).code == 0);
  CHECK(slurp(w.file("a.lmrc")) != slurp(w.file("c.lmrc")));

  auto logged = train_args(w, w.file("d.lmrc"));
  logged.insert(logged.end(), {"--log", w.file("loss.log"), "--timestamps"});
  const auto r3 = run_cli(logged);
  CHECK(r3.out.empty());
  CHECK(count_lines(slurp(w.file("loss.log")), "20") == 5);
}

TEST_CASE("seed falls back to LIMAREC_SEED") {
  Workspace w;
  auto no_seed = train_args(w, w.file("env.lmrc"));
  no_seed.erase(no_seed.begin() + 9, no_seed.begin() + 11);
  ::setenv("LIMAREC_SEED", "7", 1);
  REQUIRE(run_cli(no_seed).code == 0);
  REQUIRE(run_cli(train_args(w, w.file("flag.lmrc"))).code == 0);
  CHECK(slurp(w.file("env.lmrc")) == slurp(w.file("flag.lmrc")));
  ::setenv("LIMAREC_SEED", "seven", 1);
  CHECK(run_cli(no_seed).code == cli::kExitUsage);
  ::unsetenv("LIMAREC_SEED");
}

TEST_CASE("eval emits parseable reports in both modes") {
  Workspace w;
  REQUIRE(run_cli(train_args(w, w.file("m.lmrc"))).code == 0);
  const std::vector<std::string> base{"eval", "--checkpoint", w.file("m.lmrc"), "--data",
                                      w.file("toy.tsv"), "--seed", "3",
                                      "--negatives", "10"};
  auto with_json = base;
  with_json.insert(with_json.end(), {"--json", w.file("r.json"), "--out", w.file("r.txt")});
  const auto r = run_cli(with_json);
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(slurp(w.file("r.txt")) == r.out);
  const auto j = nlohmann::json::parse(slurp(w.file("r.json")));
  for (const char* key : {"hr@5", "ndcg@5", "hr@10", "ndcg@10", "diversity@10"}) {
    const double v = j.at(key).get<double>();
    CHECK((v >= 0.0 && v <= 1.0));
  }
  CHECK(run_cli(with_json).out == r.out);

  auto exact = base;
  exact.insert(exact.end(), {"--mode", "exact_max"});
  const auto rx = run_cli(exact);
  CHECK(rx.code == 0);
  CHECK(rx.out.find("HR@10") != std::string::npos);

  auto ks = base;
  ks.insert(ks.end(), {"--k", "1,20"});
  CHECK(run_cli(ks).out.find("HR@20") != std::string::npos);

  auto bad_mode = base;
  bad_mode.insert(bad_mode.end(), {"--mode", "best"});
  CHECK(run_cli(bad_mode).code == cli::kExitUsage);
}

TEST_CASE("eval rejects a checkpoint trained on other data") {
  Workspace w;
  REQUIRE(run_cli(train_args(w, w.file("m.lmrc"))).code == 0);
  std::ofstream(w.file("other.tsv")) << "a\tx\t1\n";
  for (int u = 0; u < 6; ++u)
    for (int i = 0; i < 6; ++i)
      std::ofstream(w.file("other.tsv"), std::ios::app)
          << "u" << u << "\ti" << i << "\t" << i << "\n";
  const auto r = run_cli({"eval", "--checkpoint", w.file("m.lmrc"), "--data", w.file("other.tsv"),
                      "--negatives", "2"});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("vocabulary") != std::string::npos);
}

TEST_CASE("stream replays events and keeps fixed-size records") {
  Workspace w;
  REQUIRE(run_cli(train_args(w, w.file("m.lmrc"))).code == 0);
  std::ofstream(w.file("events.tsv")) << "u1\ti5\t2\nu2\ti7\t1\nu1\ti9\t3\nu1\tunknown\t4\n";
  const std::vector<std::string> args{"stream", "--checkpoint", w.file("m.lmrc"), "--events",
                                      w.file("events.tsv"), "--store", w.file("s.bin"),
                                      "--topk", "3"};
  const auto r = run_cli(args);
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("u2\ti7\t1\t", 0) == 0);
  CHECK(count_lines(r.out, "u1\t") == 2);
  CHECK(r.out.find("skipped\t1") != std::string::npos);
  CHECK(r.err.find("unknown") != std::string::npos);
  CHECK(r.err.find("p99") != std::string::npos);
  const auto size_before = fs::file_size(w.file("s.bin"));

  auto strict = args;
  strict.push_back("--strict");
  CHECK(run_cli(strict).code == cli::kExitData);
  CHECK(StateStore::open_existing(w.file("s.bin")).get("u1")->position == 2);

  // More events for the same users leave the store size alone.
  std::ofstream more(w.file("more.tsv"));
  for (int t = 0; t < 200; ++t) more << (t % 2 ? "u1" : "u2") << "\ti" << (t % 40 + 1) << '\t' << t << '\n';
  more.close();
  REQUIRE(run_cli({"stream", "--checkpoint", w.file("m.lmrc"), "--events", w.file("more.tsv"), "--store",
               w.file("s.bin")})
              .code == 0);
  CHECK(fs::file_size(w.file("s.bin")) == size_before);
  StateStore store = StateStore::open_existing(w.file("s.bin"));
  CHECK(store.get("u1")->position == 102);
}

TEST_CASE("streamed state matches the batch path") {
  Workspace w;
  REQUIRE(run_cli(train_args(w, w.file("m.lmrc"))).code == 0);
  const Checkpoint ckpt = load_checkpoint(w.file("m.lmrc"));
  const auto ds = preprocess(load_interactions(w.file("toy.tsv")));
  const auto split = split_leave_one_out(ds);
  std::ofstream ev(w.file("prefix.tsv"));
  for (std::size_t l = 0; l < split.train[0].size(); ++l)
    ev << "who\t" << ds.item_ids[split.train[0][l]] << '\t' << l << '\n';
  ev.close();
  REQUIRE(run_cli({"stream", "--checkpoint", w.file("m.lmrc"), "--events", w.file("prefix.tsv"),
               "--store", w.file("p.bin")})
              .code == 0);
  StateStore store = StateStore::open_existing(w.file("p.bin"));
  const IncrementalEncoder enc(ckpt.model);
  const auto streamed = enc.interest_set(*store.get("who"));
  const auto batch = batch_interests(encode_batch(split.train[0], ckpt.model), ckpt.model);
  CHECK(max_abs_diff(streamed.phis, batch.back()) <= 1e-3);
}

TEST_CASE("state-dump and state-load round trip") {
  Workspace w;
  REQUIRE(run_cli(train_args(w, w.file("m.lmrc"))).code == 0);
  REQUIRE(run_cli({"stream", "--checkpoint", w.file("m.lmrc"), "--events", w.file("toy.tsv"), "--store",
               w.file("s.bin")})
              .code == 0);
  REQUIRE(run_cli({"state-dump", "--store", w.file("s.bin"), "--out", w.file("d.json")}).code == 0);
  const auto load = run_cli({"state-load", "--store", w.file("t.bin"), "--in", w.file("d.json")});
  REQUIRE(load.code == 0);
  CHECK(load.out.find("loaded\t40") != std::string::npos);
  CHECK(slurp(w.file("s.bin")) == slurp(w.file("t.bin")));

  const auto one = run_cli({"state-dump", "--store", w.file("s.bin"), "--user", "u01"});
  const auto j = nlohmann::json::parse(one.out);
  REQUIRE(j["users"].size() == 1);
  CHECK(j["users"][0]["position"].get<int>() == 15);
  CHECK(run_cli({"state-dump", "--store", w.file("s.bin"), "--user", "nobody"}).code == cli::kExitData);

  // A dump with one bad record is rejected as a whole.
  auto all = nlohmann::json::parse(slurp(w.file("d.json")));
  all["users"][3]["record"] = "00ff";
  std::ofstream(w.file("bad.json")) << all.dump();
  const auto before = slurp(w.file("t.bin"));
  CHECK(run_cli({"state-load", "--store", w.file("t.bin"), "--in", w.file("bad.json")}).code ==
        cli::kExitData);
  CHECK(slurp(w.file("t.bin")) == before);
}

TEST_CASE("usage and data errors map to exit codes") {
  Workspace w;
  CHECK(run_cli({}).code == cli::kExitUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run_cli({"train", "--data", w.file("toy.tsv")}).code == cli::kExitUsage);
  auto k = train_args(w, w.file("x.lmrc"));
  k[6] = "10";
  CHECK(run_cli(k).code == cli::kExitUsage);
  CHECK(run_cli({"train", "--data", w.file("missing.tsv"), "--out", w.file("x")}).code == cli::kExitData);
  std::ofstream(w.file("bad.lmrc")) << "garbage";
  const auto r = run_cli({"eval", "--checkpoint", w.file("bad.lmrc"), "--data", w.file("toy.tsv")});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("not a checkpoint") != std::string::npos);
  CHECK(run_cli({"--help"}).code == cli::kExitOk);
}
