#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "limarec/dataset.hpp"
#include "limarec/encoder.hpp"
#include "limarec/objective.hpp"
#include "limarec/trainer.hpp"

using namespace limarec;

TEST_CASE("gradient check across seeds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (bool mi : {true, false}) {
      GradCheckConfig gc;
      gc.multi_interest = mi;
      const auto r = grad_check(gc, seed);
      CAPTURE(seed);
      CAPTURE(r.worst_tensor);
      CHECK(r.max_relative_error <= 1e-4);
      CHECK(r.max_unused_position_grad == 0.0);
      CHECK(r.probes > 1000);
    }
  }
}

TEST_CASE("gradient check with the negated regularizer and K=1") {
  GradCheckConfig gc;
  gc.reg_sign = -1.0;
  CHECK(grad_check(gc, 7).max_relative_error <= 1e-4);
  gc.reg_sign = 1.0;
  gc.num_interests = 1;
  gc.lambda = 0.0;
  const auto r = grad_check(gc, 8);
  CHECK(r.max_relative_error <= 1e-4);
}

TEST_CASE("mu gets no gradient from a single input position") {
  // With one input position every attention weight of the interest head is 1,
  // so with K=1 and lambda=0 the loss does not depend on mu.
  GradCheckConfig gc;
  gc.num_interests = 1;
  gc.lambda = 0.0;
  gc.seq_len = 2;
  gc.relative_floor = 1e-4;
  const auto r = grad_check(gc, 9);
  CAPTURE(r.worst_tensor);
  // The ratio w / w is 1 only up to rounding.
  CHECK(r.max_mu_grad <= 1e-14);
  CHECK(r.max_relative_error <= 1e-4);
}

TEST_CASE("sequence_loss matches per-position loss evaluation") {
  const Model m = test::random_model(15, 6, 8, 2, 3);
  SeededRng rng(3);
  const auto items = test::random_items(9, 15, rng);
  std::vector<std::vector<ItemId>> negs(8);
  for (auto& n : negs) n = sample_negatives(15, ItemSet(items), 2, rng);
  LossConfig lc;
  const SequenceLoss sl = sequence_loss(m, {items, negs}, lc);
  CHECK(sl.positions == 8);

  const std::vector<ItemId> inputs(items.begin(), items.end() - 1);
  const auto interests = batch_interests(encode_batch(inputs, m), m);
  double ref = 0;
  for (std::size_t l = 0; l < 8; ++l) {
    Matrix ne(2, 6);
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t c = 0; c < 6; ++c) ne(j, c) = m.params.emb.item_table(negs[l][j], c);
    ref += total_loss(interests[l], m.params.emb.item_table.row(items[l + 1]), ne, lc);
  }
  CHECK(sl.loss_sum == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("training reduces the loss and is deterministic") {
  SynthConfig sc;
  sc.num_users = 200;
  sc.items_per_interest = 20;
  sc.seq_len = 20;
  SeededRng data_rng(4);
  const auto ds = synth_multi_interest(sc, data_rng);
  const auto split = split_leave_one_out(ds);

  ModelConfig mc;
  mc.dim = 8;
  mc.vocab_size = ds.vocab_size();
  mc.max_len = 32;
  mc.seed = 4;
  TrainConfig tc;
  tc.epochs = 20;
  tc.loss.learning_rate = 0.01;
  tc.loss.batch_size = 32;

  Model a = Model::init(mc), b = Model::init(mc);
  const auto la = train(a, split.train, tc, 11);
  const auto lb = train(b, split.train, tc, 11);
  CHECK(la == lb);
  CHECK(a == b);
  CHECK(la.front() > la.back());

  Model c = Model::init(mc);
  tc.loss.lambda = 0.0;
  train(c, split.train, tc, 11);
  CHECK_FALSE(c == a);
}

TEST_CASE("train_epoch rejects an empty dataset") {
  ModelConfig mc;
  mc.dim = 4;
  mc.vocab_size = 5;
  mc.max_len = 8;
  Model m = Model::init(mc);
  AdamState st = AdamState::for_params(m.params);
  SeededRng rng(1);
  CHECK_THROWS_AS(train_epoch(m, st, {}, LossConfig{}, rng), std::invalid_argument);
  CHECK_THROWS_AS(train_epoch(m, st, {{1}}, LossConfig{}, rng), std::invalid_argument);
}
