#include "limarec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "limarec/encoder.hpp"
#include "limarec/errors.hpp"

namespace limarec {

namespace {

// Layer norm over one row, keeping what the backward pass needs.
double layer_norm_cached(std::span<const double> x, const Vector& gain, const Vector& bias,
                         std::span<double> x_hat, std::span<double> y) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < n; ++i) {
    x_hat[i] = (x[i] - mean) * rstd;
    y[i] = x_hat[i] * gain[i] + bias[i];
  }
  return rstd;
}

// Accumulates gain/bias grads and adds dL/dx into dx.
void layer_norm_backward(std::span<const double> dy, std::span<const double> x_hat, double rstd,
                         const Vector& gain, Vector& dgain, Vector& dbias, std::span<double> dx) {
  const std::size_t n = dy.size();
  double mean_g = 0.0, mean_gx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = dy[i] * gain[i];
    dgain[i] += dy[i] * x_hat[i];
    dbias[i] += dy[i];
    mean_g += g;
    mean_gx += g * x_hat[i];
  }
  mean_g /= static_cast<double>(n);
  mean_gx /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    dx[i] += rstd * (dy[i] * gain[i] - mean_g - x_hat[i] * mean_gx);
}

Matrix draw_mask(std::size_t rows, std::size_t cols, double rate, SeededRng* rng) {
  if (rng == nullptr || rate <= 0.0) return {};
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask.values()) v = rng->uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

struct BlockCache {
  Matrix x;                     // block input
  Matrix a, a_hat;              // attention-side layer norm
  Vector a_rstd;
  Matrix q, k, v, phi_q, phi_k;
  Matrix s, s_mask;             // attention output, dropout mask
  Matrix x1;
  Matrix b, b_hat;              // FFN-side layer norm
  Vector b_rstd;
  Matrix u;                     // FFN pre-activation
  Matrix f_mask;
  Matrix out;
};

void block_forward_cached(const AttentionBlockParams& p, const FeatureMapSpec& fm, double dropout,
                          SeededRng* rng, BlockCache& c) {
  const std::size_t len = c.x.rows(), d = c.x.cols(), m = fm.feature_dim;
  c.a = c.a_hat = c.q = c.k = c.v = c.s = c.b = c.b_hat = c.u = Matrix(len, d);
  c.phi_q = c.phi_k = Matrix(len, m);
  c.a_rstd = c.b_rstd = Vector(len);

  Matrix r(m, d);
  Vector z(m, 0.0), num(d);
  for (std::size_t l = 0; l < len; ++l) {
    c.a_rstd[l] = layer_norm_cached(c.x.row(l), p.ln_attn_gain, p.ln_attn_bias, c.a_hat.row(l),
                                    c.a.row(l));
    matvec(p.w_q, c.a.row(l), c.q.row(l));
    matvec(p.w_k, c.a.row(l), c.k.row(l));
    matvec(p.w_v, c.a.row(l), c.v.row(l));
    apply_into(fm, c.k.row(l), c.phi_k.row(l));
    add_outer(1.0, c.phi_k.row(l), c.v.row(l), r);
    axpy(1.0, c.phi_k.row(l), z);
    apply_query_into(fm, c.q.row(l), c.phi_q.row(l));
    matvec_t(r, c.phi_q.row(l), num);
    const double den = dot(c.phi_q.row(l), z);
    auto s = c.s.row(l);
    for (std::size_t j = 0; j < d; ++j) s[j] = num[j] / den;
  }

  c.s_mask = draw_mask(len, d, dropout, rng);
  c.x1 = c.x;
  if (c.s_mask.empty()) {
    axpy(1.0, c.s.values(), c.x1.values());
  } else {
    Matrix sd = c.s;
    for (std::size_t i = 0; i < sd.size(); ++i) sd.values()[i] *= c.s_mask.values()[i];
    axpy(1.0, sd.values(), c.x1.values());
  }

  Matrix f(len, d);
  Vector hidden(d);
  for (std::size_t l = 0; l < len; ++l) {
    c.b_rstd[l] = layer_norm_cached(c.x1.row(l), p.ln_ffn_gain, p.ln_ffn_bias, c.b_hat.row(l),
                                    c.b.row(l));
    matvec(p.ffn_w1, c.b.row(l), c.u.row(l));
    auto u = c.u.row(l);
    for (std::size_t i = 0; i < d; ++i) {
      u[i] += p.ffn_b1[i];
      hidden[i] = std::max(0.0, u[i]);
    }
    matvec_t(p.ffn_w2, hidden, f.row(l));
    auto fr = f.row(l);
    for (std::size_t j = 0; j < d; ++j) fr[j] += p.ffn_b2[j];
  }
  c.f_mask = draw_mask(len, d, dropout, rng);
  if (!c.f_mask.empty())
    for (std::size_t i = 0; i < f.size(); ++i) f.values()[i] *= c.f_mask.values()[i];
  c.out = c.x1;
  axpy(1.0, f.values(), c.out.values());
}

// Given dL/dout of a block, accumulates parameter grads and returns dL/dx.
Matrix block_backward(const AttentionBlockParams& p, const FeatureMapSpec& fm, const BlockCache& c,
                      const Matrix& dout, AttentionBlockParams& g) {
  const std::size_t len = c.x.rows(), d = c.x.cols(), m = fm.feature_dim;

  // FFN sub-layer.
  Matrix dx1 = dout;
  Vector df(d), hidden(d), dhidden(d), db(d);
  for (std::size_t l = 0; l < len; ++l) {
    auto dl = dout.row(l);
    for (std::size_t j = 0; j < d; ++j) df[j] = c.f_mask.empty() ? dl[j] : dl[j] * c.f_mask(l, j);
    auto u = c.u.row(l);
    for (std::size_t i = 0; i < d; ++i) hidden[i] = std::max(0.0, u[i]);
    axpy(1.0, df, g.ffn_b2);
    add_outer(1.0, hidden, df, g.ffn_w2);
    matvec(p.ffn_w2, df, dhidden);
    for (std::size_t i = 0; i < d; ++i) dhidden[i] = u[i] > 0.0 ? dhidden[i] : 0.0;
    axpy(1.0, dhidden, g.ffn_b1);
    add_outer(1.0, dhidden, c.b.row(l), g.ffn_w1);
    matvec_t(p.ffn_w1, dhidden, db);
    layer_norm_backward(db, c.b_hat.row(l), c.b_rstd[l], p.ln_ffn_gain, g.ln_ffn_gain,
                        g.ln_ffn_bias, dx1.row(l));
  }

  // Attention sub-layer: ds from the residual branch.
  Matrix ds = dx1;
  if (!c.s_mask.empty())
    for (std::size_t i = 0; i < ds.size(); ++i) ds.values()[i] *= c.s_mask.values()[i];
  Matrix dx = dx1;

  // Forward-order pass: dL/dphi_q at each position needs the prefix sums.
  Matrix r(m, d), dnum(len, d), dphi_q(len, m), dphi_k(len, m), dv(len, d);
  Vector z(m, 0.0), dden(len), num(d);
  for (std::size_t l = 0; l < len; ++l) {
    add_outer(1.0, c.phi_k.row(l), c.v.row(l), r);
    axpy(1.0, c.phi_k.row(l), z);
    const double den = dot(c.phi_q.row(l), z);
    auto dn = dnum.row(l);
    for (std::size_t j = 0; j < d; ++j) dn[j] = ds(l, j) / den;
    dden[l] = -dot(ds.row(l), c.s.row(l)) / den;
    matvec(r, dn, dphi_q.row(l));
    axpy(dden[l], z, dphi_q.row(l));
  }
  // Reverse pass: keys and values at j are seen by every query l >= j.
  Matrix gr(m, d);
  Vector gz(m, 0.0);
  for (std::size_t l = len; l-- > 0;) {
    add_outer(1.0, c.phi_q.row(l), dnum.row(l), gr);
    axpy(dden[l], c.phi_q.row(l), gz);
    matvec(gr, c.v.row(l), dphi_k.row(l));
    axpy(1.0, gz, dphi_k.row(l));
    matvec_t(gr, c.phi_k.row(l), dv.row(l));
  }

  Vector dq(d), dk(d), da(d), tmp(d);
  for (std::size_t l = 0; l < len; ++l) {
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    apply_backward(fm, c.q.row(l), c.phi_q.row(l), dphi_q.row(l), dq);
    apply_backward(fm, c.k.row(l), c.phi_k.row(l), dphi_k.row(l), dk);
    add_outer(1.0, dq, c.a.row(l), g.w_q);
    add_outer(1.0, dk, c.a.row(l), g.w_k);
    add_outer(1.0, dv.row(l), c.a.row(l), g.w_v);
    matvec_t(p.w_q, dq, da);
    matvec_t(p.w_k, dk, tmp);
    axpy(1.0, tmp, da);
    matvec_t(p.w_v, dv.row(l), tmp);
    axpy(1.0, tmp, da);
    layer_norm_backward(da, c.a_hat.row(l), c.a_rstd[l], p.ln_attn_gain, g.ln_attn_gain,
                        g.ln_attn_bias, dx.row(l));
  }
  return dx;
}

struct HeadCache {
  Matrix kt, vt, phi_kt;  // L x d, L x d, L x m
  Matrix phi_mu;          // K x m
  std::vector<Matrix> interests;  // per position, K x d
};

void head_forward(const Model& model, const Matrix& h2, HeadCache& c) {
  const std::size_t len = h2.rows(), d = model.dim(), m = model.feature_map.feature_dim;
  if (!model.config.multi_interest) {
    c.interests.assign(len, Matrix(1, d));
    for (std::size_t l = 0; l < len; ++l)
      std::copy(h2.row(l).begin(), h2.row(l).end(), c.interests[l].row(0).begin());
    return;
  }
  const auto& head = model.params.interest;
  const std::size_t num_k = head.mu.rows();
  c.kt = c.vt = Matrix(len, d);
  c.phi_kt = Matrix(len, m);
  c.phi_mu = interest_query_features(model);
  c.interests.assign(len, Matrix(num_k, d));
  Matrix r(m, d);
  Vector z(m, 0.0);
  for (std::size_t l = 0; l < len; ++l) {
    matvec(head.w_k_tilde, h2.row(l), c.kt.row(l));
    matvec(head.w_v_tilde, h2.row(l), c.vt.row(l));
    apply_into(model.feature_map, c.kt.row(l), c.phi_kt.row(l));
    add_outer(1.0, c.phi_kt.row(l), c.vt.row(l), r);
    axpy(1.0, c.phi_kt.row(l), z);
    for (std::size_t k = 0; k < num_k; ++k) {
      auto out = c.interests[l].row(k);
      matvec_t(r, c.phi_mu.row(k), out);
      const double den = dot(c.phi_mu.row(k), z);
      for (double& v : out) v /= den;
    }
  }
}

// dinterests[l] is dL/d(interests at l). Returns dL/dh2.
Matrix head_backward(const Model& model, const Matrix& h2, const HeadCache& c,
                     const std::vector<Matrix>& dinterests, MultiInterestParams& g) {
  const std::size_t len = h2.rows(), d = model.dim(), m = model.feature_map.feature_dim;
  Matrix dh2(len, d);
  if (!model.config.multi_interest) {
    for (std::size_t l = 0; l < len; ++l)
      std::copy(dinterests[l].row(0).begin(), dinterests[l].row(0).end(), dh2.row(l).begin());
    return dh2;
  }
  const auto& head = model.params.interest;
  const std::size_t num_k = head.mu.rows();

  Matrix r(m, d), dphi_mu(num_k, m);
  Vector z(m, 0.0);
  std::vector<Matrix> dnum(len, Matrix(num_k, d));
  Matrix dden(len, num_k);
  for (std::size_t l = 0; l < len; ++l) {
    add_outer(1.0, c.phi_kt.row(l), c.vt.row(l), r);
    axpy(1.0, c.phi_kt.row(l), z);
    for (std::size_t k = 0; k < num_k; ++k) {
      auto gi = dinterests[l].row(k);
      const double den = dot(c.phi_mu.row(k), z);
      auto dn = dnum[l].row(k);
      for (std::size_t j = 0; j < d; ++j) dn[j] = gi[j] / den;
      dden(l, k) = -dot(gi, c.interests[l].row(k)) / den;
      Vector tmp(m);
      matvec(r, dn, tmp);
      axpy(1.0, tmp, dphi_mu.row(k));
      axpy(dden(l, k), z, dphi_mu.row(k));
    }
  }

  Matrix gr(m, d);
  Vector gz(m, 0.0), dphi_k(m), dvt(d), dkt(d), tmp(d);
  for (std::size_t l = len; l-- > 0;) {
    for (std::size_t k = 0; k < num_k; ++k) {
      add_outer(1.0, c.phi_mu.row(k), dnum[l].row(k), gr);
      axpy(dden(l, k), c.phi_mu.row(k), gz);
    }
    matvec(gr, c.vt.row(l), dphi_k);
    axpy(1.0, gz, dphi_k);
    matvec_t(gr, c.phi_kt.row(l), dvt);
    std::fill(dkt.begin(), dkt.end(), 0.0);
    apply_backward(model.feature_map, c.kt.row(l), c.phi_kt.row(l), dphi_k, dkt);
    add_outer(1.0, dkt, h2.row(l), g.w_k_tilde);
    add_outer(1.0, dvt, h2.row(l), g.w_v_tilde);
    matvec_t(head.w_k_tilde, dkt, dh2.row(l));
    matvec_t(head.w_v_tilde, dvt, tmp);
    axpy(1.0, tmp, dh2.row(l));
  }
  for (std::size_t k = 0; k < num_k; ++k)
    apply_backward(model.feature_map, head.mu.row(k), c.phi_mu.row(k), dphi_mu.row(k),
                   g.mu.row(k));
  return dh2;
}

bool selection_changed(const SequenceLoss& base, const SequenceLoss& probe) {
  constexpr double kCoincident = 1e-9;
  for (std::size_t l = 0; l < base.chosen.size(); ++l)
    if (base.chosen[l] != probe.chosen[l] && base.spread[l] > kCoincident) return true;
  return false;
}

}  // namespace

SequenceLoss sequence_loss(const Model& model, const SequenceBatchItem& example,
                           const LossConfig& config, ModelParams* grads, SeededRng* dropout_rng) {
  const auto items = example.items;
  const std::size_t len = items.size();
  if (len < 2) throw std::invalid_argument("sequence_loss: need at least two items");
  if (example.negatives.size() + 1 != len)
    throw std::invalid_argument("sequence_loss: one negative list per predicted position");

  const auto& emb = model.params.emb;
  const std::size_t d = model.dim();
  const double dropout = dropout_rng != nullptr ? model.config.dropout : 0.0;

  // Positions 0..len-2 are inputs; the last item is only a target.
  const std::span<const ItemId> inputs = items.first(len - 1);
  const std::size_t n_in = inputs.size();
  const Matrix h0 = embed_sequence(inputs, emb);
  const Matrix h0_mask = draw_mask(n_in, d, dropout, dropout_rng);

  std::array<BlockCache, kNumBlocks> blocks;
  blocks[0].x = h0;
  if (!h0_mask.empty())
    for (std::size_t i = 0; i < h0.size(); ++i) blocks[0].x.values()[i] *= h0_mask.values()[i];
  block_forward_cached(model.params.blocks[0], model.feature_map, dropout, dropout_rng, blocks[0]);
  blocks[1].x = blocks[0].out;
  block_forward_cached(model.params.blocks[1], model.feature_map, dropout, dropout_rng, blocks[1]);
  const Matrix& h2 = blocks[1].out;

  HeadCache head;
  head_forward(model, h2, head);

  SequenceLoss result;
  result.positions = n_in;
  result.chosen.resize(n_in);
  result.spread.assign(n_in, 0.0);
  std::vector<Matrix> dinterests;
  if (grads != nullptr) dinterests.assign(n_in, Matrix(head.interests[0].rows(), d));
  const double reg_weight = config.reg_sign * config.lambda;

  for (std::size_t l = 0; l < n_in; ++l) {
    const Matrix& phis = head.interests[l];
    const std::size_t num_k = phis.rows();
    const ItemId target = items[l + 1];
    const auto e_t = emb.item_table.row(target);
    const auto& negs = example.negatives[l];
    if (negs.empty()) throw std::invalid_argument("sequence_loss: empty negative list");

    Vector scores(num_k);
    for (std::size_t k = 0; k < num_k; ++k) scores[k] = dot(phis.row(k), e_t);
    const std::size_t best = select_interest(phis, e_t);
    result.chosen[l] = best;
    for (std::size_t k = 1; k < num_k; ++k)
      result.spread[l] = std::max(result.spread[l], max_abs_diff(phis.row(k), phis.row(0)));
    const Vector probs = softmax(scores);
    const auto phi = phis.row(best);

    const double inv_n = 1.0 / static_cast<double>(negs.size());
    double neg_loss = 0.0;
    Vector neg_scores(negs.size());
    for (std::size_t j = 0; j < negs.size(); ++j) {
      neg_scores[j] = dot(phi, emb.item_table.row(negs[j]));
      neg_loss += softplus(neg_scores[j]);
    }
    result.loss_sum += softplus(-scores[best]) + neg_loss * inv_n + reg_weight * probs[best];

    if (grads == nullptr) continue;
    auto& g_items = grads->emb.item_table;
    Matrix& dphis = dinterests[l];

    // Recommendation term through the selected interest.
    const double d_target = -sigmoid(-scores[best]);
    axpy(d_target, e_t, dphis.row(best));
    axpy(d_target, phi, g_items.row(target));
    for (std::size_t j = 0; j < negs.size(); ++j) {
      const double dn = sigmoid(neg_scores[j]) * inv_n;
      axpy(dn, emb.item_table.row(negs[j]), dphis.row(best));
      axpy(dn, phi, g_items.row(negs[j]));
    }
    // Regularizer: d p_best / d score_k = p_best (delta_k,best - p_k).
    if (reg_weight != 0.0) {
      for (std::size_t k = 0; k < num_k; ++k) {
        const double dk =
            reg_weight * probs[best] * ((k == best ? 1.0 : 0.0) - probs[k]);
        axpy(dk, e_t, dphis.row(k));
        axpy(dk, phis.row(k), g_items.row(target));
      }
    }
  }

  if (grads != nullptr) {
    Matrix dh = head_backward(model, h2, head, dinterests, grads->interest);
    dh = block_backward(model.params.blocks[1], model.feature_map, blocks[1], dh, grads->blocks[1]);
    dh = block_backward(model.params.blocks[0], model.feature_map, blocks[0], dh, grads->blocks[0]);
    const std::size_t max_len = emb.pos_table.rows();
    for (std::size_t l = 0; l < n_in; ++l) {
      auto row = dh.row(l);
      if (!h0_mask.empty())
        for (std::size_t j = 0; j < d; ++j) row[j] *= h0_mask(l, j);
      axpy(1.0, row, grads->emb.item_table.row(inputs[l]));
      axpy(1.0, row, grads->emb.pos_table.row(position_row(l, max_len)));
    }
  }
  return result;
}

double train_epoch(Model& model, AdamState& adam, const std::vector<std::vector<ItemId>>& sequences,
                   const LossConfig& config, SeededRng& rng) {
  config.validate();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < sequences.size(); ++i)
    if (sequences[i].size() >= 2) order.push_back(i);
  if (order.empty()) throw std::invalid_argument("train_epoch: no sequence with two or more items");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  const std::size_t max_len = model.config.max_len;
  const std::size_t vocab = model.config.vocab_size;
  ModelParams grads = model.params.zeros_like();
  double epoch_loss = 0.0;
  std::size_t epoch_positions = 0;

  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    for (auto t : tensor_spans(grads)) std::fill(t.begin(), t.end(), 0.0);
    double batch_loss = 0.0;
    std::size_t batch_positions = 0;

    for (std::size_t b = start; b < stop; ++b) {
      const auto& full = sequences[order[b]];
      const std::span<const ItemId> items =
          full.size() > max_len ? std::span<const ItemId>(full).last(max_len)
                                : std::span<const ItemId>(full);
      SeededRng seq_rng(rng.next_u64());
      SeededRng drop_rng(seq_rng.next_u64());
      const ItemSet history(std::vector<ItemId>(full.begin(), full.end()));
      std::vector<std::vector<ItemId>> negatives(items.size() - 1);
      for (auto& n : negatives)
        n = sample_negatives(vocab, history, config.negatives_per_positive, seq_rng);

      const SequenceLoss sl = sequence_loss(model, {items, negatives}, config, &grads,
                                            model.config.dropout > 0.0 ? &drop_rng : nullptr);
      batch_loss += sl.loss_sum;
      batch_positions += sl.positions;
    }

    const double scale = 1.0 / static_cast<double>(batch_positions);
    for (auto t : tensor_spans(grads))
      for (double& v : t) v *= scale;
    if (!std::isfinite(batch_loss)) throw NumericError("train_epoch: non-finite loss");
    // Key features can underflow once key norms grow large, which poisons the
    // gradient before the loss.
    for (auto t : tensor_spans(grads))
      if (!all_finite(t)) throw NumericError("train_epoch: non-finite gradient");
    adam_step(model.params, grads, adam, config);
    epoch_loss += batch_loss;
    epoch_positions += batch_positions;
  }
  for (auto t : tensor_spans(model.params))
    if (!all_finite(t)) throw NumericError("train_epoch: non-finite parameter after update");
  return epoch_loss / static_cast<double>(epoch_positions);
}

std::vector<double> train(Model& model, const std::vector<std::vector<ItemId>>& sequences,
                          const TrainConfig& config, std::uint64_t seed,
                          const std::function<void(std::size_t, double)>& on_epoch) {
  AdamState adam = AdamState::for_params(model.params);
  SeededRng rng(mix_seed(seed, 3));
  std::vector<double> losses;
  for (std::size_t e = 1; e <= config.epochs; ++e) {
    losses.push_back(train_epoch(model, adam, sequences, config.loss, rng));
    if (on_epoch) on_epoch(e, losses.back());
  }
  return losses;
}

GradCheckReport grad_check(const GradCheckConfig& gc, std::uint64_t seed) {
  ModelConfig mc;
  mc.dim = gc.dim;
  mc.feature_dim = gc.feature_dim;
  mc.num_interests = gc.num_interests;
  mc.max_len = gc.max_len;
  mc.vocab_size = gc.vocab_size;
  mc.dropout = 0.0;
  mc.multi_interest = gc.multi_interest;
  mc.seed = seed;
  Model model = Model::init(mc);

  SeededRng rng(mix_seed(seed, 17));
  // Move layer-norm and bias parameters off their trivial initial values so
  // every parameter path carries signal.
  for (auto& blk : model.params.blocks)
    for (Vector* v : {&blk.ffn_b1, &blk.ffn_b2, &blk.ln_attn_gain, &blk.ln_attn_bias,
                      &blk.ln_ffn_gain, &blk.ln_ffn_bias})
      for (double& x : *v) x += 0.2 * rng.normal();

  std::vector<ItemId> items(gc.seq_len);
  for (auto& it : items) it = static_cast<ItemId>(1 + rng.below(gc.vocab_size));
  const ItemSet history(items);
  std::vector<std::vector<ItemId>> negatives(items.size() - 1);
  for (auto& n : negatives) n = sample_negatives(gc.vocab_size, history, 2, rng);

  LossConfig lc;
  lc.lambda = gc.lambda;
  lc.reg_sign = gc.reg_sign;
  const SequenceBatchItem example{items, negatives};

  ModelParams analytic = model.params.zeros_like();
  const SequenceLoss base = sequence_loss(model, example, lc, &analytic);

  GradCheckReport report;
  std::vector<std::string> names;
  for_each_tensor(model.params, [&](std::string_view name, auto) { names.emplace_back(name); });
  auto params = tensor_spans(model.params);
  const auto grads = tensor_spans(analytic);

  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      double step = gc.step;
      bool accepted = false;
      double numeric = 0.0;
      // A probe whose perturbation changes any selected interest is redrawn
      // with a smaller step; after three tries it is rejected.
      for (int attempt = 0; attempt < 3 && !accepted; ++attempt, step *= 0.1) {
        params[t][i] = saved + step;
        const SequenceLoss plus = sequence_loss(model, example, lc);
        params[t][i] = saved - step;
        const SequenceLoss minus = sequence_loss(model, example, lc);
        params[t][i] = saved;
        if (selection_changed(base, plus) || selection_changed(base, minus)) continue;
        numeric = (plus.loss_sum - minus.loss_sum) / (2.0 * step);
        accepted = true;
      }
      if (!accepted) {
        ++report.rejected_probes;
        continue;
      }
      ++report.probes;
      const double a = grads[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), gc.relative_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = names[t] + "[" + std::to_string(i) + "]";
      }
    }
  }

  const auto& gpos = analytic.emb.pos_table;
  for (std::size_t row = gc.seq_len - 1; row < gpos.rows(); ++row)
    for (double v : gpos.row(row)) report.max_unused_position_grad = std::max(report.max_unused_position_grad, std::abs(v));
  for (double v : analytic.interest.mu.values())
    report.max_mu_grad = std::max(report.max_mu_grad, std::abs(v));
  return report;
}

}  // namespace limarec
