#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "uplift/common.hpp"
#include "uplift/dataset.hpp"
#include "uplift/losses.hpp"
#include "uplift/math.hpp"
#include "uplift/matrix.hpp"
#include "uplift/model.hpp"
#include "uplift/rng.hpp"

namespace uplift {

// Index pairs drawn for the ranking losses. Positions refer into the
// treated/control batch vectors, not into the dataset.
struct PairDraw {
  std::vector<std::pair<std::size_t, std::size_t>> tt, cc;  // within-group, unordered
  std::vector<std::pair<std::size_t, std::size_t>> tc;      // (treated pos, control pos)
  std::vector<std::pair<std::size_t, std::size_t>> ct;      // (control pos, treated pos)
};

// One optimization step's inputs: the two group batches plus the pair draw.
struct StepBatch {
  std::vector<const SampleRecord*> treated, control;
  PairDraw pairs;
};

namespace detail {

// gradW += delta^T * input, gradb += column sums, d_input = delta * W.
inline void affine_backward(const Matrix& input, const Matrix& delta, const ModelParams& p,
                            std::size_t w_idx, std::size_t b_idx, std::vector<double>& grad,
                            Matrix* d_input) {
  const auto& ws = p.specs[w_idx];
  const std::size_t O = ws.rows, I = ws.cols;
  double* gW = grad.data() + ws.offset;
  double* gb = grad.data() + p.specs[b_idx].offset;
  for (std::size_t i = 0; i < input.rows; ++i) {
    const double* d = delta.row(i);
    const double* x = input.row(i);
    for (std::size_t o = 0; o < O; ++o) {
      double dv = d[o];
      if (dv == 0.0) continue;
      gb[o] += dv;
      double* gw = gW + o * I;
      for (std::size_t k = 0; k < I; ++k) gw[k] += dv * x[k];
    }
  }
  if (d_input) {
    *d_input = Matrix(input.rows, I);
    auto W = p.tensor(w_idx);
    for (std::size_t i = 0; i < input.rows; ++i) {
      const double* d = delta.row(i);
      double* di = d_input->row(i);
      for (std::size_t o = 0; o < O; ++o) {
        double dv = d[o];
        if (dv == 0.0) continue;
        const double* w = W.data() + o * I;
        for (std::size_t k = 0; k < I; ++k) di[k] += dv * w[k];
      }
    }
  }
}

inline void activation_backward(Activation a, const Matrix& pre, Matrix& delta) {
  for (std::size_t k = 0; k < pre.v.size(); ++k) {
    delta.v[k] *= activate_grad(a, pre.v[k]);
  }
}

}  // namespace detail

// Forward pass, all loss terms, and (optionally) analytic gradients for the
// full objective on one step batch. Treated rows come first in the union.
// Passing grad == nullptr gives the loss-only evaluation used by the finite
// difference oracle, over exactly the same computation.
inline LossBreakdown compute_step(const ModelParams& params, const ModelConfig& config,
                                  const StepBatch& batch, const LossWeights& weights,
                                  std::vector<double>* grad) {
  weights.validate();
  const std::size_t bt = batch.treated.size();
  const std::size_t bc = batch.control.size();
  if (bt == 0 && bc == 0) fail("compute_step: empty batch");
  if ((bt == 0 || bc == 0) && (weights.lu > 0.0 || weights.mmd > 0.0)) {
    fail("compute_step: listwise and MMD terms need both groups non-empty");
  }

  std::vector<const SampleRecord*> rows;
  rows.reserve(bt + bc);
  rows.insert(rows.end(), batch.treated.begin(), batch.treated.end());
  rows.insert(rows.end(), batch.control.begin(), batch.control.end());
  const std::size_t n = rows.size();

  ForwardCache cache = forward_cached(params, config, rows);
  const bool ziln_mode = config.head_mode == HeadMode::Ziln;
  const double floor = config.sigma_floor;

  // Per-arm point predictions for every union row, plus the pieces the
  // chain rule needs to push d/d(yhat) back onto the raw head outputs.
  std::array<std::vector<double>, 2> resp;
  std::array<std::vector<double>, 2> sigma_of;   // ZILN only
  std::array<std::vector<bool>, 2> clamped;      // exponent clamp hit
  for (int arm : {0, 1}) {
    resp[arm].resize(n);
    if (ziln_mode) {
      sigma_of[arm].resize(n);
      clamped[arm].assign(n, false);
    }
    const Matrix& raw = cache.heads[arm].out;
    for (std::size_t i = 0; i < n; ++i) {
      if (ziln_mode) {
        ZilnParams z = ziln_from_raw(raw(i, 0), raw(i, 1), raw(i, 2), floor);
        sigma_of[arm][i] = z.sigma;
        clamped[arm][i] = z.mu + 0.5 * z.sigma * z.sigma > kMeanExponentClamp;
        resp[arm][i] = ziln_mean(z);
      } else {
        resp[arm][i] = raw(i, 0);
      }
    }
  }

  // --- regression loss, observed arm per group (batch means, summed) ---
  double reg_value = 0.0;
  for (int arm : {1, 0}) {
    const std::size_t lo = arm == 1 ? 0 : bt;
    const std::size_t count = arm == 1 ? bt : bc;
    if (count == 0) continue;
    const Matrix& raw = cache.heads[arm].out;
    double sum = 0.0;
    for (std::size_t i = lo; i < lo + count; ++i) {
      double y = rows[i]->response;
      if (ziln_mode) {
        sum += loss_ziln_from_raw(y, raw(i, 0), raw(i, 1), sigma_of[arm][i]);
      } else {
        double d = resp[arm][i] - y;
        sum += d * d;
      }
    }
    reg_value += sum / static_cast<double>(count);
  }

  // --- ranking losses over the drawn pairs ---
  auto treated_row = [&](std::size_t pos) { return pos; };
  auto control_row = [&](std::size_t pos) { return bt + pos; };

  std::vector<WrPair> tt_pairs, cc_pairs;
  tt_pairs.reserve(batch.pairs.tt.size());
  for (auto [a, b] : batch.pairs.tt) {
    std::size_t ra = treated_row(a), rb = treated_row(b);
    tt_pairs.push_back({resp[1][ra], resp[1][rb], rows[ra]->response, rows[rb]->response});
  }
  cc_pairs.reserve(batch.pairs.cc.size());
  for (auto [a, b] : batch.pairs.cc) {
    std::size_t ra = control_row(a), rb = control_row(b);
    cc_pairs.push_back({resp[0][ra], resp[0][rb], rows[ra]->response, rows[rb]->response});
  }
  double wr_value = 0.0;
  if (!batch.pairs.tt.empty() || !batch.pairs.cc.empty()) {
    if (!tt_pairs.empty()) wr_value += loss_wr_rank(tt_pairs);
    if (!cc_pairs.empty()) wr_value += loss_wr_rank(cc_pairs);
  }

  // ct pairs are evaluated through the same (treated, control) form; the
  // mirrored expression has identical value and gradient.
  std::vector<CrPair> tc_pairs, ct_pairs;
  tc_pairs.reserve(batch.pairs.tc.size());
  for (auto [t, c] : batch.pairs.tc) {
    std::size_t rt = treated_row(t), rc = control_row(c);
    tc_pairs.push_back({resp[1][rt], rows[rt]->response, resp[0][rc], rows[rc]->response});
  }
  ct_pairs.reserve(batch.pairs.ct.size());
  for (auto [c, t] : batch.pairs.ct) {
    std::size_t rt = treated_row(t), rc = control_row(c);
    ct_pairs.push_back({resp[1][rt], rows[rt]->response, resp[0][rc], rows[rc]->response});
  }
  double cr_value = 0.0;
  if (!tc_pairs.empty()) cr_value += loss_cr_rank(tc_pairs);
  if (!ct_pairs.empty()) cr_value += loss_cr_rank(ct_pairs);

  // --- listwise uplift ranking over the union batch ---
  std::vector<double> tau(n), y_obs(n);
  for (std::size_t i = 0; i < n; ++i) {
    tau[i] = resp[1][i] - resp[0][i];
    y_obs[i] = rows[i]->response;
  }
  double lu_value = 0.0;
  if (bt > 0 && bc > 0) {
    lu_value = loss_lu_rank(std::span(tau).subspan(0, bt), std::span(y_obs).subspan(0, bt),
                            std::span(tau).subspan(bt), std::span(y_obs).subspan(bt));
  }

  // --- representation balancing ---
  const Matrix& phi = cache.phi();
  const std::size_t rep_dim = phi.cols;
  std::vector<double> mmd_diff(rep_dim, 0.0);
  double mmd_value = 0.0;
  if (bt > 0 && bc > 0) {
    for (std::size_t k = 0; k < rep_dim; ++k) {
      double mt = 0.0, mc = 0.0;
      for (std::size_t i = 0; i < bt; ++i) mt += phi(i, k);
      for (std::size_t i = bt; i < n; ++i) mc += phi(i, k);
      mmd_diff[k] = mt / static_cast<double>(bt) - mc / static_cast<double>(bc);
      mmd_value += mmd_diff[k] * mmd_diff[k];
    }
  }

  double l2_raw = params.l2_norm_squared();
  LossBreakdown breakdown =
      assemble_overall(reg_value, wr_value, cr_value, lu_value, mmd_value, l2_raw, weights);
  if (!grad) return breakdown;

  // ---------- backward ----------
  if (grad->size() != params.data.size()) fail("compute_step: gradient buffer size mismatch");

  const std::size_t out_dim = params.head_out_dim;
  std::array<Matrix, 2> d_out{Matrix(n, out_dim), Matrix(n, out_dim)};
  std::array<std::vector<double>, 2> d_resp;
  d_resp[0].assign(n, 0.0);
  d_resp[1].assign(n, 0.0);

  // regression term
  for (int arm : {1, 0}) {
    const std::size_t lo = arm == 1 ? 0 : bt;
    const std::size_t count = arm == 1 ? bt : bc;
    if (count == 0) continue;
    const Matrix& raw = cache.heads[arm].out;
    const double scale = weights.ziln / static_cast<double>(count);
    for (std::size_t i = lo; i < lo + count; ++i) {
      double y = rows[i]->response;
      if (ziln_mode) {
        double p = sigmoid(raw(i, 0));
        if (y == 0.0) {
          d_out[arm](i, 0) += scale * p;
        } else {
          double sg = sigma_of[arm][i];
          double r = std::log(y) - raw(i, 1);
          d_out[arm](i, 0) += scale * (p - 1.0);
          d_out[arm](i, 1) += scale * (-r / (sg * sg));
          double d_sigma = 1.0 / sg - r * r / (sg * sg * sg);
          d_out[arm](i, 2) += scale * d_sigma * sigmoid(raw(i, 2));
        }
      } else {
        d_resp[arm][i] += scale * 2.0 * (resp[arm][i] - y);
      }
    }
  }

  // within-group pairs
  auto add_wr = [&](const std::vector<std::pair<std::size_t, std::size_t>>& pairs, int arm,
                    bool treated_side) {
    if (pairs.empty()) return;
    const double scale = weights.wr / static_cast<double>(pairs.size());
    for (auto [a, b] : pairs) {
      std::size_t ra = treated_side ? treated_row(a) : control_row(a);
      std::size_t rb = treated_side ? treated_row(b) : control_row(b);
      double da = resp[arm][ra] - resp[arm][rb];
      double db = rows[ra]->response - rows[rb]->response;
      if (da * db >= 0.0) continue;
      double g = 2.0 * (da - db) * scale;
      d_resp[arm][ra] += g;
      d_resp[arm][rb] -= g;
    }
  };
  add_wr(batch.pairs.tt, 1, true);
  add_wr(batch.pairs.cc, 0, false);

  // cross-group pairs; both directions reduce to the same expression
  auto add_cr = [&](const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                    bool first_is_treated) {
    if (pairs.empty()) return;
    const double scale = weights.cr / static_cast<double>(pairs.size());
    for (auto [a, b] : pairs) {
      std::size_t rt = first_is_treated ? treated_row(a) : treated_row(b);
      std::size_t rc = first_is_treated ? control_row(b) : control_row(a);
      double da = resp[1][rt] - rows[rc]->response;
      double db = rows[rt]->response - resp[0][rc];
      if (da * db >= 0.0) continue;
      double g = 2.0 * (da - db) * scale;
      d_resp[1][rt] += g;
      d_resp[0][rc] += g;
    }
  };
  add_cr(batch.pairs.tc, true);
  add_cr(batch.pairs.ct, false);

  // listwise term
  if (bt > 0 && bc > 0 && weights.lu != 0.0) {
    double max_tau = *std::max_element(tau.begin(), tau.end());
    double sum_exp = 0.0;
    for (double t : tau) sum_exp += std::exp(t - max_tau);
    double a_sum = 0.0, c_sum = 0.0;
    for (std::size_t i = 0; i < bt; ++i) a_sum += y_obs[i] / static_cast<double>(bt);
    for (std::size_t i = bt; i < n; ++i) c_sum += y_obs[i] / static_cast<double>(bc);
    for (std::size_t i = 0; i < n; ++i) {
      double softmax_i = std::exp(tau[i] - max_tau) / sum_exp;
      double d_tau = (a_sum - c_sum) * softmax_i;
      d_tau += i < bt ? -y_obs[i] / static_cast<double>(bt) : y_obs[i] / static_cast<double>(bc);
      d_resp[1][i] += weights.lu * d_tau;
      d_resp[0][i] -= weights.lu * d_tau;
    }
  }

  // chain d/d(yhat) onto the raw head outputs
  for (int arm : {0, 1}) {
    const Matrix& raw = cache.heads[arm].out;
    for (std::size_t i = 0; i < n; ++i) {
      double dr = d_resp[arm][i];
      if (dr == 0.0) continue;
      if (ziln_mode) {
        double p = sigmoid(raw(i, 0));
        double yhat = resp[arm][i];
        d_out[arm](i, 0) += dr * yhat * (1.0 - p);
        if (!clamped[arm][i]) {
          d_out[arm](i, 1) += dr * yhat;
          d_out[arm](i, 2) += dr * yhat * sigma_of[arm][i] * sigmoid(raw(i, 2));
        }
      } else {
        d_out[arm](i, 0) += dr;
      }
    }
  }

  // representation adjoint: heads backward, then the MMD contribution
  Matrix d_phi(n, rep_dim);
  for (int arm : {0, 1}) {
    const auto& head = cache.heads[arm];
    const std::size_t n_hidden = params.head_widths.size();
    Matrix delta = d_out[arm];
    Matrix d_in;
    const Matrix& last_in = n_hidden > 0 ? head.act[n_hidden - 1] : phi;
    detail::affine_backward(last_in, delta, params, params.head_w_idx[arm][n_hidden],
                            params.head_b_idx[arm][n_hidden], *grad, &d_in);
    for (std::size_t l = n_hidden; l-- > 0;) {
      detail::activation_backward(config.activation, head.pre[l], d_in);
      const Matrix& in = l > 0 ? head.act[l - 1] : phi;
      Matrix d_next;
      detail::affine_backward(in, d_in, params, params.head_w_idx[arm][l],
                              params.head_b_idx[arm][l], *grad, &d_next);
      d_in = std::move(d_next);
    }
    for (std::size_t k = 0; k < d_phi.v.size(); ++k) d_phi.v[k] += d_in.v[k];
  }
  if (weights.mmd != 0.0 && bt > 0 && bc > 0) {
    for (std::size_t k = 0; k < rep_dim; ++k) {
      double gt = weights.mmd * 2.0 * mmd_diff[k] / static_cast<double>(bt);
      double gc = weights.mmd * 2.0 * mmd_diff[k] / static_cast<double>(bc);
      for (std::size_t i = 0; i < bt; ++i) d_phi(i, k) += gt;
      for (std::size_t i = bt; i < n; ++i) d_phi(i, k) -= gc;
    }
  }

  // representation stack backward down to the input row
  Matrix d_input;
  {
    Matrix delta = std::move(d_phi);
    const std::size_t n_rep = params.rep_widths.size();
    for (std::size_t l = n_rep; l-- > 0;) {
      detail::activation_backward(config.activation, cache.rep_pre[l], delta);
      const Matrix& in = l > 0 ? cache.rep_act[l - 1] : cache.input;
      Matrix d_next;
      detail::affine_backward(in, delta, params, params.rep_w_idx[l], params.rep_b_idx[l], *grad,
                              &d_next);
      delta = std::move(d_next);
    }
    d_input = std::move(delta);
  }

  // scatter the input adjoint into the embedding tables
  const std::size_t e_dim = params.embedding_dim;
  for (std::size_t c = 0; c < params.vocab_sizes.size(); ++c) {
    const auto& spec = params.specs[params.emb_idx[c]];
    double* g_emb = grad->data() + spec.offset;
    const std::size_t col_off = params.n_numeric + c * e_dim;
    for (std::size_t i = 0; i < n; ++i) {
      auto idx = static_cast<std::size_t>(rows[i]->categorical[c]);
      const double* src = d_input.row(i) + col_off;
      double* dst = g_emb + idx * e_dim;
      for (std::size_t k = 0; k < e_dim; ++k) dst[k] += src[k];
    }
  }

  // L2 term
  if (weights.l2 != 0.0) {
    for (const auto& s : params.specs) {
      if (!s.regularized) continue;
      for (std::size_t k = 0; k < s.size(); ++k) {
        (*grad)[s.offset + k] += weights.l2 * 2.0 * params.data[s.offset + k];
      }
    }
  }

  for (std::size_t k = 0; k < grad->size(); ++k) {
    if (!std::isfinite((*grad)[k])) {
      fail("non-finite gradient at ", params.locate(k));
    }
  }
  return breakdown;
}

// Central-difference check of the analytic gradient. Checks every parameter
// for small models, or a seeded subsample of at least `min_checked` for
// large ones. Returns max |analytic - numeric| / max(1e-8, |a| + |n|).
inline double verify_gradients(const ModelParams& params, const ModelConfig& config,
                               const StepBatch& batch, const LossWeights& weights, double h,
                               std::size_t min_checked = 200, std::uint64_t seed = 17) {
  if (!(h > 0.0)) fail("verify_gradients: h must be > 0");
  std::vector<double> grad = zero_gradients(params);
  compute_step(params, config, batch, weights, &grad);

  std::vector<std::size_t> indices;
  const std::size_t count = params.parameter_count();
  if (count <= 2 * min_checked) {
    indices.resize(count);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  } else {
    Rng rng(seed);
    indices = rng.sample_without_replacement(count, min_checked);
  }

  ModelParams probe = params;
  double max_rel = 0.0;
  for (std::size_t k : indices) {
    double original = probe.data[k];
    probe.data[k] = original + h;
    double up = compute_step(probe, config, batch, weights, nullptr).total;
    probe.data[k] = original - h;
    double down = compute_step(probe, config, batch, weights, nullptr).total;
    probe.data[k] = original;
    double numeric = (up - down) / (2.0 * h);
    double rel = std::abs(grad[k] - numeric) / std::max(1e-8, std::abs(grad[k]) + std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace uplift
