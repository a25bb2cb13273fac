#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/math.hpp"
#include "uplift/matrix.hpp"
#include "uplift/model.hpp"

namespace uplift {

// Per-term mixing weights for the overall objective. l2 is the coefficient
// on the squared parameter norm. Unit weights reproduce the plain sum of
// terms; mmd defaults to 0 for TAR and 1 for the CFR-mmd base.
struct LossWeights {
  double ziln = 1.0;
  double wr = 1.0;
  double cr = 1.0;
  double lu = 1.0;
  double mmd = 0.0;
  double l2 = 1e-5;

  void validate() const {
    for (double w : {ziln, wr, cr, lu, mmd, l2}) {
      if (!(w >= 0.0) || !std::isfinite(w)) fail("loss weights must be finite and >= 0");
    }
  }

  static LossWeights defaults_for(BaseModel base) {
    LossWeights w;
    w.mmd = base == BaseModel::CfrMmd ? 1.0 : 0.0;
    return w;
  }

  nlohmann::json to_json() const {
    return {{"ziln", ziln}, {"wr", wr}, {"cr", cr}, {"lu", lu}, {"mmd", mmd}, {"l2", l2}};
  }

  static LossWeights from_json(const nlohmann::json& j, BaseModel base) {
    LossWeights w = defaults_for(base);
    w.ziln = j.value("ziln", w.ziln);
    w.wr = j.value("wr", w.wr);
    w.cr = j.value("cr", w.cr);
    w.lu = j.value("lu", w.lu);
    w.mmd = j.value("mmd", w.mmd);
    w.l2 = j.value("l2", w.l2);
    w.validate();
    return w;
  }
};

// Unweighted component values; total is the weighted sum. In MSE head mode
// the ziln slot carries the MSE regression loss instead.
struct LossBreakdown {
  double ziln = 0.0;
  double wr_rank = 0.0;
  double cr_rank = 0.0;
  double lu_rank = 0.0;
  double mmd = 0.0;
  double l2 = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const {
    return {{"ziln", ziln},    {"wr_rank", wr_rank}, {"cr_rank", cr_rank},
            {"lu_rank", lu_rank}, {"mmd", mmd},      {"l2", l2},
            {"total", total}};
  }
};

inline LossBreakdown assemble_overall(double ziln, double wr, double cr, double lu, double mmd,
                                      double l2_raw, const LossWeights& w) {
  LossBreakdown b;
  b.ziln = ziln;
  b.wr_rank = wr;
  b.cr_rank = cr;
  b.lu_rank = lu;
  b.mmd = mmd;
  b.l2 = l2_raw;
  b.total = w.ziln * ziln + w.wr * wr + w.cr * cr + w.lu * lu + w.mmd * mmd + w.l2 * l2_raw;
  if (!std::isfinite(b.total)) fail("non-finite overall loss");
  return b;
}

// Zero-inflated lognormal negative log-likelihood for one response:
//   y = 0:  -log(1-p)
//   y > 0:  -log(p) + log(y*sigma*sqrt(2*pi)) + (log y - mu)^2 / (2*sigma^2)
inline double loss_ziln(double y, const ZilnParams& z) {
  if (y < 0.0) fail("loss_ziln: negative response");
  if (y == 0.0) return -std::log1p(-z.p);
  double r = std::log(y) - z.mu;
  return -std::log(z.p) + std::log(y * z.sigma) + kHalfLogTwoPi + r * r / (2.0 * z.sigma * z.sigma);
}

// Same value computed from the head's raw outputs; the cross-entropy part
// uses the fused log-sigmoid so p saturating at 0 or 1 stays finite.
inline double loss_ziln_from_raw(double y, double logit, double mu, double sigma) {
  if (y < 0.0) fail("loss_ziln: negative response");
  if (y == 0.0) return softplus(logit);  // -log(1-p)
  double r = std::log(y) - mu;
  return softplus(-logit) + std::log(y * sigma) + kHalfLogTwoPi + r * r / (2.0 * sigma * sigma);
}

// A within-group pair: predictions and observations for two individuals
// from the same arm.
struct WrPair {
  double yhat_i, yhat_j;
  double y_i, y_j;
};

inline double wr_pair_loss(const WrPair& p) {
  double a = p.yhat_i - p.yhat_j;
  double b = p.y_i - p.y_j;
  if (a * b >= 0.0) return 0.0;
  double d = a - b;
  return d * d;
}

// Mean over pairs (zero with a warning for an empty list).
inline double loss_wr_rank(std::span<const WrPair> pairs) {
  if (pairs.empty()) {
    warn("loss_wr_rank: empty pair list");
    return 0.0;
  }
  double sum = 0.0;
  for (const auto& p : pairs) sum += wr_pair_loss(p);
  return sum / static_cast<double>(pairs.size());
}

// A cross-group pair: one treated individual (prediction and observation)
// against one control individual.
struct CrPair {
  double yhat_t, y_t;
  double yhat_c, y_c;
};

inline double cr_pair_loss(const CrPair& p) {
  double a = p.yhat_t - p.y_c;
  double b = p.y_t - p.yhat_c;
  if (a * b >= 0.0) return 0.0;
  double d = a - b;
  return d * d;
}

inline double loss_cr_rank(std::span<const CrPair> pairs) {
  if (pairs.empty()) {
    warn("loss_cr_rank: empty pair list");
    return 0.0;
  }
  double sum = 0.0;
  for (const auto& p : pairs) sum += cr_pair_loss(p);
  return sum / static_cast<double>(pairs.size());
}

// Listwise uplift ranking loss over the union batch. The softmax runs over
// all tau_hat values (treated then control); observed responses weight the
// log-probabilities, positively for treated and negatively for control:
//   -( mean_t[ y * log softmax(tau) ] - mean_c[ y * log softmax(tau) ] )
inline double loss_lu_rank(std::span<const double> tau_treated, std::span<const double> y_treated,
                           std::span<const double> tau_control,
                           std::span<const double> y_control) {
  if (tau_treated.empty() || tau_control.empty()) {
    fail("loss_lu_rank: both groups must be non-empty");
  }
  if (tau_treated.size() != y_treated.size() || tau_control.size() != y_control.size()) {
    fail("loss_lu_rank: size mismatch");
  }
  double max_tau = -std::numeric_limits<double>::infinity();
  for (double t : tau_treated) max_tau = std::max(max_tau, t);
  for (double t : tau_control) max_tau = std::max(max_tau, t);
  double sum_exp = 0.0;
  for (double t : tau_treated) sum_exp += std::exp(t - max_tau);
  for (double t : tau_control) sum_exp += std::exp(t - max_tau);
  double lse = max_tau + std::log(sum_exp);

  double treated_term = 0.0;
  for (std::size_t i = 0; i < tau_treated.size(); ++i) {
    treated_term += y_treated[i] * (tau_treated[i] - lse);
  }
  treated_term /= static_cast<double>(tau_treated.size());
  double control_term = 0.0;
  for (std::size_t j = 0; j < tau_control.size(); ++j) {
    control_term += y_control[j] * (tau_control[j] - lse);
  }
  control_term /= static_cast<double>(tau_control.size());
  return -(treated_term - control_term);
}

// Squared linear-kernel MMD between the two representation clouds:
// || mean(phi_t) - mean(phi_c) ||^2.
inline double loss_mmd(const Matrix& phi_t, const Matrix& phi_c) {
  if (phi_t.rows == 0 || phi_c.rows == 0) fail("loss_mmd: empty representation set");
  if (phi_t.cols != phi_c.cols) fail("loss_mmd: dimension mismatch");
  double sq = 0.0;
  for (std::size_t k = 0; k < phi_t.cols; ++k) {
    double mt = 0.0, mc = 0.0;
    for (std::size_t i = 0; i < phi_t.rows; ++i) mt += phi_t(i, k);
    for (std::size_t i = 0; i < phi_c.rows; ++i) mc += phi_c(i, k);
    double d = mt / static_cast<double>(phi_t.rows) - mc / static_cast<double>(phi_c.rows);
    sq += d * d;
  }
  return sq;
}

}  // namespace uplift
