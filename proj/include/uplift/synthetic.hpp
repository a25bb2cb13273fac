#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uplift/common.hpp"
#include "uplift/dataset.hpp"
#include "uplift/math.hpp"
#include "uplift/rng.hpp"

namespace uplift {

// Randomized-trial generator with a zero-inflated lognormal response per
// arm. Covariates are uniform on [0,1]^d, treatment is a fair coin
// independent of covariates, and for arm t the response is 0 with
// probability 1 - p_t(x) and exp(Normal(mu_t(x), sigma^2)) otherwise, with
//   p_t(x)  = sigmoid(a_t . x + b_t)
//   mu_t(x) = c_t . x + d_t
// The exact effect p1*exp(mu1 + sigma^2/2) - p0*exp(mu0 + sigma^2/2) is
// recorded per row, so rank metrics can be scored against ground truth.

struct ArmCoefficients {
  std::vector<double> slope_p;   // a_t
  double intercept_p = 0.0;      // b_t
  std::vector<double> slope_mu;  // c_t
  double intercept_mu = 0.0;     // d_t
};

struct SyntheticConfig {
  std::size_t n = 20000;
  std::size_t d_numeric = 8;
  double sigma = 1.0;
  std::uint64_t coef_seed = 7;

  void validate() const {
    if (n < 1) fail("synthetic: n must be >= 1");
    if (d_numeric < 1) fail("synthetic: d_numeric must be >= 1");
    if (!(sigma > 0.0)) fail("synthetic: sigma must be > 0");
  }
};

struct RecordTruth {
  double cate = 0.0;
  double p1 = 0.0, mu1 = 0.0;
  double p0 = 0.0, mu0 = 0.0;
  double sigma = 0.0;
};

struct SyntheticTruth {
  std::vector<RecordTruth> records;
};

inline ArmCoefficients draw_arm_coefficients(std::size_t d, Rng& rng) {
  ArmCoefficients c;
  c.slope_p.resize(d);
  c.slope_mu.resize(d);
  for (auto& v : c.slope_p) v = rng.uniform(-1.0, 1.0);
  c.intercept_p = rng.uniform(-0.5, 0.5);
  for (auto& v : c.slope_mu) v = rng.uniform(-1.0, 1.0);
  c.intercept_mu = rng.uniform(-0.5, 0.5);
  return c;
}

inline std::pair<Dataset, SyntheticTruth> generate_synthetic(const SyntheticConfig& config,
                                                             const ArmCoefficients& treated,
                                                             const ArmCoefficients& control,
                                                             std::uint64_t seed) {
  config.validate();
  if (treated.slope_p.size() != config.d_numeric || treated.slope_mu.size() != config.d_numeric ||
      control.slope_p.size() != config.d_numeric || control.slope_mu.size() != config.d_numeric) {
    fail("synthetic: coefficient dimension mismatch");
  }

  Dataset ds;
  for (std::size_t j = 0; j < config.d_numeric; ++j) {
    ds.schema.numeric_columns.push_back("x" + std::to_string(j));
  }
  ds.schema.treatment_column = "treatment";
  ds.schema.treatment_one = "1";
  ds.schema.treatment_zero = "0";
  ds.schema.response_column = "response";

  SyntheticTruth truth;
  ds.records.reserve(config.n);
  truth.records.reserve(config.n);

  const double half_var = 0.5 * config.sigma * config.sigma;
  Rng rng(seed);
  for (std::size_t i = 0; i < config.n; ++i) {
    SampleRecord rec;
    rec.treatment = rng.bernoulli(0.5) ? 1 : 0;
    rec.numeric.resize(config.d_numeric);
    for (auto& x : rec.numeric) x = rng.uniform();

    auto affine = [&](const std::vector<double>& slope, double intercept) {
      double z = intercept;
      for (std::size_t j = 0; j < slope.size(); ++j) z += slope[j] * rec.numeric[j];
      return z;
    };
    RecordTruth t;
    t.p1 = sigmoid(affine(treated.slope_p, treated.intercept_p));
    t.mu1 = affine(treated.slope_mu, treated.intercept_mu);
    t.p0 = sigmoid(affine(control.slope_p, control.intercept_p));
    t.mu0 = affine(control.slope_mu, control.intercept_mu);
    t.sigma = config.sigma;
    t.cate = t.p1 * std::exp(t.mu1 + half_var) - t.p0 * std::exp(t.mu0 + half_var);

    double p = rec.treatment == 1 ? t.p1 : t.p0;
    double mu = rec.treatment == 1 ? t.mu1 : t.mu0;
    if (rng.bernoulli(p)) {
      rec.response = std::exp(rng.normal(mu, config.sigma));
    } else {
      rec.response = 0.0;
    }
    ds.records.push_back(std::move(rec));
    truth.records.push_back(t);
  }
  return {std::move(ds), std::move(truth)};
}

inline std::pair<Dataset, SyntheticTruth> generate_synthetic(const SyntheticConfig& config,
                                                             std::uint64_t seed) {
  config.validate();
  Rng coef_rng(config.coef_seed);
  ArmCoefficients treated = draw_arm_coefficients(config.d_numeric, coef_rng);
  ArmCoefficients control = draw_arm_coefficients(config.d_numeric, coef_rng);
  return generate_synthetic(config, treated, control, seed);
}

inline void write_truth_csv(const SyntheticTruth& truth, const std::string& path) {
  csv::Table table;
  table.header = {"index", "true_cate"};
  table.rows.reserve(truth.records.size());
  for (std::size_t i = 0; i < truth.records.size(); ++i) {
    table.rows.push_back({std::to_string(i), csv::format_double(truth.records[i].cate)});
  }
  csv::write_file(table, path);
}

}  // namespace uplift
