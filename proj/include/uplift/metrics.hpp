#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/csv.hpp"

namespace uplift {

// One scored individual: predicted uplift, group, observed response, and
// optionally the observed-arm point prediction (for MAPE) and the known
// true uplift (synthetic data only).
struct ScoredSample {
  double tau_hat = 0.0;
  int treatment = 0;
  double response = 0.0;
  std::optional<double> yhat_observed;
  std::optional<double> true_uplift;
};

// Stable descending order by tau_hat; ties keep original positions.
inline std::vector<std::size_t> rank_descending(std::span<const ScoredSample> samples) {
  if (samples.empty()) fail("rank_descending: empty input");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].tau_hat > samples[b].tau_hat;
  });
  return order;
}

inline std::vector<ScoredSample> ranked_copy(std::span<const ScoredSample> samples) {
  auto order = rank_descending(samples);
  std::vector<ScoredSample> out;
  out.reserve(samples.size());
  for (auto i : order) out.push_back(samples[i]);
  return out;
}

struct BucketPoint {
  double fraction = 0.0;  // p / buckets
  double value = 0.0;     // V_u or V_q; meaningless when !defined
  bool defined = true;
  std::size_t n_treated = 0, n_control = 0;  // cumulative counts at this k
  double r_treated = 0.0, r_control = 0.0;   // cumulative response sums
};

struct CurvePoints {
  std::vector<BucketPoint> points;
};

enum class CurveKind { Uplift, Qini };

// Cumulative curve over the ranked samples, evaluated at the bucket
// boundaries k = floor(n*p/buckets) (the final bucket covers all n).
// Uplift:  V_u = (R_T/N_T - R_C/N_C) * (N_T + N_C)
// Qini:    V_q = R_T - R_C * N_T/N_C
// A prefix missing either group makes that bucket undefined (flagged, never
// zeroed).
inline CurvePoints curve_values(std::span<const ScoredSample> ranked, CurveKind kind,
                                std::size_t buckets = 100) {
  if (ranked.empty()) fail("curve_values: empty input");
  if (buckets < 1) fail("curve_values: buckets must be >= 1");
  const std::size_t n = ranked.size();
  CurvePoints curve;
  curve.points.reserve(buckets);
  std::size_t k = 0;
  std::size_t nt = 0, nc = 0;
  double rt = 0.0, rc = 0.0;
  for (std::size_t p = 1; p <= buckets; ++p) {
    std::size_t target = p == buckets ? n : (n * p) / buckets;
    for (; k < target; ++k) {
      if (ranked[k].treatment == 1) {
        ++nt;
        rt += ranked[k].response;
      } else {
        ++nc;
        rc += ranked[k].response;
      }
    }
    BucketPoint b;
    b.fraction = static_cast<double>(p) / static_cast<double>(buckets);
    b.n_treated = nt;
    b.n_control = nc;
    b.r_treated = rt;
    b.r_control = rc;
    if (nt == 0 || nc == 0) {
      b.defined = false;
    } else if (kind == CurveKind::Uplift) {
      b.value = (rt / static_cast<double>(nt) - rc / static_cast<double>(nc)) *
                static_cast<double>(nt + nc);
    } else {
      b.value = rt - rc * (static_cast<double>(nt) / static_cast<double>(nc));
    }
    curve.points.push_back(b);
  }
  return curve;
}

inline CurvePoints uplift_curve_values(std::span<const ScoredSample> ranked,
                                       std::size_t buckets = 100) {
  return curve_values(ranked, CurveKind::Uplift, buckets);
}

inline CurvePoints qini_curve_values(std::span<const ScoredSample> ranked,
                                     std::size_t buckets = 100) {
  return curve_values(ranked, CurveKind::Qini, buckets);
}

struct AreaResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
  std::vector<std::string> flags;
};

// Normalized area: bucket-mean of V divided by V at full population.
// Undefined buckets are dropped from the mean (and flagged); a final value
// <= 0 leaves the metric undefined since the normalization needs a positive
// full-population effect.
inline AreaResult normalized_area(const CurvePoints& curve, const std::string& label) {
  AreaResult res;
  if (curve.points.empty()) {
    res.flags.push_back(label + ":empty_curve");
    return res;
  }
  const BucketPoint& last = curve.points.back();
  if (!last.defined) {
    res.flags.push_back(label + ":final_bucket_undefined");
    return res;
  }
  if (!(last.value > 0.0)) {
    res.flags.push_back(label + ":nonpositive_full_population_value");
    return res;
  }
  double sum = 0.0;
  std::size_t defined = 0, undefined = 0;
  for (const auto& b : curve.points) {
    if (!b.defined) {
      ++undefined;
      continue;
    }
    sum += b.value;
    ++defined;
  }
  if (undefined > 0) {
    res.flags.push_back(concat(label, ":", undefined, "_undefined_buckets_excluded"));
  }
  res.value = sum / (static_cast<double>(defined) * last.value);
  res.defined = true;
  return res;
}

struct KrccResult {
  double value = 0.0;
  std::vector<std::string> flags;
};

// Kendall tau-b between the predicted-uplift bucket order and the
// per-bucket true uplift. Samples are ranked by tau_hat descending and cut
// into `buckets` contiguous slices; each slice's uplift is the treated mean
// minus the control mean (or the mean known true uplift when present).
// Slices missing a group are merged into the following one (the last merges
// backward). A pair is concordant when the higher-ranked bucket has the
// strictly larger uplift.
inline KrccResult krcc(std::span<const ScoredSample> samples, std::size_t buckets = 100,
                       bool use_true_uplift = false) {
  if (samples.size() < 2) fail("krcc: need at least 2 samples");
  KrccResult res;
  auto order = rank_descending(samples);

  double tau_min = samples[order.front()].tau_hat;
  double tau_max = tau_min;
  for (const auto& s : samples) {
    tau_min = std::min(tau_min, s.tau_hat);
    tau_max = std::max(tau_max, s.tau_hat);
  }
  if (tau_min == tau_max) {
    res.flags.push_back("krcc:constant_predictions");
    res.value = 0.0;
    return res;
  }

  const std::size_t n = samples.size();
  struct Acc {
    std::size_t nt = 0, nc = 0, count = 0;
    double rt = 0.0, rc = 0.0, truth_sum = 0.0;
    void absorb(const Acc& o) {
      nt += o.nt;
      nc += o.nc;
      count += o.count;
      rt += o.rt;
      rc += o.rc;
      truth_sum += o.truth_sum;
    }
    bool usable(bool truth) const { return truth ? count > 0 : (nt > 0 && nc > 0); }
    double uplift(bool truth) const {
      if (truth) return truth_sum / static_cast<double>(count);
      return rt / static_cast<double>(nt) - rc / static_cast<double>(nc);
    }
  };
  std::vector<Acc> emitted;
  Acc carry;
  for (std::size_t b = 0; b < buckets; ++b) {
    std::size_t lo = (n * b) / buckets;
    std::size_t hi = b + 1 == buckets ? n : (n * (b + 1)) / buckets;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& s = samples[order[i]];
      ++carry.count;
      if (use_true_uplift) {
        if (!s.true_uplift) fail("krcc: true uplift requested but missing");
        carry.truth_sum += *s.true_uplift;
      }
      if (s.treatment == 1) {
        ++carry.nt;
        carry.rt += s.response;
      } else {
        ++carry.nc;
        carry.rc += s.response;
      }
    }
    if (carry.usable(use_true_uplift)) {
      emitted.push_back(carry);
      carry = Acc{};
    }
    // otherwise the slice folds forward into the next one
  }
  if (carry.count > 0) {
    // unusable tail merges backward into the last emitted bucket
    if (emitted.empty()) fail("krcc: no bucket contains both groups");
    emitted.back().absorb(carry);
  }
  if (emitted.size() < buckets) {
    res.flags.push_back(concat("krcc:", buckets - emitted.size(), "_buckets_merged"));
  }
  if (emitted.size() < 2) fail("krcc: fewer than 2 buckets after merging");
  std::vector<double> u;
  u.reserve(emitted.size());
  for (const auto& acc : emitted) u.push_back(acc.uplift(use_true_uplift));

  // x = bucket rank (descending predicted uplift), y = u. x has no ties.
  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    for (std::size_t j = i + 1; j < u.size(); ++j) {
      if (u[i] > u[j]) ++concordant;
      else if (u[i] < u[j]) ++discordant;
    }
  }
  double n0 = static_cast<double>(u.size()) * (static_cast<double>(u.size()) - 1.0) / 2.0;
  std::vector<double> sorted_u(u);
  std::sort(sorted_u.begin(), sorted_u.end());
  double tie_pairs = 0.0;
  for (std::size_t i = 0; i < sorted_u.size();) {
    std::size_t j = i;
    while (j < sorted_u.size() && sorted_u[j] == sorted_u[i]) ++j;
    double t = static_cast<double>(j - i);
    tie_pairs += t * (t - 1.0) / 2.0;
    i = j;
  }
  double denom = std::sqrt(n0 * (n0 - tie_pairs));
  if (denom == 0.0) {
    res.flags.push_back("krcc:all_bucket_uplifts_tied");
    res.value = 0.0;
    return res;
  }
  res.value = (static_cast<double>(concordant) - static_cast<double>(discordant)) / denom;
  return res;
}

struct LiftResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
  std::vector<std::string> flags;
};

// Treated-minus-control mean response inside the top h percent by
// predicted uplift.
inline LiftResult lift_at_h(std::span<const ScoredSample> samples, double h) {
  if (!(h > 0.0) || h > 100.0) fail("lift_at_h: h must be in (0, 100]");
  if (samples.empty()) fail("lift_at_h: empty input");
  auto order = rank_descending(samples);
  auto take = static_cast<std::size_t>(
      std::ceil(static_cast<double>(samples.size()) * h / 100.0));
  take = std::min(take, samples.size());
  std::size_t nt = 0, nc = 0;
  double rt = 0.0, rc = 0.0;
  for (std::size_t i = 0; i < take; ++i) {
    const auto& s = samples[order[i]];
    if (s.treatment == 1) {
      ++nt;
      rt += s.response;
    } else {
      ++nc;
      rc += s.response;
    }
  }
  LiftResult res;
  if (nt == 0 || nc == 0) {
    res.flags.push_back("lift:slice_missing_a_group");
    return res;
  }
  res.value = rt / static_cast<double>(nt) - rc / static_cast<double>(nc);
  res.defined = true;
  return res;
}

struct MapeResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
  std::vector<std::string> flags;
};

// Mean |yhat - y| / y over observed-arm predictions with y > 0.
inline MapeResult mape(std::span<const ScoredSample> samples) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    if (!s.yhat_observed || s.response <= 0.0) continue;
    sum += std::abs(*s.yhat_observed - s.response) / s.response;
    ++count;
  }
  MapeResult res;
  if (count == 0) {
    res.flags.push_back("mape:no_positive_response_records");
    return res;
  }
  res.value = sum / static_cast<double>(count);
  res.defined = true;
  return res;
}

struct MetricOptions {
  std::size_t buckets = 100;
  double lift_h = 30.0;
  bool use_true_uplift = false;
};

struct MetricReport {
  double auuc_norm = std::numeric_limits<double>::quiet_NaN();
  double auqc_norm = std::numeric_limits<double>::quiet_NaN();
  double krcc = 0.0;
  double lift_at_h = std::numeric_limits<double>::quiet_NaN();
  double lift_h_percent = 30.0;
  double mape = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> flags;
  CurvePoints uplift_curve;
  CurvePoints qini_curve;

  nlohmann::json to_json(bool include_curves = true) const {
    auto num_or_null = [](double v) {
      return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
    };
    nlohmann::json j;
    j["auuc_norm"] = num_or_null(auuc_norm);
    j["auqc_norm"] = num_or_null(auqc_norm);
    j["krcc"] = num_or_null(krcc);
    j["lift_at_h"] = num_or_null(lift_at_h);
    j["lift_h_percent"] = lift_h_percent;
    j["mape"] = num_or_null(mape);
    j["flags"] = flags;
    if (include_curves) {
      auto curve_json = [&](const CurvePoints& c) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& b : c.points) {
          arr.push_back({{"fraction", b.fraction},
                         {"value", b.defined ? nlohmann::json(b.value) : nlohmann::json(nullptr)},
                         {"n_treated", b.n_treated},
                         {"n_control", b.n_control},
                         {"r_treated", b.r_treated},
                         {"r_control", b.r_control}});
        }
        return arr;
      };
      j["uplift_curve"] = curve_json(uplift_curve);
      j["qini_curve"] = curve_json(qini_curve);
    }
    return j;
  }
};

inline MetricReport compute_metrics(std::span<const ScoredSample> samples,
                                    const MetricOptions& opts = {}) {
  MetricReport report;
  report.lift_h_percent = opts.lift_h;
  auto ranked = ranked_copy(samples);
  report.uplift_curve = uplift_curve_values(ranked, opts.buckets);
  report.qini_curve = qini_curve_values(ranked, opts.buckets);
  auto append = [&](const std::vector<std::string>& flags) {
    report.flags.insert(report.flags.end(), flags.begin(), flags.end());
  };
  AreaResult auuc = normalized_area(report.uplift_curve, "auuc");
  report.auuc_norm = auuc.value;
  append(auuc.flags);
  AreaResult auqc = normalized_area(report.qini_curve, "auqc");
  report.auqc_norm = auqc.value;
  append(auqc.flags);
  KrccResult kr = krcc(samples, opts.buckets, opts.use_true_uplift);
  report.krcc = kr.value;
  append(kr.flags);
  LiftResult lift = lift_at_h(samples, opts.lift_h);
  report.lift_at_h = lift.value;
  append(lift.flags);
  MapeResult mp = mape(samples);
  report.mape = mp.value;
  append(mp.flags);
  return report;
}

// CSV export of one curve: header plus one row per bucket. Undefined
// buckets leave the value cell empty and set the flag column.
inline void export_curves(const CurvePoints& curve, const std::string& path) {
  csv::Table table;
  table.header = {"fraction", "value", "n_treated", "n_control", "r_treated", "r_control", "flag"};
  table.rows.reserve(curve.points.size());
  for (const auto& b : curve.points) {
    table.rows.push_back({csv::format_double(b.fraction),
                          b.defined ? csv::format_double(b.value) : std::string{},
                          std::to_string(b.n_treated), std::to_string(b.n_control),
                          csv::format_double(b.r_treated), csv::format_double(b.r_control),
                          b.defined ? std::string{} : std::string{"undefined"}});
  }
  csv::write_file(table, path);
}

}  // namespace uplift
