#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <json.hpp>

#include "uplift/adam.hpp"
#include "uplift/common.hpp"
#include "uplift/dataset.hpp"
#include "uplift/gradients.hpp"
#include "uplift/losses.hpp"
#include "uplift/metrics.hpp"
#include "uplift/model.hpp"
#include "uplift/rng.hpp"

namespace uplift {

struct TrainConfig {
  std::size_t batch_size = 256;       // B, per group
  std::size_t pair_sample_size = 32;  // S, individuals drawn per group per step
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  LossWeights weights;
  std::size_t metric_buckets = 100;
  double lift_h = 30.0;

  void validate() const {
    if (batch_size < 2) fail("train config: batch_size must be >= 2");
    if (pair_sample_size < 2 || pair_sample_size > batch_size) {
      fail("train config: pair_sample_size must be in [2, batch_size]");
    }
    if (!(learning_rate > 0.0)) fail("train config: learning_rate must be > 0");
    if (patience > max_epochs) fail("train config: patience must be <= max_epochs");
    weights.validate();
  }

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size},
            {"pair_sample_size", pair_sample_size},
            {"learning_rate", learning_rate},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"seed", seed},
            {"weights", weights.to_json()},
            {"metric_buckets", metric_buckets},
            {"lift_h", lift_h}};
  }
};

// Deterministic pair construction: S distinct individuals drawn from each
// group batch, all within-group pairs over each draw, and all ordered
// cross pairs in both directions.
inline PairDraw sample_pairs(std::size_t n_treated, std::size_t n_control, std::size_t s,
                             Rng& rng) {
  if (s > n_treated || s > n_control) {
    fail("sample_pairs: S=", s, " exceeds a batch size (", n_treated, ", ", n_control, ")");
  }
  auto draw_t = rng.sample_without_replacement(n_treated, s);
  auto draw_c = rng.sample_without_replacement(n_control, s);
  PairDraw pairs;
  if (s < 2) warn("sample_pairs: S < 2 leaves no within-group pairs");
  pairs.tt.reserve(s * (s - 1) / 2);
  pairs.cc.reserve(s * (s - 1) / 2);
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = a + 1; b < s; ++b) {
      pairs.tt.emplace_back(draw_t[a], draw_t[b]);
      pairs.cc.emplace_back(draw_c[a], draw_c[b]);
    }
  }
  pairs.tc.reserve(s * s);
  pairs.ct.reserve(s * s);
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = 0; b < s; ++b) {
      pairs.tc.emplace_back(draw_t[a], draw_c[b]);
      pairs.ct.emplace_back(draw_c[a], draw_t[b]);
    }
  }
  return pairs;
}

// Scores every record (both heads) and runs the full evaluation suite.
inline MetricReport evaluate_epoch(const ModelParams& params, const ModelConfig& config,
                                   const Dataset& data, const MetricOptions& opts = {}) {
  if (data.records.empty()) fail("evaluate_epoch: empty dataset");
  std::vector<ScoredSample> scored;
  scored.reserve(data.records.size());
  const std::size_t chunk = 2048;
  for (std::size_t start = 0; start < data.records.size(); start += chunk) {
    std::size_t len = std::min(chunk, data.records.size() - start);
    ForwardOutput out =
        forward(params, config, std::span(data.records).subspan(start, len));
    for (std::size_t i = 0; i < len; ++i) {
      const auto& rec = data.records[start + i];
      ScoredSample s;
      s.tau_hat = out.response(1, i) - out.response(0, i);
      s.treatment = rec.treatment;
      s.response = rec.response;
      s.yhat_observed = out.response(rec.treatment, i);
      scored.push_back(s);
    }
  }
  return compute_metrics(scored, opts);
}

struct EpochRecord {
  LossBreakdown train_loss;  // component-wise mean over the epoch's steps
  MetricReport val_metrics;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // argmax of validation normalized AUUC
  std::uint64_t seed = 0;
  nlohmann::json config_echo;

  nlohmann::json to_json() const {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : epochs) {
      eps.push_back({{"train_loss", e.train_loss.to_json()},
                     {"val_metrics", e.val_metrics.to_json(false)}});
    }
    return {{"epochs", eps}, {"best_epoch", best_epoch}, {"seed", seed}, {"config", config_echo}};
  }
};

struct TrainResult {
  ModelParams params;  // best-validation-AUUC snapshot
  TrainHistory history;
};

// One full optimization run. Per epoch the two groups are shuffled
// independently and consumed in paired batches of B; the smaller group's
// shuffled stream cycles, and the epoch ends when fewer than B records of
// the larger group remain. Model selection is by validation normalized
// AUUC with early stopping after `patience` epochs without improvement.
inline TrainResult train(const Dataset& train_data, const Dataset& val_data,
                         const ModelConfig& model_config, const TrainConfig& train_config) {
  model_config.validate();
  train_config.validate();
  auto [train_t, train_c] = partition_by_treatment(train_data);
  const std::size_t nt = train_t.size(), nc = train_c.size();
  if (nt < train_config.batch_size || nc < train_config.batch_size) {
    fail("train: each group needs at least batch_size records (treated ", nt, ", control ", nc,
         ", B ", train_config.batch_size, ")");
  }
  {
    auto [vt, vc] = partition_by_treatment(val_data);
    if (vt.records.empty() || vc.records.empty()) fail("train: validation set needs both groups");
  }

  Rng root(train_config.seed);
  Rng init_rng = root.fork(0x1);
  Rng shuffle_rng = root.fork(0x2);
  Rng pair_rng = root.fork(0x3);

  ModelParams params = init_model(model_config, train_data.schema, init_rng.next_u64());
  AdamState adam(params.parameter_count());
  std::vector<double> grad = zero_gradients(params);

  const std::size_t big = std::max(nt, nc);
  const std::size_t steps_per_epoch = big / train_config.batch_size;
  const std::size_t B = train_config.batch_size;

  std::vector<std::size_t> order_t(nt), order_c(nc);
  MetricOptions val_opts{train_config.metric_buckets, train_config.lift_h, false};

  TrainHistory history;
  history.seed = train_config.seed;
  history.config_echo = {{"model", model_config.to_json()}, {"train", train_config.to_json()}};

  ModelParams best_params = params;
  double best_auuc = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_since_best = 0;

  for (std::size_t epoch = 0; epoch < train_config.max_epochs; ++epoch) {
    std::iota(order_t.begin(), order_t.end(), std::size_t{0});
    std::iota(order_c.begin(), order_c.end(), std::size_t{0});
    shuffle_rng.shuffle(order_t);
    shuffle_rng.shuffle(order_c);

    LossBreakdown epoch_loss;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      StepBatch batch;
      batch.treated.reserve(B);
      batch.control.reserve(B);
      for (std::size_t k = 0; k < B; ++k) {
        std::size_t pos = step * B + k;
        batch.treated.push_back(&train_t.records[order_t[pos % nt]]);
        batch.control.push_back(&train_c.records[order_c[pos % nc]]);
      }
      batch.pairs = sample_pairs(B, B, train_config.pair_sample_size, pair_rng);

      std::fill(grad.begin(), grad.end(), 0.0);
      LossBreakdown losses = compute_step(params, model_config, batch, train_config.weights, &grad);
      if (!std::isfinite(losses.total) || std::abs(losses.total) > 1e12) {
        fail("train: divergence at epoch ", epoch, " step ", step, " (total loss ", losses.total,
             ")");
      }
      adam_step(params.data, grad, adam, train_config.learning_rate, train_config.adam_beta1,
                train_config.adam_beta2, train_config.adam_eps);

      epoch_loss.ziln += losses.ziln;
      epoch_loss.wr_rank += losses.wr_rank;
      epoch_loss.cr_rank += losses.cr_rank;
      epoch_loss.lu_rank += losses.lu_rank;
      epoch_loss.mmd += losses.mmd;
      epoch_loss.l2 += losses.l2;
      epoch_loss.total += losses.total;
    }
    const double inv_steps = 1.0 / static_cast<double>(steps_per_epoch);
    epoch_loss.ziln *= inv_steps;
    epoch_loss.wr_rank *= inv_steps;
    epoch_loss.cr_rank *= inv_steps;
    epoch_loss.lu_rank *= inv_steps;
    epoch_loss.mmd *= inv_steps;
    epoch_loss.l2 *= inv_steps;
    epoch_loss.total *= inv_steps;

    MetricReport val = evaluate_epoch(params, model_config, val_data, val_opts);
    history.epochs.push_back({epoch_loss, val});

    double auuc = std::isfinite(val.auuc_norm) ? val.auuc_norm
                                               : -std::numeric_limits<double>::infinity();
    if (auuc > best_auuc) {
      best_auuc = auuc;
      best_epoch = epoch;
      best_params = params;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= train_config.patience) break;
    }
  }

  history.best_epoch = best_epoch;
  return {std::move(best_params), std::move(history)};
}

}  // namespace uplift
