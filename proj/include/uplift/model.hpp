#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/dataset.hpp"
#include "uplift/math.hpp"
#include "uplift/matrix.hpp"
#include "uplift/rng.hpp"

namespace uplift {

enum class HeadMode { Ziln, MseScalar };
enum class BaseModel { Tar, CfrMmd };
enum class Activation { Relu, Elu };

inline std::string to_string(HeadMode m) { return m == HeadMode::Ziln ? "ziln" : "mse"; }
inline std::string to_string(BaseModel b) { return b == BaseModel::Tar ? "tar" : "cfr_mmd"; }
inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "elu"; }

inline HeadMode head_mode_from_string(const std::string& s) {
  if (s == "ziln") return HeadMode::Ziln;
  if (s == "mse") return HeadMode::MseScalar;
  fail("unknown head_mode '", s, "'");
}
inline BaseModel base_model_from_string(const std::string& s) {
  if (s == "tar") return BaseModel::Tar;
  if (s == "cfr_mmd") return BaseModel::CfrMmd;
  fail("unknown base_model '", s, "'");
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "elu") return Activation::Elu;
  fail("unknown activation '", s, "'");
}

struct ModelConfig {
  std::size_t embedding_dim = 10;
  std::vector<std::size_t> representation_layers{64, 32};
  std::vector<std::size_t> head_layers{16};
  HeadMode head_mode = HeadMode::Ziln;
  BaseModel base_model = BaseModel::Tar;
  Activation activation = Activation::Elu;
  double sigma_floor = 1e-4;

  std::size_t head_output_dim() const { return head_mode == HeadMode::Ziln ? 3 : 1; }

  void validate() const {
    if (embedding_dim < 1) fail("model config: embedding_dim must be >= 1");
    for (auto w : representation_layers) {
      if (w < 1) fail("model config: zero-width representation layer");
    }
    for (auto w : head_layers) {
      if (w < 1) fail("model config: zero-width head layer");
    }
    if (!(sigma_floor > 0.0)) fail("model config: sigma_floor must be > 0");
  }

  nlohmann::json to_json() const {
    return {{"embedding_dim", embedding_dim},
            {"representation_layers", representation_layers},
            {"head_layers", head_layers},
            {"head_mode", to_string(head_mode)},
            {"base_model", to_string(base_model)},
            {"activation", to_string(activation)},
            {"sigma_floor", sigma_floor}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.representation_layers = j.value("representation_layers", c.representation_layers);
    c.head_layers = j.value("head_layers", c.head_layers);
    c.head_mode = head_mode_from_string(j.value("head_mode", to_string(c.head_mode)));
    c.base_model = base_model_from_string(j.value("base_model", to_string(c.base_model)));
    c.activation = activation_from_string(j.value("activation", to_string(c.activation)));
    c.sigma_floor = j.value("sigma_floor", c.sigma_floor);
    c.validate();
    return c;
  }
};

// The (p, mu, sigma) triple a response head emits for one individual.
struct ZilnParams {
  double p = 0.5;
  double mu = 0.0;
  double sigma = 1.0;
};

inline constexpr double kMeanExponentClamp = 60.0;

// Distribution mean p * exp(mu + sigma^2/2); the exponent is clamped so a
// wild early-training sigma cannot overflow to infinity.
inline double ziln_mean(const ZilnParams& z) {
  double e = z.mu + 0.5 * z.sigma * z.sigma;
  if (e > kMeanExponentClamp) e = kMeanExponentClamp;
  return z.p * std::exp(e);
}

inline ZilnParams ziln_from_raw(double logit, double mu, double sigma_raw, double sigma_floor) {
  return {sigmoid(logit), mu, softplus(sigma_raw) + sigma_floor};
}

// One named tensor inside the flat parameter vector.
struct TensorSpec {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0, cols = 0;  // cols == 1 for biases
  bool regularized = false;        // weights and embeddings yes, biases no

  std::size_t size() const { return rows * cols; }
};

// All trainable state in one flat vector with named views: embeddings, the
// shared representation stack, and the two response heads. Flat storage
// keeps Adam, L2, serialization and finite differencing trivial.
class ModelParams {
 public:
  std::vector<double> data;
  std::vector<TensorSpec> specs;

  // structure (derived from config + schema at init)
  std::size_t n_numeric = 0;
  std::size_t embedding_dim = 0;
  std::vector<std::size_t> vocab_sizes;
  std::vector<std::size_t> rep_widths;   // hidden widths only
  std::vector<std::size_t> head_widths;  // hidden widths only
  std::size_t head_out_dim = 3;

  std::vector<std::size_t> emb_idx;
  std::vector<std::size_t> rep_w_idx, rep_b_idx;
  std::array<std::vector<std::size_t>, 2> head_w_idx, head_b_idx;  // [arm], 1 = treated

  std::size_t input_dim() const { return n_numeric + vocab_sizes.size() * embedding_dim; }
  std::size_t representation_dim() const {
    return rep_widths.empty() ? input_dim() : rep_widths.back();
  }

  std::span<double> tensor(std::size_t i) {
    const auto& s = specs[i];
    return {data.data() + s.offset, s.size()};
  }
  std::span<const double> tensor(std::size_t i) const {
    const auto& s = specs[i];
    return {data.data() + s.offset, s.size()};
  }

  std::size_t parameter_count() const { return data.size(); }

  // Sum of squares over weights and embeddings (biases excluded).
  double l2_norm_squared() const {
    double sum = 0.0;
    for (const auto& s : specs) {
      if (!s.regularized) continue;
      for (std::size_t k = 0; k < s.size(); ++k) {
        double v = data[s.offset + k];
        sum += v * v;
      }
    }
    return sum;
  }

  void check_finite() const {
    for (const auto& s : specs) {
      for (std::size_t k = 0; k < s.size(); ++k) {
        if (!std::isfinite(data[s.offset + k])) {
          fail("non-finite parameter in tensor '", s.name, "' at index ", k);
        }
      }
    }
  }

  // Locates the tensor containing flat index k; used in diagnostics.
  std::string locate(std::size_t k) const {
    for (const auto& s : specs) {
      if (k >= s.offset && k < s.offset + s.size()) {
        return concat(s.name, "[", k - s.offset, "]");
      }
    }
    return "<out of range>";
  }
};

namespace detail {

inline std::size_t add_tensor(ModelParams& p, const std::string& name, std::size_t rows,
                              std::size_t cols, bool regularized) {
  TensorSpec s{name, p.data.size(), rows, cols, regularized};
  p.data.resize(p.data.size() + s.size(), 0.0);
  p.specs.push_back(s);
  return p.specs.size() - 1;
}

}  // namespace detail

// Scaled-uniform init (bound sqrt(6/(fan_in+fan_out))), zero biases,
// deterministic under the seed.
inline ModelParams init_model(const ModelConfig& config, const FeatureSchema& schema,
                              std::uint64_t seed) {
  config.validate();
  schema.validate();

  ModelParams p;
  p.n_numeric = schema.numeric_columns.size();
  p.embedding_dim = config.embedding_dim;
  for (const auto& col : schema.categorical_columns) {
    if (col.vocab.empty()) fail("init_model: vocabulary missing for column '", col.name, "'");
    p.vocab_sizes.push_back(col.vocab.size());
  }
  p.rep_widths = config.representation_layers;
  p.head_widths = config.head_layers;
  p.head_out_dim = config.head_output_dim();
  if (p.input_dim() == 0) fail("init_model: schema has no features");

  for (std::size_t c = 0; c < p.vocab_sizes.size(); ++c) {
    p.emb_idx.push_back(detail::add_tensor(p, "embedding." + schema.categorical_columns[c].name,
                                           p.vocab_sizes[c], p.embedding_dim, true));
  }
  std::size_t in = p.input_dim();
  for (std::size_t l = 0; l < p.rep_widths.size(); ++l) {
    std::size_t out = p.rep_widths[l];
    p.rep_w_idx.push_back(detail::add_tensor(p, concat("rep.", l, ".weight"), out, in, true));
    p.rep_b_idx.push_back(detail::add_tensor(p, concat("rep.", l, ".bias"), out, 1, false));
    in = out;
  }
  const std::size_t rep_out = p.representation_dim();
  const std::array<std::string, 2> head_name{"head_c", "head_t"};
  for (int arm : {1, 0}) {  // treated head tensors first, matching the forward order
    std::size_t hin = rep_out;
    for (std::size_t l = 0; l < p.head_widths.size(); ++l) {
      std::size_t out = p.head_widths[l];
      p.head_w_idx[arm].push_back(
          detail::add_tensor(p, concat(head_name[arm], ".", l, ".weight"), out, hin, true));
      p.head_b_idx[arm].push_back(
          detail::add_tensor(p, concat(head_name[arm], ".", l, ".bias"), out, 1, false));
      hin = out;
    }
    p.head_w_idx[arm].push_back(detail::add_tensor(
        p, concat(head_name[arm], ".", p.head_widths.size(), ".weight"), p.head_out_dim, hin, true));
    p.head_b_idx[arm].push_back(detail::add_tensor(
        p, concat(head_name[arm], ".", p.head_widths.size(), ".bias"), p.head_out_dim, 1, false));
  }

  Rng rng(seed);
  for (std::size_t i = 0; i < p.specs.size(); ++i) {
    const auto& s = p.specs[i];
    if (s.cols == 1 && !s.regularized) continue;  // biases stay zero
    double bound = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
    auto view = p.tensor(i);
    for (auto& v : view) v = rng.uniform(-bound, bound);
  }
  return p;
}

// Zero-valued gradient buffer matching the parameter layout.
inline std::vector<double> zero_gradients(const ModelParams& p) {
  return std::vector<double>(p.data.size(), 0.0);
}

inline double activate(Activation a, double x) {
  if (a == Activation::Relu) return x > 0.0 ? x : 0.0;
  return x > 0.0 ? x : std::expm1(x);  // ELU, alpha = 1
}

inline double activate_grad(Activation a, double pre) {
  if (a == Activation::Relu) return pre > 0.0 ? 1.0 : 0.0;
  return pre > 0.0 ? 1.0 : std::exp(pre);
}

// Per-batch activations kept for the backward pass. Rows: treated samples
// first, then control (the trainer's union batch), or any order for pure
// evaluation.
struct ForwardCache {
  std::size_t batch = 0;
  Matrix input;
  std::vector<Matrix> rep_pre, rep_act;
  struct HeadCache {
    std::vector<Matrix> pre, act;
    Matrix out;  // raw outputs: (logit, mu, sigma_raw) or (scalar)
  };
  std::array<HeadCache, 2> heads;  // [arm]

  const Matrix& phi() const { return rep_act.empty() ? input : rep_act.back(); }
};

namespace detail {

inline void affine_forward(const Matrix& in, const ModelParams& p, std::size_t w_idx,
                           std::size_t b_idx, Matrix& out) {
  const auto& ws = p.specs[w_idx];
  auto W = p.tensor(w_idx);
  auto b = p.tensor(b_idx);
  const std::size_t O = ws.rows, I = ws.cols;
  out = Matrix(in.rows, O);
  for (std::size_t i = 0; i < in.rows; ++i) {
    const double* x = in.row(i);
    double* y = out.row(i);
    for (std::size_t o = 0; o < O; ++o) {
      const double* w = W.data() + o * I;
      double acc = b[o];
      for (std::size_t k = 0; k < I; ++k) acc += w[k] * x[k];
      y[o] = acc;
    }
  }
}

inline void apply_activation(Activation a, const Matrix& pre, Matrix& act) {
  act = Matrix(pre.rows, pre.cols);
  for (std::size_t k = 0; k < pre.v.size(); ++k) act.v[k] = activate(a, pre.v[k]);
}

inline void check_matrix_finite(const Matrix& m, const char* stage, std::size_t layer) {
  for (double x : m.v) {
    if (!std::isfinite(x)) fail("non-finite value in ", stage, " layer ", layer);
  }
}

}  // namespace detail

// Builds the input row (numeric features then looked-up embeddings) and runs
// the representation stack and both heads. Both heads are evaluated for
// every sample regardless of its observed treatment.
inline ForwardCache forward_cached(const ModelParams& p, const ModelConfig& config,
                                   std::span<const SampleRecord* const> rows) {
  if (rows.empty()) fail("forward: empty batch");
  ForwardCache cache;
  cache.batch = rows.size();
  cache.input = Matrix(rows.size(), p.input_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SampleRecord& rec = *rows[i];
    if (rec.numeric.size() != p.n_numeric || rec.categorical.size() != p.vocab_sizes.size()) {
      fail("forward: record feature counts do not match the model schema");
    }
    double* dst = cache.input.row(i);
    for (std::size_t k = 0; k < p.n_numeric; ++k) dst[k] = rec.numeric[k];
    std::size_t off = p.n_numeric;
    for (std::size_t c = 0; c < p.vocab_sizes.size(); ++c) {
      auto idx = rec.categorical[c];
      if (idx < 0 || static_cast<std::size_t>(idx) >= p.vocab_sizes[c]) {
        fail("forward: category index ", idx, " out of range for column ", c);
      }
      auto emb = p.tensor(p.emb_idx[c]);
      const double* src = emb.data() + static_cast<std::size_t>(idx) * p.embedding_dim;
      for (std::size_t k = 0; k < p.embedding_dim; ++k) dst[off + k] = src[k];
      off += p.embedding_dim;
    }
  }

  const Matrix* cur = &cache.input;
  cache.rep_pre.resize(p.rep_widths.size());
  cache.rep_act.resize(p.rep_widths.size());
  for (std::size_t l = 0; l < p.rep_widths.size(); ++l) {
    detail::affine_forward(*cur, p, p.rep_w_idx[l], p.rep_b_idx[l], cache.rep_pre[l]);
    detail::check_matrix_finite(cache.rep_pre[l], "representation", l);
    detail::apply_activation(config.activation, cache.rep_pre[l], cache.rep_act[l]);
    cur = &cache.rep_act[l];
  }

  for (int arm : {1, 0}) {
    auto& head = cache.heads[arm];
    const Matrix* h = &cache.phi();
    const std::size_t n_hidden = p.head_widths.size();
    head.pre.resize(n_hidden);
    head.act.resize(n_hidden);
    for (std::size_t l = 0; l < n_hidden; ++l) {
      detail::affine_forward(*h, p, p.head_w_idx[arm][l], p.head_b_idx[arm][l], head.pre[l]);
      detail::check_matrix_finite(head.pre[l], "head", l);
      detail::apply_activation(config.activation, head.pre[l], head.act[l]);
      h = &head.act[l];
    }
    detail::affine_forward(*h, p, p.head_w_idx[arm][n_hidden], p.head_b_idx[arm][n_hidden],
                           head.out);
    detail::check_matrix_finite(head.out, "head output", n_hidden);
  }
  return cache;
}

// Public forward result: representation plus per-arm head outputs.
struct ForwardOutput {
  HeadMode mode = HeadMode::Ziln;
  Matrix phi;
  std::array<std::vector<ZilnParams>, 2> ziln;    // filled in ZILN mode
  std::array<std::vector<double>, 2> scalar;      // filled in MSE mode

  // Point prediction for one sample under one arm: the ZILN distribution
  // mean, or the raw scalar.
  double response(int arm, std::size_t i) const {
    return mode == HeadMode::Ziln ? ziln_mean(ziln[arm][i]) : scalar[arm][i];
  }
};

inline ForwardOutput output_from_cache(const ModelConfig& config, const ForwardCache& cache) {
  ForwardOutput out;
  out.mode = config.head_mode;
  out.phi = cache.phi();
  for (int arm : {0, 1}) {
    const Matrix& raw = cache.heads[arm].out;
    if (config.head_mode == HeadMode::Ziln) {
      out.ziln[arm].reserve(raw.rows);
      for (std::size_t i = 0; i < raw.rows; ++i) {
        out.ziln[arm].push_back(
            ziln_from_raw(raw(i, 0), raw(i, 1), raw(i, 2), config.sigma_floor));
      }
    } else {
      out.scalar[arm].reserve(raw.rows);
      for (std::size_t i = 0; i < raw.rows; ++i) out.scalar[arm].push_back(raw(i, 0));
    }
  }
  return out;
}

inline ForwardOutput forward(const ModelParams& p, const ModelConfig& config,
                             std::span<const SampleRecord> batch) {
  std::vector<const SampleRecord*> rows(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) rows[i] = &batch[i];
  return output_from_cache(config, forward_cached(p, config, rows));
}

inline double predict_response(const ZilnParams& z) { return ziln_mean(z); }

// tau_hat per record: treated-head mean minus control-head mean.
inline std::vector<double> predict_uplift(const ModelParams& p, const ModelConfig& config,
                                          std::span<const SampleRecord> records,
                                          std::size_t chunk = 2048) {
  std::vector<double> tau;
  tau.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    std::size_t len = std::min(chunk, records.size() - start);
    ForwardOutput out = forward(p, config, records.subspan(start, len));
    for (std::size_t i = 0; i < len; ++i) {
      tau.push_back(out.response(1, i) - out.response(0, i));
    }
  }
  return tau;
}

// ---- checkpoint I/O ----
// One JSON file: model config, schema (with fingerprint), and every tensor
// in row-major order. Doubles survive the round trip bit-exactly.

inline constexpr const char* kCheckpointFormat = "uplift-checkpoint-v1";

inline nlohmann::json checkpoint_to_json(const ModelParams& p, const ModelConfig& config,
                                         const FeatureSchema& schema) {
  p.check_finite();
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["model_config"] = config.to_json();
  j["schema"] = schema.to_json();
  j["schema_fingerprint"] = schema.fingerprint();
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < p.specs.size(); ++i) {
    const auto& s = p.specs[i];
    auto view = p.tensor(i);
    tensors.push_back({{"name", s.name},
                       {"rows", s.rows},
                       {"cols", s.cols},
                       {"values", std::vector<double>(view.begin(), view.end())}});
  }
  j["tensors"] = tensors;
  return j;
}

inline void save_checkpoint(const std::string& path, const ModelParams& p,
                            const ModelConfig& config, const FeatureSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write checkpoint '", path, "'");
  out << checkpoint_to_json(p, config, schema).dump(2) << '\n';
  if (!out) fail("I/O failure writing checkpoint '", path, "'");
}

struct Checkpoint {
  ModelParams params;
  ModelConfig config;
  FeatureSchema schema;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint '", path, "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("checkpoint '", path, "' is not valid JSON: ", e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) {
    fail("checkpoint '", path, "': unknown format");
  }
  Checkpoint ck;
  ck.config = ModelConfig::from_json(j.at("model_config"));
  ck.schema = FeatureSchema::from_json(j.at("schema"));
  if (j.at("schema_fingerprint").get<std::uint64_t>() != ck.schema.fingerprint()) {
    fail("checkpoint '", path, "': schema fingerprint mismatch");
  }
  ck.params = init_model(ck.config, ck.schema, 0);
  if (j.at("tensors").size() != ck.params.specs.size()) {
    fail("checkpoint '", path, "': tensor count mismatch");
  }
  for (std::size_t i = 0; i < ck.params.specs.size(); ++i) {
    const auto& t = j.at("tensors")[i];
    const auto& s = ck.params.specs[i];
    if (t.at("name").get<std::string>() != s.name || t.at("rows").get<std::size_t>() != s.rows ||
        t.at("cols").get<std::size_t>() != s.cols) {
      fail("checkpoint '", path, "': tensor '", s.name, "' shape mismatch");
    }
    auto values = t.at("values").get<std::vector<double>>();
    if (values.size() != s.size()) fail("checkpoint '", path, "': tensor '", s.name, "' size mismatch");
    auto view = ck.params.tensor(i);
    std::copy(values.begin(), values.end(), view.begin());
  }
  return ck;
}

}  // namespace uplift
