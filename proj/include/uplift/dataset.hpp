#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "uplift/common.hpp"
#include "uplift/csv.hpp"
#include "uplift/rng.hpp"

namespace uplift {

// One individual: covariates, treatment flag, observed revenue response.
struct SampleRecord {
  std::vector<double> numeric;
  std::vector<std::int32_t> categorical;  // dense indices into the schema vocabularies
  int treatment = 0;                      // 0 = control, 1 = treated
  double response = 0.0;                  // >= 0
};

// Index 0 of every vocabulary is reserved for values unseen at build time.
inline constexpr const char* kUnknownCategory = "<unknown>";

struct CategoricalColumn {
  std::string name;
  std::vector<std::string> vocab;  // vocab[0] == kUnknownCategory

  std::int32_t index_of(const std::string& value) const {
    for (std::size_t i = 1; i < vocab.size(); ++i) {
      if (vocab[i] == value) return static_cast<std::int32_t>(i);
    }
    return 0;
  }
};

struct FeatureSchema {
  std::vector<std::string> numeric_columns;
  std::vector<CategoricalColumn> categorical_columns;
  std::string treatment_column;
  std::string response_column;
  std::string treatment_one;   // raw cell value mapped to treatment=1
  std::string treatment_zero;  // raw cell value mapped to treatment=0

  void validate() const {
    std::unordered_set<std::string> seen;
    auto check = [&](const std::string& name) {
      if (name.empty()) fail("schema: empty column name");
      if (!seen.insert(name).second) fail("schema: duplicate column name '", name, "'");
    };
    for (const auto& c : numeric_columns) check(c);
    for (const auto& c : categorical_columns) {
      check(c.name);
      if (c.vocab.empty() || c.vocab[0] != kUnknownCategory) {
        fail("schema: column '", c.name, "' lacks the reserved unknown slot");
      }
    }
    check(treatment_column);
    check(response_column);
    if (treatment_one == treatment_zero) fail("schema: treatment values must differ");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["numeric"] = numeric_columns;
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : categorical_columns) {
      cats.push_back({{"name", c.name}, {"vocab", c.vocab}});
    }
    j["categorical"] = cats;
    j["treatment"] = {{"column", treatment_column}, {"one", treatment_one}, {"zero", treatment_zero}};
    j["response"] = response_column;
    return j;
  }

  static FeatureSchema from_json(const nlohmann::json& j) {
    FeatureSchema s;
    s.numeric_columns = j.at("numeric").get<std::vector<std::string>>();
    for (const auto& c : j.at("categorical")) {
      s.categorical_columns.push_back(
          {c.at("name").get<std::string>(), c.at("vocab").get<std::vector<std::string>>()});
    }
    s.treatment_column = j.at("treatment").at("column").get<std::string>();
    s.treatment_one = j.at("treatment").at("one").get<std::string>();
    s.treatment_zero = j.at("treatment").at("zero").get<std::string>();
    s.response_column = j.at("response").get<std::string>();
    s.validate();
    return s;
  }

  // FNV-1a over the canonical JSON form; used to pair checkpoints with data.
  std::uint64_t fingerprint() const {
    std::string dump = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

// Column-role declaration handed to the loader. The treatment mapping is
// explicit; nothing is inferred from the data.
struct SchemaSpec {
  std::vector<std::string> numeric;
  std::vector<std::string> categorical;
  std::string treatment_column;
  std::string treatment_one;
  std::string treatment_zero;
  std::string response_column;
  char delimiter = ',';

  static SchemaSpec from_json(const nlohmann::json& j) {
    SchemaSpec s;
    s.numeric = j.value("numeric", std::vector<std::string>{});
    s.categorical = j.value("categorical", std::vector<std::string>{});
    const auto& t = j.at("treatment");
    s.treatment_column = t.at("column").get<std::string>();
    s.treatment_one = t.at("one").get<std::string>();
    s.treatment_zero = t.at("zero").get<std::string>();
    s.response_column = j.at("response").get<std::string>();
    std::string d = j.value("delimiter", std::string(","));
    if (d.size() != 1) fail("schema spec: delimiter must be a single character");
    s.delimiter = d[0];
    return s;
  }

  nlohmann::json to_json() const {
    return {{"numeric", numeric},
            {"categorical", categorical},
            {"treatment", {{"column", treatment_column}, {"one", treatment_one}, {"zero", treatment_zero}}},
            {"response", response_column},
            {"delimiter", std::string(1, delimiter)}};
  }
};

// Immutable after construction; iteration order is part of the contract
// (splits and batching depend on it).
struct Dataset {
  FeatureSchema schema;
  std::vector<SampleRecord> records;

  std::size_t size() const { return records.size(); }

  void validate() const {
    schema.validate();
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.numeric.size() != schema.numeric_columns.size())
        fail("record ", i, ": numeric feature count mismatch");
      if (r.categorical.size() != schema.categorical_columns.size())
        fail("record ", i, ": categorical feature count mismatch");
      for (std::size_t c = 0; c < r.categorical.size(); ++c) {
        if (r.categorical[c] < 0 ||
            static_cast<std::size_t>(r.categorical[c]) >= schema.categorical_columns[c].vocab.size())
          fail("record ", i, ": category index out of range in column '",
               schema.categorical_columns[c].name, "'");
      }
      if (r.treatment != 0 && r.treatment != 1) fail("record ", i, ": treatment not in {0,1}");
      if (!(r.response >= 0.0)) fail("record ", i, ": negative response");
    }
  }
};

namespace detail {

inline Dataset dataset_from_table(const csv::Table& table, const SchemaSpec& spec,
                                  const FeatureSchema* fixed) {
  std::vector<std::size_t> num_idx;
  for (const auto& name : spec.numeric) num_idx.push_back(table.column(name));
  std::vector<std::size_t> cat_idx;
  for (const auto& name : spec.categorical) cat_idx.push_back(table.column(name));
  std::size_t treat_idx = table.column(spec.treatment_column);
  std::size_t resp_idx = table.column(spec.response_column);

  Dataset ds;
  if (fixed) {
    ds.schema = *fixed;
  } else {
    ds.schema.numeric_columns = spec.numeric;
    for (const auto& name : spec.categorical) {
      ds.schema.categorical_columns.push_back({name, {kUnknownCategory}});
    }
    ds.schema.treatment_column = spec.treatment_column;
    ds.schema.treatment_one = spec.treatment_one;
    ds.schema.treatment_zero = spec.treatment_zero;
    ds.schema.response_column = spec.response_column;
  }

  // Vocabulary build is first-appearance order (after the reserved slot).
  std::vector<std::unordered_map<std::string, std::int32_t>> vocab_lookup(cat_idx.size());
  if (fixed) {
    for (std::size_t c = 0; c < cat_idx.size(); ++c) {
      const auto& col = ds.schema.categorical_columns.at(c);
      for (std::size_t v = 0; v < col.vocab.size(); ++v) {
        vocab_lookup[c][col.vocab[v]] = static_cast<std::int32_t>(v);
      }
    }
  }

  ds.records.reserve(table.rows.size());
  for (std::size_t row = 0; row < table.rows.size(); ++row) {
    const auto& cells = table.rows[row];
    SampleRecord rec;
    rec.numeric.reserve(num_idx.size());
    for (std::size_t c = 0; c < num_idx.size(); ++c) {
      auto v = csv::parse_double(cells[num_idx[c]]);
      if (!v) fail("row ", row + 1, ", column '", spec.numeric[c], "': unparseable numeric cell '",
                   cells[num_idx[c]], "'");
      rec.numeric.push_back(*v);
    }
    rec.categorical.reserve(cat_idx.size());
    for (std::size_t c = 0; c < cat_idx.size(); ++c) {
      const std::string& value = cells[cat_idx[c]];
      auto& lookup = vocab_lookup[c];
      auto it = lookup.find(value);
      if (it != lookup.end()) {
        rec.categorical.push_back(it->second);
      } else if (fixed) {
        rec.categorical.push_back(0);  // unseen at build time -> reserved index
      } else {
        auto& vocab = ds.schema.categorical_columns[c].vocab;
        auto idx = static_cast<std::int32_t>(vocab.size());
        vocab.push_back(value);
        lookup.emplace(value, idx);
        rec.categorical.push_back(idx);
      }
    }
    const std::string& traw = cells[treat_idx];
    if (traw == spec.treatment_one) {
      rec.treatment = 1;
    } else if (traw == spec.treatment_zero) {
      rec.treatment = 0;
    } else {
      fail("row ", row + 1, ": treatment value '", traw, "' outside the declared mapping {'",
           spec.treatment_one, "','", spec.treatment_zero, "'}");
    }
    auto y = csv::parse_double(cells[resp_idx]);
    if (!y) fail("row ", row + 1, ", column '", spec.response_column, "': unparseable numeric cell '",
                 cells[resp_idx], "'");
    if (*y < 0.0) fail("row ", row + 1, ": negative response ", *y);
    rec.response = *y;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace detail

// Builds vocabularies from the file itself.
inline Dataset load_csv(const std::string& path, const SchemaSpec& spec) {
  csv::Table table = csv::read_file(path, spec.delimiter);
  return detail::dataset_from_table(table, spec, nullptr);
}

// Maps onto an existing schema; unseen categories go to the reserved index.
inline Dataset load_csv(const std::string& path, const SchemaSpec& spec,
                        const FeatureSchema& schema) {
  csv::Table table = csv::read_file(path, spec.delimiter);
  return detail::dataset_from_table(table, spec, &schema);
}

// Inverse of load_csv: reloading the output with the same spec reproduces
// the records exactly.
inline void write_csv(const Dataset& ds, const std::string& path, char delimiter = ',') {
  csv::Table table;
  for (const auto& name : ds.schema.numeric_columns) table.header.push_back(name);
  for (const auto& col : ds.schema.categorical_columns) table.header.push_back(col.name);
  table.header.push_back(ds.schema.treatment_column);
  table.header.push_back(ds.schema.response_column);
  table.rows.reserve(ds.records.size());
  for (const auto& rec : ds.records) {
    std::vector<std::string> row;
    row.reserve(table.header.size());
    for (double v : rec.numeric) row.push_back(csv::format_double(v));
    for (std::size_t c = 0; c < rec.categorical.size(); ++c) {
      row.push_back(ds.schema.categorical_columns[c].vocab[rec.categorical[c]]);
    }
    row.push_back(rec.treatment == 1 ? ds.schema.treatment_one : ds.schema.treatment_zero);
    row.push_back(csv::format_double(rec.response));
    table.rows.push_back(std::move(row));
  }
  csv::write_file(table, path, delimiter);
}

// Seeded shuffle, then contiguous slices of size floor(n*f_train) and
// floor(n*f_val); the remainder is the test split.
inline std::array<Dataset, 3> split(const Dataset& ds, std::array<double, 3> fractions,
                                    std::uint64_t seed) {
  if (ds.records.empty()) fail("split: empty dataset");
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) fail("split: fractions sum to ", sum, ", expected 1");
  for (double f : fractions) {
    if (f <= 0.0) fail("split: fractions must be positive");
  }
  std::size_t n = ds.records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  auto n_train = static_cast<std::size_t>(static_cast<double>(n) * fractions[0]);
  auto n_val = static_cast<std::size_t>(static_cast<double>(n) * fractions[1]);
  std::array<Dataset, 3> out;
  for (auto& part : out) part.schema = ds.schema;
  out[0].records.reserve(n_train);
  out[1].records.reserve(n_val);
  out[2].records.reserve(n - n_train - n_val);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = ds.records[order[i]];
    if (i < n_train) out[0].records.push_back(rec);
    else if (i < n_train + n_val) out[1].records.push_back(rec);
    else out[2].records.push_back(rec);
  }
  return out;
}

// (treated, control); relative order preserved on both sides.
inline std::pair<Dataset, Dataset> partition_by_treatment(const Dataset& ds) {
  Dataset treated, control;
  treated.schema = ds.schema;
  control.schema = ds.schema;
  for (const auto& rec : ds.records) {
    (rec.treatment == 1 ? treated : control).records.push_back(rec);
  }
  return {std::move(treated), std::move(control)};
}

}  // namespace uplift
