#pragma once

#include <string>

#include "uplift/csv.hpp"
#include "uplift/dataset.hpp"

// Adapter for the public MineThatData e-mail campaign export: one treatment
// arm (mens or womens e-mail) is combined with the no-e-mail control group,
// with the two-week spend as the response.
namespace uplift::hillstrom {

enum class Arm { Men, Women };

inline constexpr const char* kSegmentMen = "Mens E-Mail";
inline constexpr const char* kSegmentWomen = "Womens E-Mail";
inline constexpr const char* kSegmentControl = "No E-Mail";

inline SchemaSpec spec_for(Arm arm) {
  SchemaSpec spec;
  spec.numeric = {"recency", "history", "mens", "womens", "newbie"};
  spec.categorical = {"history_segment", "zip_code", "channel"};
  spec.treatment_column = "segment";
  spec.treatment_one = arm == Arm::Men ? kSegmentMen : kSegmentWomen;
  spec.treatment_zero = kSegmentControl;
  spec.response_column = "spend";
  return spec;
}

inline Dataset adapt(const csv::Table& raw, Arm arm) {
  std::size_t seg_idx = raw.column("segment");
  if (!raw.find_column("spend")) fail("hillstrom: missing spend column");
  const std::string selected = arm == Arm::Men ? kSegmentMen : kSegmentWomen;
  const std::string dropped = arm == Arm::Men ? kSegmentWomen : kSegmentMen;

  csv::Table filtered;
  filtered.header = raw.header;
  for (std::size_t i = 0; i < raw.rows.size(); ++i) {
    const std::string& seg = raw.rows[i][seg_idx];
    if (seg == selected || seg == kSegmentControl) {
      filtered.rows.push_back(raw.rows[i]);
    } else if (seg != dropped) {
      fail("hillstrom: row ", i + 1, ": unknown segment value '", seg, "'");
    }
  }
  Dataset ds = detail::dataset_from_table(filtered, spec_for(arm), nullptr);
  bool any_treated = false;
  for (const auto& rec : ds.records) any_treated |= (rec.treatment == 1);
  if (!any_treated) warn("hillstrom: no treated rows after selecting arm");
  return ds;
}

inline Dataset load(const std::string& path, Arm arm) {
  return adapt(csv::read_file(path), arm);
}

}  // namespace uplift::hillstrom
