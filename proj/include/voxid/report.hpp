#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxid/dsp.hpp"
#include "voxid/probe.hpp"
#include "voxid/rhythm.hpp"
#include "voxid/similarity.hpp"

namespace voxid {

inline constexpr const char* kVersion = "0.3.0";

/// Shortest decimal that round-trips through strtod.
std::string format_number(double v);

/// speaker,eer,threshold,n_target,n_nontarget
std::string protocol_csv(const ProtocolReport& report);
/// mean/std plus per-speaker values and metadata, as JSON text.
std::string protocol_summary_json(const ProtocolReport& report);

/// group,distance rows followed by an `average` row.
std::string u3d_csv(const U3DReport& report);

/// One row of a Table-3-shaped summary: per-group mean distances and their average.
struct U3DScenarioRow {
  std::string scenario;
  std::map<std::string, double> per_group;
  double average = 0.0;
  std::size_t comparisons = 0;
};

/// scenario,<groups...>,average
std::string u3d_table_csv(const std::vector<U3DScenarioRow>& rows);

/// feature,r2,r2_display,n_used,n_outliers,lambda,status
std::string probe_csv(const ProbeReport& report);

/// Heat strip: one cell per feature, colour by r^2 clamped to [0, 1].
std::string probe_svg(const ProbeReport& report, const std::string& source_label);

/// tap index,value
std::string eq_taps_csv(const EqFilter& eq);
/// band,center_hz,gain_db
std::string eq_bands_csv(const EqFilter& eq);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace voxid
