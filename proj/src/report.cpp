#include "voxid/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace voxid {
namespace {

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// White (0) to dark blue (1).
std::string heat_colour(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const auto mix = [&](int lo, int hi) { return static_cast<int>(std::lround(lo + (hi - lo) * v)); };
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", mix(247, 8), mix(251, 48), mix(255, 107));
  return buf;
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string protocol_csv(const ProtocolReport& report) {
  std::ostringstream out;
  out << "speaker,eer,threshold,n_target,n_nontarget\n";
  for (const auto& s : report.per_speaker) {
    out << csv_cell(s.speaker) << ',' << format_number(s.result.eer) << ',' << format_number(s.result.threshold)
        << ',' << s.result.n_target << ',' << s.result.n_nontarget << '\n';
  }
  return out.str();
}

std::string protocol_summary_json(const ProtocolReport& report) {
  nlohmann::ordered_json j;
  j["protocol"] = report.protocol_name;
  j["mean_eer"] = report.mean_eer;
  j["std_eer"] = report.std_eer;
  j["std_kind"] = "population";
  j["aggregation"] = "per-speaker EER, then mean/std across speakers";
  j["n_speakers"] = report.per_speaker.size();
  auto& per = j["per_speaker"];
  per = nlohmann::ordered_json::object();
  for (const auto& s : report.per_speaker) per[s.speaker] = s.result.eer;
  auto& meta = j["metadata"];
  meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.perturbation_metadata) {
    if (k == "condition_spec") {
      meta[k] = nlohmann::ordered_json::parse(v);
    } else {
      meta[k] = v;
    }
  }
  return j.dump(2) + "\n";
}

std::string u3d_csv(const U3DReport& report) {
  std::ostringstream out;
  out << "group,distance_ms\n";
  for (const auto& [g, d] : report.per_group_distance) out << csv_cell(g) << ',' << format_number(d) << '\n';
  out << "average," << format_number(report.average) << '\n';
  return out.str();
}

std::string u3d_table_csv(const std::vector<U3DScenarioRow>& rows) {
  std::set<std::string> groups;
  for (const auto& r : rows) {
    for (const auto& [g, _] : r.per_group) groups.insert(g);
  }
  std::ostringstream out;
  out << "scenario";
  for (const auto& g : groups) out << ',' << csv_cell(g);
  out << ",average,comparisons\n";
  for (const auto& r : rows) {
    out << csv_cell(r.scenario);
    for (const auto& g : groups) {
      out << ',';
      const auto it = r.per_group.find(g);
      if (it != r.per_group.end()) out << format_number(it->second);
    }
    out << ',' << format_number(r.average) << ',' << r.comparisons << '\n';
  }
  return out.str();
}

std::string probe_csv(const ProbeReport& report) {
  std::ostringstream out;
  out << "feature,r2,r2_display,n_used,n_outliers,lambda,status\n";
  for (const auto& e : report.entries) {
    out << csv_cell(e.feature) << ',' << (e.r2 ? format_number(*e.r2) : "") << ','
        << (e.r2 ? format_number(e.r2_display()) : "") << ',' << e.n_used << ',' << e.n_outliers << ','
        << format_number(e.lambda) << ',' << csv_cell(e.status) << '\n';
  }
  return out.str();
}

std::string probe_svg(const ProbeReport& report, const std::string& source_label) {
  const int cell = 56, label_w = 150, header_h = 130, n = static_cast<int>(report.entries.size());
  const int width = label_w + cell * n + 10, height = header_h + cell + 10;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (int i = 0; i < n; ++i) {
    const auto& e = report.entries[static_cast<std::size_t>(i)];
    const int x = label_w + cell * i + cell / 2;
    out << "  <text transform=\"translate(" << x << "," << header_h - 6 << ") rotate(-60)\">"
        << xml_escape(e.feature) << "</text>\n";
  }
  out << "  <text x=\"4\" y=\"" << header_h + cell / 2 + 4 << "\">" << xml_escape(source_label) << "</text>\n";
  for (int i = 0; i < n; ++i) {
    const auto& e = report.entries[static_cast<std::size_t>(i)];
    const int x = label_w + cell * i;
    const double v = e.r2_display();
    out << "  <rect x=\"" << x << "\" y=\"" << header_h << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"" << (e.r2 ? heat_colour(v) : "#dddddd") << "\" stroke=\"#ffffff\"/>\n";
    char txt[16];
    std::snprintf(txt, sizeof txt, "%.2f", v);
    out << "  <text x=\"" << x + cell / 2 << "\" y=\"" << header_h + cell / 2 + 4
        << "\" text-anchor=\"middle\" fill=\"" << (v > 0.55 ? "#ffffff" : "#000000") << "\">"
        << (e.r2 ? txt : "n/a") << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string eq_taps_csv(const EqFilter& eq) {
  std::ostringstream out;
  out << "index,tap\n";
  for (std::size_t i = 0; i < eq.taps.size(); ++i) out << i << ',' << format_number(eq.taps[i]) << '\n';
  return out.str();
}

std::string eq_bands_csv(const EqFilter& eq) {
  std::ostringstream out;
  out << "band,center_hz,gain_db\n";
  for (std::size_t b = 0; b < eq.band_centers.size(); ++b) {
    out << b << ',' << format_number(eq.band_centers[b]) << ',' << format_number(eq.band_gains_db[b]) << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace voxid
