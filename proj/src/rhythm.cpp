#include "voxid/rhythm.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <list>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace voxid {
namespace {

namespace fs = std::filesystem;

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

std::string normalize_label(const std::string& label) {
  std::string out;
  for (char c : label) {
    if (std::isdigit(static_cast<unsigned char>(c))) continue;
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

Codebook read_codebook(const fs::path& sidecar_json) {
  std::ifstream in(sidecar_json);
  if (!in) throw std::runtime_error("read_codebook: cannot open " + sidecar_json.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("read_codebook: malformed sidecar " + sidecar_json.string() + ": " + e.what());
  }
  Codebook cb;
  fs::path data;
  try {
    cb.num_units = meta.at("num_units").get<std::size_t>();
    cb.dim = meta.at("dim").get<std::size_t>();
    data = sidecar_json.parent_path() / meta.at("data").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("read_codebook: sidecar needs num_units, dim, data: " + std::string(e.what()));
  }
  if (cb.num_units < 2 || cb.dim == 0) throw std::runtime_error("read_codebook: need K >= 2 and D >= 1");
  std::ifstream bin(data, std::ios::binary);
  if (!bin) throw std::runtime_error("read_codebook: cannot open " + data.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (bytes.size() != 4 * cb.num_units * cb.dim) {
    throw std::runtime_error("read_codebook: " + data.string() + " holds " + std::to_string(bytes.size()) +
                             " bytes, sidecar declares " + std::to_string(cb.num_units) + "x" +
                             std::to_string(cb.dim) + " float32");
  }
  cb.values.resize(cb.num_units * cb.dim);
  for (std::size_t i = 0; i < cb.values.size(); ++i) {
    const unsigned char* p = bytes.data() + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw std::runtime_error("read_codebook: non-finite centroid value");
    cb.values[i] = v;
  }
  return cb;
}

void write_codebook(const fs::path& sidecar_json, const fs::path& data_file, const Codebook& cb) {
  std::string out;
  for (double v : cb.values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  std::ofstream bin(data_file, std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("write_codebook: cannot open " + data_file.string());
  bin.write(out.data(), static_cast<std::streamsize>(out.size()));
  nlohmann::json meta = {{"num_units", cb.num_units},
                         {"dim", cb.dim},
                         {"data", fs::relative(data_file, sidecar_json.parent_path()).generic_string()}};
  std::ofstream side(sidecar_json, std::ios::trunc);
  side << meta.dump(2) << "\n";
}

CoarsePartition cluster_codebook(const Codebook& cb, std::size_t n_groups, Linkage linkage) {
  const std::size_t k = cb.num_units;
  if (k < 2 || cb.values.size() != k * cb.dim) throw std::invalid_argument("cluster_codebook: need K >= 2 rows");
  if (n_groups < 2 || n_groups > k) {
    throw std::invalid_argument("cluster_codebook: n_groups must be in [2, " + std::to_string(k) + "]");
  }

  // Slot i holds an active cluster; a merged cluster reuses the lower slot.
  std::vector<double> dist(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      double acc = 0.0;
      const auto a = cb.row(i), b = cb.row(j);
      for (std::size_t d = 0; d < cb.dim; ++d) acc += (a[d] - b[d]) * (a[d] - b[d]);
      dist[i * k + j] = dist[j * k + i] = std::sqrt(acc);
    }
  }
  std::vector<std::size_t> cluster_id(k), size(k, 1);
  std::iota(cluster_id.begin(), cluster_id.end(), 0);
  std::vector<bool> active(k, true);

  CoarsePartition out;
  out.merge_tree.reserve(k - 1);
  for (std::size_t step = 0; step + 1 < k; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < k; ++j) {
        if (active[j] && dist[i * k + j] < best) {
          best = dist[i * k + j];
          bi = i;
          bj = j;
        }
      }
    }
    const double ni = static_cast<double>(size[bi]), nj = static_cast<double>(size[bj]);
    for (std::size_t m = 0; m < k; ++m) {
      if (!active[m] || m == bi || m == bj) continue;
      const double dim_ = dist[bi * k + m], djm = dist[bj * k + m];
      double d;
      if (linkage == Linkage::ward) {
        const double nm = static_cast<double>(size[m]);
        const double t = ni + nj + nm;
        d = std::sqrt(std::max(0.0, ((nm + ni) * dim_ * dim_ + (nm + nj) * djm * djm - nm * best * best) / t));
      } else {
        d = (ni * dim_ + nj * djm) / (ni + nj);
      }
      dist[bi * k + m] = dist[m * k + bi] = d;
    }
    out.merge_tree.push_back({cluster_id[bi], cluster_id[bj], best, size[bi] + size[bj]});
    active[bj] = false;
    size[bi] += size[bj];
    cluster_id[bi] = k + step;
  }
  // Guard against float drift in the Lance-Williams update.
  for (std::size_t i = 1; i < out.merge_tree.size(); ++i) {
    out.merge_tree[i].distance = std::max(out.merge_tree[i].distance, out.merge_tree[i - 1].distance);
  }

  // Replay the first K - n_groups merges.
  std::vector<std::size_t> parent(2 * k - 1);
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t step = 0; step < k - n_groups; ++step) {
    const auto& m = out.merge_tree[step];
    parent[find_root(parent, m.left)] = k + step;
    parent[find_root(parent, m.right)] = k + step;
  }
  out.group_of_unit.assign(k, -1);
  std::map<std::size_t, int> label_of_root;
  for (std::size_t u = 0; u < k; ++u) {
    const auto root = find_root(parent, u);
    auto [it, inserted] = label_of_root.try_emplace(root, static_cast<int>(label_of_root.size()));
    out.group_of_unit[u] = it->second;
  }
  out.num_groups = label_of_root.size();
  return out;
}

std::string group_name(int group) { return "g" + std::to_string(group); }

std::vector<GroupSegment> segment(const UnitSequence& units, const CoarsePartition& partition, double min_dur_ms) {
  if (units.unit_ids.empty()) throw std::invalid_argument("segment: empty unit sequence");
  if (!(units.hop_ms > 0.0)) throw std::invalid_argument("segment: hop must be positive");
  std::list<GroupSegment> segs;
  for (auto u : units.unit_ids) {
    if (u >= partition.group_of_unit.size() || partition.group_of_unit[u] < 0) {
      throw std::invalid_argument("segment: unit id " + std::to_string(u) + " is not in the partition");
    }
    const int g = partition.group_of_unit[u];
    if (!segs.empty() && segs.back().group == g) {
      segs.back().duration_ms += units.hop_ms;
    } else {
      segs.push_back({g, units.hop_ms});
    }
  }

  while (segs.size() > 1) {
    auto shortest = segs.end();
    for (auto it = segs.begin(); it != segs.end(); ++it) {
      if (it->duration_ms < min_dur_ms && (shortest == segs.end() || it->duration_ms < shortest->duration_ms)) {
        shortest = it;
      }
    }
    if (shortest == segs.end()) break;
    auto next = std::next(shortest);
    const bool has_prev = shortest != segs.begin();
    const bool has_next = next != segs.end();
    auto target = has_prev ? std::prev(shortest) : next;
    if (has_prev && has_next && next->duration_ms > std::prev(shortest)->duration_ms) target = next;
    target->duration_ms += shortest->duration_ms;
    segs.erase(shortest);
    // Fuse the target with equal-group neighbours.
    if (target != segs.begin()) {
      auto p = std::prev(target);
      if (p->group == target->group) {
        p->duration_ms += target->duration_ms;
        segs.erase(target);
        target = p;
      }
    }
    auto n = std::next(target);
    if (n != segs.end() && n->group == target->group) {
      target->duration_ms += n->duration_ms;
      segs.erase(n);
    }
  }
  return {segs.begin(), segs.end()};
}

DurationDistribution duration_distributions(std::span<const std::vector<GroupSegment>> utterances) {
  DurationDistribution out;
  std::size_t total = 0;
  for (const auto& segs : utterances) {
    for (const auto& s : segs) {
      out[group_name(s.group)].push_back(s.duration_ms);
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("duration_distributions: no segments");
  for (auto& [_, v] : out) std::sort(v.begin(), v.end());
  return out;
}

std::optional<std::string> LabelMap::classify(const std::string& label) const {
  const auto key = normalize_label(label);
  if (dropped.count(key)) return std::nullopt;
  const auto it = class_of.find(key);
  if (it == class_of.end()) throw std::invalid_argument("label '" + label + "' is not mapped and has no drop rule");
  return it->second;
}

LabelMap LabelMap::arpabet() {
  LabelMap m;
  for (const char* p : {"AA", "AE", "AH", "AO", "AW", "AX", "AY", "EH", "ER", "EY", "IH", "IX", "IY", "OW", "OY",
                        "UH", "UW"}) {
    m.class_of[p] = "vowel";
  }
  for (const char* p : {"L", "R", "W", "Y", "EL"}) m.class_of[p] = "approximant";
  for (const char* p : {"M", "N", "NG", "EM", "EN"}) m.class_of[p] = "nasal";
  for (const char* p : {"F", "V", "TH", "DH", "S", "Z", "SH", "ZH", "HH"}) m.class_of[p] = "fricative";
  for (const char* p : {"P", "B", "T", "D", "K", "G", "CH", "JH", "DX"}) m.class_of[p] = "stop";
  for (const char* p : {"", "SIL", "SP", "PAU", "<EPS>"}) m.class_of[p] = "sil";
  for (const char* p : {"SPN", "NSN", "<UNK>"}) m.dropped.insert(p);
  return m;
}

LabelMap LabelMap::from_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("LabelMap::from_csv: cannot open " + path.string());
  LabelMap m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error("LabelMap::from_csv: malformed row " + std::to_string(line_no));
    }
    const auto label = normalize_label(line.substr(0, comma));
    std::string cls = line.substr(comma + 1);
    cls.erase(std::remove_if(cls.begin(), cls.end(), [](unsigned char c) { return std::isspace(c); }), cls.end());
    if (line_no == 1 && label == "LABEL") continue;
    if (cls.empty() || cls == "-") {
      m.dropped.insert(label);
    } else {
      m.class_of[label] = cls;
    }
  }
  return m;
}

DurationDistribution distributions_from_labels(std::span<const SegmentLabelTrack> tracks, const LabelMap& map) {
  DurationDistribution out;
  for (const auto& t : tracks) {
    for (const auto& s : t.segments) {
      const auto cls = map.classify(s.label);
      if (cls) out[*cls].push_back(s.end_ms - s.start_ms);
    }
  }
  for (auto& [_, v] : out) std::sort(v.begin(), v.end());
  return out;
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty duration list");
  // Walk the merged quantile breakpoints i/na and j/nb in integer units of
  // 1/(na nb), so coincident breakpoints and cell widths are exact.
  const std::size_t na = a.size(), nb = b.size();
  std::size_t i = 0, j = 0, done = 0;
  double total = 0.0;
  while (i < na && j < nb) {
    const std::size_t lhs = (i + 1) * nb, rhs = (j + 1) * na;
    const std::size_t next = std::min(lhs, rhs);
    total += std::abs(a[i] - b[j]) * static_cast<double>(next - done);
    done = next;
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return total / static_cast<double>(na * nb);
}

U3DReport u3d(const DurationDistribution& reference, const DurationDistribution& candidate) {
  U3DReport r;
  for (const auto& [name, durations] : reference) {
    const auto it = candidate.find(name);
    if (durations.empty()) continue;
    if (it == candidate.end() || it->second.empty()) {
      r.only_in_reference.push_back(name);
      continue;
    }
    r.per_group_distance[name] = wasserstein1(durations, it->second);
  }
  for (const auto& [name, durations] : candidate) {
    if (durations.empty()) continue;
    const auto it = reference.find(name);
    if (it == reference.end() || it->second.empty()) r.only_in_candidate.push_back(name);
  }
  if (r.per_group_distance.empty()) throw std::invalid_argument("u3d: no shared groups between distributions");
  double acc = 0.0;
  for (const auto& [_, d] : r.per_group_distance) acc += d;
  r.average = acc / static_cast<double>(r.per_group_distance.size());
  return r;
}

std::map<std::string, std::string> nearest_by_rate(const std::map<std::string, double>& rates) {
  if (rates.size() < 2) throw std::invalid_argument("nearest_by_rate: need at least 2 speakers");
  std::map<std::string, std::string> out;
  for (const auto& [spk, rate] : rates) {
    double best = std::numeric_limits<double>::infinity();
    std::string best_id;
    // std::map iterates ids in ascending order, so strict < keeps the smallest id on ties.
    for (const auto& [other, other_rate] : rates) {
      if (other == spk) continue;
      const double d = std::abs(rate - other_rate);
      if (d < best) {
        best = d;
        best_id = other;
      }
    }
    out[spk] = best_id;
  }
  return out;
}

}  // namespace voxid
