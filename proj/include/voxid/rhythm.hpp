#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "voxid/corpus.hpp"

namespace voxid {

struct UnitSequence {
  std::vector<std::uint16_t> unit_ids;
  double hop_ms = 20.0;
};

/// K unit centroids of dimension D, row-major.
struct Codebook {
  std::size_t num_units = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t k) const { return {values.data() + k * dim, dim}; }
};

struct Merge {
  /// Cluster ids: leaves are 0..K-1, merge i creates cluster K + i.
  std::size_t left = 0;
  std::size_t right = 0;
  double distance = 0.0;
  std::size_t size = 0;
};

struct CoarsePartition {
  std::vector<int> group_of_unit;
  std::size_t num_groups = 0;
  std::vector<Merge> merge_tree;
  std::optional<int> sonorant_group;
};

enum class Linkage { ward, average };

struct GroupSegment {
  int group = 0;
  double duration_ms = 0.0;

  bool operator==(const GroupSegment&) const = default;
};

/// Class name -> ascending segment durations (ms).
using DurationDistribution = std::map<std::string, std::vector<double>>;

struct U3DReport {
  std::map<std::string, double> per_group_distance;
  double average = 0.0;
  std::vector<std::string> only_in_reference;
  std::vector<std::string> only_in_candidate;
};

/// Reads a codebook from its sidecar JSON (`num_units`, `dim`, `data`), the
/// data file holding K*D little-endian float32 values.
Codebook read_codebook(const std::filesystem::path& sidecar_json);
void write_codebook(const std::filesystem::path& sidecar_json, const std::filesystem::path& data_file,
                    const Codebook& cb);

/// Agglomerative clustering over codebook rows (Euclidean), cut to n_groups.
/// Ties between equal merge costs go to the lowest (i, j) active-cluster pair.
/// Groups are numbered by their smallest member unit.
CoarsePartition cluster_codebook(const Codebook& cb, std::size_t n_groups, Linkage linkage = Linkage::ward);

/// Unit stream -> group run-length segments. Segments shorter than min_dur_ms
/// are absorbed (shortest first, earliest on ties) into the neighbour with the
/// longer duration (earlier neighbour on ties); equal-group neighbours then fuse.
std::vector<GroupSegment> segment(const UnitSequence& units, const CoarsePartition& partition, double min_dur_ms = 0.0);

std::string group_name(int group);

DurationDistribution duration_distributions(std::span<const std::vector<GroupSegment>> utterances);

struct LabelMap {
  std::map<std::string, std::string> class_of;
  std::set<std::string> dropped;

  /// Stress digits are stripped and lookup is case-insensitive.
  std::optional<std::string> classify(const std::string& label) const;

  /// ARPAbet phones to vowel / approximant / nasal / fricative / stop, with
  /// silence markers mapped to "sil" and spoken-noise markers dropped.
  static LabelMap arpabet();
  /// CSV rows `label,class`; an empty class or `-` marks the label as dropped.
  static LabelMap from_csv(const std::filesystem::path& path);
};

DurationDistribution distributions_from_labels(std::span<const SegmentLabelTrack> tracks, const LabelMap& map);

/// Exact W1 between the empirical distributions of two ascending lists.
double wasserstein1(std::span<const double> a, std::span<const double> b);

U3DReport u3d(const DurationDistribution& reference, const DurationDistribution& candidate);

/// Nearest other speaker by absolute rate difference; ties go to the smaller id.
std::map<std::string, std::string> nearest_by_rate(const std::map<std::string, double>& rates);

}  // namespace voxid
