#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace voxid::cli {

struct PerturbConfig {
  std::string manifest;
  std::string out;
  /// One of "noise", "emphasis", "deemphasis", "eq_match".
  std::string mode;
  double snr_db = 20.0;
  double alpha = 0.97;
  std::uint64_t seed = 0;
  std::string reference;
  std::size_t n_bands = 16;
  std::size_t n_taps = 513;
  double clamp_db = 12.0;
  std::size_t segment_len = 1024;
  std::size_t workers = 1;
};

struct EerConfig {
  std::string manifest;
  std::string out;
  std::string protocol = "same_speaker_random";
  std::string condition;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct U3DConfig {
  std::string manifest;
  std::string out;
  std::string codebook;
  bool use_labels = false;
  std::string label_map;
  std::size_t n_groups = 3;
  std::string linkage = "ward";
  double min_dur_ms = 0.0;
  int sonorant_unit = -1;
  std::string rate_class = "vowel";
  std::vector<std::string> scenarios{"same", "nearest", "random"};
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct FeaturesConfig {
  std::string manifest;
  std::string out;
  std::string codebook;
  std::size_t n_groups = 3;
  int sonorant_unit = -1;
  double voicing_threshold = 0.45;
  double silence_floor_dbfs = -60.0;
  std::size_t workers = 1;
};

struct ProbeConfig {
  std::string manifest;
  std::string out;
  std::string features;
  std::size_t folds = 5;
  std::size_t grid_points = 30;
  double grid_ratio = 1e-4;
  double iqr_multiplier = 1.5;
  std::string mode = "refit_on_training";
  std::string label = "embedding";
  std::size_t workers = 1;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PerturbConfig, manifest, out, mode, snr_db, alpha, seed, reference,
                                                n_bands, n_taps, clamp_db, segment_len, workers)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EerConfig, manifest, out, protocol, condition, seed, workers)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(U3DConfig, manifest, out, codebook, use_labels, label_map, n_groups,
                                                linkage, min_dur_ms, sonorant_unit, rate_class, scenarios, seed,
                                                workers)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FeaturesConfig, manifest, out, codebook, n_groups, sonorant_unit,
                                                voicing_threshold, silence_floor_dbfs, workers)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProbeConfig, manifest, out, features, folds, grid_points, grid_ratio,
                                                iqr_multiplier, mode, label, workers)

/// Each command writes its outputs plus `run.json` under config.out and
/// returns the process exit code. Hard errors are thrown as exceptions.
int run_perturb(PerturbConfig config);
int run_eer(EerConfig config);
int run_u3d(U3DConfig config);
int run_features(FeaturesConfig config);
int run_probe_command(ProbeConfig config);

/// Re-runs the command recorded in a run.json, optionally into another directory.
int replay(const std::filesystem::path& run_json, const std::string& out_override);

}  // namespace voxid::cli
