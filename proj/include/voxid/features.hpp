#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "voxid/audio.hpp"
#include "voxid/rhythm.hpp"

namespace voxid {

struct PitchConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  double f0_min_hz = 60.0;
  double f0_max_hz = 400.0;
  double voicing_threshold = 0.45;
  double silence_floor_dbfs = -60.0;
};

/// Frame-level autocorrelation pitch track.
struct PitchTrack {
  double hop_s = 0.01;
  std::vector<double> times;
  std::vector<double> f0_hz;  // 0 where unvoiced
  std::vector<bool> voiced;
  std::vector<bool> silent;
  /// Normalized cross-correlation at the selected lag, per frame.
  std::vector<double> periodicity;
  /// Peak |amplitude| of each detected glottal period, one list per voiced run.
  std::vector<std::vector<double>> period_peak_amps;

  std::size_t size() const { return f0_hz.size(); }
};

struct FeatureVector {
  double duration_s = 0.0;
  std::optional<double> speech_rate_spm;
  std::optional<double> voiced_len_ms;
  std::optional<double> unvoiced_len_ms;
  double pitch_mean_st = 0.0;
  double pitch_std_st = 0.0;
  double loudness_mean_db = 0.0;
  double loudness_std_db = 0.0;
  double shimmer = 0.0;
  double hnr_db = 0.0;
  double alpha_ratio_db = 0.0;
};

/// Column names in CSV order (without `id`, `speaker`).
inline constexpr std::array<const char*, 11> kFeatureNames = {
    "duration_s",      "speech_rate_spm", "voiced_len_ms",    "unvoiced_len_ms", "pitch_mean_st", "pitch_std_st",
    "loudness_mean_db", "loudness_std_db", "shimmer",          "hnr_db",          "alpha_ratio_db"};

/// Values in kFeatureNames order; absent values are nullopt.
std::array<std::optional<double>, 11> feature_values(const FeatureVector& f);

/// Raised by extract_all with every failing marker listed.
class FeatureError : public std::runtime_error {
public:
  explicit FeatureError(std::vector<std::pair<std::string, std::string>> failures);
  const std::vector<std::pair<std::string, std::string>>& failures() const { return failures_; }

private:
  std::vector<std::pair<std::string, std::string>> failures_;
};

PitchTrack track_pitch(const AudioBuffer& x, const PitchConfig& cfg = {});

/// Semitones re 55 Hz, population mean/std over voiced frames.
std::pair<double, double> pitch_stats(const PitchTrack& t);

struct SegmentLengths {
  std::optional<double> voiced_ms;
  std::optional<double> unvoiced_ms;
};

/// Mean run length of voiced frames and of unvoiced, non-silent frames.
SegmentLengths segment_lengths(const PitchTrack& t);

std::pair<double, double> loudness_stats(const AudioBuffer& x, const PitchConfig& cfg = {});

double shimmer(const PitchTrack& t);

double hnr(const AudioBuffer& x, const PitchTrack& t, const PitchConfig& cfg = {});

double alpha_ratio(const AudioBuffer& x);

double speech_rate(const UnitSequence& units, const CoarsePartition& partition);

FeatureVector extract_all(const AudioBuffer& x, const UnitSequence* units = nullptr,
                          const CoarsePartition* partition = nullptr, const PitchConfig& cfg = {});

}  // namespace voxid
