#include "voxid/features.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "voxid/dsp.hpp"

namespace voxid {
namespace {

struct FrameGeometry {
  std::size_t window = 0;
  std::size_t hop = 0;
  std::size_t count = 0;
};

FrameGeometry frames_for(const AudioBuffer& x, const PitchConfig& cfg) {
  FrameGeometry g;
  g.window = static_cast<std::size_t>(std::lround(cfg.frame_ms * x.sample_rate / 1000.0));
  g.hop = static_cast<std::size_t>(std::lround(cfg.hop_ms * x.sample_rate / 1000.0));
  if (g.window == 0 || g.hop == 0) throw std::invalid_argument("frame and hop lengths must be positive");
  g.count = x.samples.size() < g.window ? 0 : (x.samples.size() - g.window) / g.hop + 1;
  return g;
}

/// Population mean/std computed on values shifted by the first element, so
/// identical inputs give a standard deviation of exactly zero.
std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double pivot = v.front();
  double sum = 0.0;
  for (double x : v) sum += x - pivot;
  const double mean_shift = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) {
    const double d = (x - pivot) - mean_shift;
    ss += d * d;
  }
  return {pivot + mean_shift, std::sqrt(ss / static_cast<double>(v.size()))};
}

double frame_dbfs(const std::vector<double>& s, std::size_t start, std::size_t len) {
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i) acc += s[start + i] * s[start + i];
  const double ms = acc / static_cast<double>(len);
  return ms > 0.0 ? 10.0 * std::log10(ms) : -std::numeric_limits<double>::infinity();
}

/// Normalized cross-correlation between x[s, s+L) and x[s+lag, s+lag+L),
/// L = min(window, samples left after the lag).
double nccf(const std::vector<double>& x, const std::vector<double>& energy_prefix, std::size_t start,
            std::size_t window, std::size_t lag) {
  if (start + lag >= x.size()) return 0.0;
  const std::size_t len = std::min(window, x.size() - start - lag);
  if (len < window / 2) return 0.0;
  double cross = 0.0;
  for (std::size_t n = 0; n < len; ++n) cross += x[start + n] * x[start + n + lag];
  const double e0 = energy_prefix[start + len] - energy_prefix[start];
  const double e1 = energy_prefix[start + lag + len] - energy_prefix[start + lag];
  const double denom = std::sqrt(e0 * e1);
  return denom > 0.0 ? cross / denom : 0.0;
}

std::vector<double> energy_prefix_of(const std::vector<double>& x) {
  std::vector<double> p(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) p[i + 1] = p[i] + x[i] * x[i];
  return p;
}

std::size_t argmax_abs(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
  std::size_t best = lo;
  for (std::size_t i = lo; i < hi; ++i) {
    if (std::abs(x[i]) > std::abs(x[best])) best = i;
  }
  return best;
}

}  // namespace

std::array<std::optional<double>, 11> feature_values(const FeatureVector& f) {
  return {f.duration_s,       f.speech_rate_spm, f.voiced_len_ms, f.unvoiced_len_ms, f.pitch_mean_st, f.pitch_std_st,
          f.loudness_mean_db, f.loudness_std_db, f.shimmer,       f.hnr_db,          f.alpha_ratio_db};
}

FeatureError::FeatureError(std::vector<std::pair<std::string, std::string>> failures)
    : std::runtime_error([&] {
        std::string msg = "feature extraction failed for:";
        for (const auto& [name, why] : failures) msg += " " + name + " (" + why + ");";
        return msg;
      }()),
      failures_(std::move(failures)) {}

PitchTrack track_pitch(const AudioBuffer& x, const PitchConfig& cfg) {
  const double fs = x.sample_rate;
  if (static_cast<double>(x.samples.size()) < 0.1 * fs) throw std::invalid_argument("track_pitch: input shorter than 100 ms");
  for (double s : x.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("track_pitch: non-finite sample");
  }
  const auto geo = frames_for(x, cfg);
  const auto lag_min = static_cast<std::size_t>(std::floor(fs / cfg.f0_max_hz));
  const auto lag_max = static_cast<std::size_t>(std::ceil(fs / cfg.f0_min_hz));
  const auto prefix = energy_prefix_of(x.samples);

  PitchTrack t;
  t.hop_s = static_cast<double>(geo.hop) / fs;
  t.times.resize(geo.count);
  t.f0_hz.assign(geo.count, 0.0);
  t.voiced.assign(geo.count, false);
  t.silent.assign(geo.count, false);
  t.periodicity.assign(geo.count, 0.0);

  std::vector<double> r(lag_max + 2, 0.0);
  for (std::size_t f = 0; f < geo.count; ++f) {
    const std::size_t start = f * geo.hop;
    t.times[f] = (static_cast<double>(start) + 0.5 * static_cast<double>(geo.window)) / fs;
    if (frame_dbfs(x.samples, start, geo.window) < cfg.silence_floor_dbfs) {
      t.silent[f] = true;
      continue;
    }
    double best = -1.0;
    for (std::size_t lag = lag_min - 1; lag <= lag_max + 1; ++lag) {
      r[lag] = nccf(x.samples, prefix, start, geo.window, lag);
      if (lag >= lag_min && lag <= lag_max) best = std::max(best, r[lag]);
    }
    // First local maximum reaching 90% of the global one; avoids octave-down picks.
    std::size_t pick = 0;
    for (std::size_t lag = lag_min; lag <= lag_max; ++lag) {
      const bool peak = r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1];
      if (peak && r[lag] >= 0.9 * best) {
        pick = lag;
        break;
      }
    }
    if (pick == 0 || r[pick] <= 0.0) continue;
    double offset = 0.0;
    const double denom = r[pick - 1] - 2.0 * r[pick] + r[pick + 1];
    if (denom < 0.0) offset = std::clamp(0.5 * (r[pick - 1] - r[pick + 1]) / denom, -0.5, 0.5);
    const double f0 = std::clamp(fs / (static_cast<double>(pick) + offset), cfg.f0_min_hz, cfg.f0_max_hz);
    t.periodicity[f] = r[pick];
    if (r[pick] > cfg.voicing_threshold) {
      t.voiced[f] = true;
      t.f0_hz[f] = f0;
    }
  }

  // Glottal period peaks inside each voiced run.
  for (std::size_t f = 0; f < geo.count;) {
    if (!t.voiced[f]) {
      ++f;
      continue;
    }
    std::size_t g = f;
    while (g < geo.count && t.voiced[g]) ++g;
    const std::size_t span_lo = f * geo.hop;
    const std::size_t span_hi = std::min(x.samples.size(), (g - 1) * geo.hop + geo.window);
    const auto period_at = [&](std::size_t sample) {
      const std::size_t frame = std::clamp<std::size_t>(sample / geo.hop, f, g - 1);
      return fs / t.f0_hz[frame];
    };
    std::vector<double> amps;
    const auto first_period = static_cast<std::size_t>(std::ceil(period_at(span_lo)));
    std::size_t p = argmax_abs(x.samples, span_lo, std::min(span_hi, span_lo + first_period));
    amps.push_back(std::abs(x.samples[p]));
    while (true) {
      const double period = period_at(p);
      const auto lo = p + static_cast<std::size_t>(std::ceil(0.75 * period));
      const auto hi = p + static_cast<std::size_t>(std::floor(1.25 * period)) + 1;
      if (hi > span_hi) break;
      p = argmax_abs(x.samples, lo, hi);
      amps.push_back(std::abs(x.samples[p]));
    }
    t.period_peak_amps.push_back(std::move(amps));
    f = g;
  }
  return t;
}

std::pair<double, double> pitch_stats(const PitchTrack& t) {
  std::vector<double> st;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.voiced[i] && t.f0_hz[i] > 0.0) st.push_back(12.0 * std::log2(t.f0_hz[i] / 55.0));
  }
  if (st.empty()) throw std::invalid_argument("pitch_stats: no voiced frames");
  return mean_std(st);
}

SegmentLengths segment_lengths(const PitchTrack& t) {
  std::vector<double> voiced_runs, unvoiced_runs;
  std::size_t i = 0;
  const std::size_t n = t.size();
  while (i < n) {
    if (t.silent.size() == n && t.silent[i]) {
      ++i;
      continue;
    }
    const bool v = t.voiced[i];
    std::size_t j = i;
    while (j < n && t.voiced[j] == v && !(t.silent.size() == n && t.silent[j])) ++j;
    (v ? voiced_runs : unvoiced_runs).push_back(static_cast<double>(j - i) * t.hop_s * 1000.0);
    i = j;
  }
  if (voiced_runs.empty() && unvoiced_runs.empty()) {
    throw std::invalid_argument("segment_lengths: track holds only silence");
  }
  SegmentLengths out;
  if (!voiced_runs.empty()) out.voiced_ms = mean_std(voiced_runs).first;
  if (!unvoiced_runs.empty()) out.unvoiced_ms = mean_std(unvoiced_runs).first;
  return out;
}

std::pair<double, double> loudness_stats(const AudioBuffer& x, const PitchConfig& cfg) {
  const auto geo = frames_for(x, cfg);
  std::vector<double> db;
  for (std::size_t f = 0; f < geo.count; ++f) {
    const double level = frame_dbfs(x.samples, f * geo.hop, geo.window);
    if (level >= cfg.silence_floor_dbfs) db.push_back(level);
  }
  if (db.empty()) throw std::invalid_argument("loudness_stats: silent input");
  return mean_std(db);
}

double shimmer(const PitchTrack& t) {
  double diff_sum = 0.0, amp_sum = 0.0;
  std::size_t diffs = 0, amps = 0;
  for (const auto& run : t.period_peak_amps) {
    for (std::size_t i = 0; i < run.size(); ++i) {
      amp_sum += run[i];
      ++amps;
      if (i > 0) {
        diff_sum += std::abs(run[i] - run[i - 1]);
        ++diffs;
      }
    }
  }
  if (diffs == 0) throw std::invalid_argument("shimmer: fewer than 2 consecutive periods");
  const double mean_amp = amp_sum / static_cast<double>(amps);
  if (!(mean_amp > 0.0)) throw std::invalid_argument("shimmer: zero period amplitude");
  return (diff_sum / static_cast<double>(diffs)) / mean_amp;
}

double hnr(const AudioBuffer& x, const PitchTrack& t, const PitchConfig& cfg) {
  const auto geo = frames_for(x, cfg);
  if (geo.count != t.size()) throw std::invalid_argument("hnr: pitch track does not match the audio");
  const auto prefix = energy_prefix_of(x.samples);
  std::vector<double> per_frame;
  for (std::size_t f = 0; f < t.size(); ++f) {
    if (!t.voiced[f]) continue;
    const double lag = x.sample_rate / t.f0_hz[f];
    const auto lo = static_cast<std::size_t>(std::floor(lag));
    double r = std::max(nccf(x.samples, prefix, f * geo.hop, geo.window, lo),
                        nccf(x.samples, prefix, f * geo.hop, geo.window, lo + 1));
    r = std::clamp(r, 0.001, 0.999);
    per_frame.push_back(10.0 * std::log10(r / (1.0 - r)));
  }
  if (per_frame.empty()) throw std::invalid_argument("hnr: no voiced frames");
  return mean_std(per_frame).first;
}

double alpha_ratio(const AudioBuffer& x) {
  if (!(mean_power(x) > 0.0)) throw std::invalid_argument("alpha_ratio: silent input");
  const auto psd = welch_psd(x);
  double low = 0.0, high = 0.0;
  for (std::size_t k = 0; k < psd.frequencies.size(); ++k) {
    const double f = psd.frequencies[k];
    if (f >= 50.0 && f < 1000.0) low += psd.psd[k];
    if (f >= 1000.0 && f < 5000.0) high += psd.psd[k];
  }
  if (!(low > 0.0) || !(high > 0.0)) throw std::invalid_argument("alpha_ratio: zero energy in a band");
  return 10.0 * std::log10(low / high);
}

double speech_rate(const UnitSequence& units, const CoarsePartition& partition) {
  if (units.unit_ids.empty()) throw std::invalid_argument("speech_rate: empty unit stream");
  if (!partition.sonorant_group) throw std::invalid_argument("speech_rate: partition has no sonorant group");
  const auto segs = segment(units, partition, 0.0);
  const auto count = std::count_if(segs.begin(), segs.end(),
                                   [&](const GroupSegment& s) { return s.group == *partition.sonorant_group; });
  const double minutes = static_cast<double>(units.unit_ids.size()) * units.hop_ms / 60000.0;
  return static_cast<double>(count) / minutes;
}

FeatureVector extract_all(const AudioBuffer& x, const UnitSequence* units, const CoarsePartition* partition,
                          const PitchConfig& cfg) {
  FeatureVector out;
  std::vector<std::pair<std::string, std::string>> failures;
  const auto attempt = [&](const char* name, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      failures.emplace_back(name, e.what());
    }
  };

  out.duration_s = x.duration_s();
  if (!(out.duration_s > 0.0)) failures.emplace_back("duration_s", "empty audio");

  std::optional<PitchTrack> track;
  attempt("pitch_track", [&] { track = track_pitch(x, cfg); });
  if (track) {
    attempt("pitch", [&] { std::tie(out.pitch_mean_st, out.pitch_std_st) = pitch_stats(*track); });
    attempt("segment_lengths", [&] {
      const auto lens = segment_lengths(*track);
      out.voiced_len_ms = lens.voiced_ms;
      out.unvoiced_len_ms = lens.unvoiced_ms;
    });
    attempt("shimmer", [&] { out.shimmer = shimmer(*track); });
    attempt("hnr_db", [&] { out.hnr_db = hnr(x, *track, cfg); });
  }
  attempt("loudness", [&] { std::tie(out.loudness_mean_db, out.loudness_std_db) = loudness_stats(x, cfg); });
  attempt("alpha_ratio_db", [&] { out.alpha_ratio_db = alpha_ratio(x); });
  if (units != nullptr && partition != nullptr) {
    attempt("speech_rate_spm", [&] { out.speech_rate_spm = speech_rate(*units, *partition); });
  }
  if (!failures.empty()) throw FeatureError(std::move(failures));
  return out;
}

}  // namespace voxid
