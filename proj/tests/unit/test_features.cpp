#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "synth.hpp"
#include "voxid/features.hpp"

using namespace voxid;
using namespace voxid::testing;

namespace {

double voiced_fraction(const PitchTrack& t) {
  return static_cast<double>(std::count(t.voiced.begin(), t.voiced.end(), true)) / static_cast<double>(t.size());
}

double mean_voiced_f0(const PitchTrack& t) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.voiced[i]) {
      s += t.f0_hz[i];
      ++n;
    }
  }
  return s / n;
}

PitchTrack manual_track(const std::string& pattern, std::vector<double> f0 = {}) {
  PitchTrack t;
  t.hop_s = 0.01;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const char c = pattern[i];
    t.times.push_back(0.01 * double(i));
    t.voiced.push_back(c == 'V');
    t.silent.push_back(c == 'S');
    t.f0_hz.push_back(c == 'V' ? (f0.empty() ? 100.0 : f0[i]) : 0.0);
    t.periodicity.push_back(c == 'V' ? 0.9 : 0.1);
  }
  return t;
}

AudioBuffer scaled(AudioBuffer a, double c) {
  for (auto& s : a.samples) s *= c;
  return a;
}

}  // namespace

TEST_CASE("track_pitch on a 220 Hz sawtooth") {
  const auto t = track_pitch(sawtooth(220.0, 1.0));
  CHECK(t.size() == 98);
  CHECK(voiced_fraction(t) >= 0.95);
  CHECK(std::abs(mean_voiced_f0(t) - 220.0) < 2.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.voiced[i]) {
      CHECK(t.f0_hz[i] >= 60.0);
      CHECK(t.f0_hz[i] <= 400.0);
    }
  }
}

TEST_CASE("track_pitch follows pitch across the search range") {
  for (double f0 : {70.0, 110.0, 180.0, 300.0, 390.0}) {
    CAPTURE(f0);
    const auto t = track_pitch(sawtooth(f0, 0.5));
    CHECK(voiced_fraction(t) >= 0.9);
    CHECK(std::abs(mean_voiced_f0(t) - f0) < 0.01 * f0);
  }
}

TEST_CASE("track_pitch voicing on noise and silence") {
  CHECK(voiced_fraction(track_pitch(white_noise(2.0, 0.1, 3))) <= 0.05);
  AudioBuffer silence;
  silence.samples.assign(16000, 0.0);
  const auto t = track_pitch(silence);
  CHECK(voiced_fraction(t) == 0.0);
  CHECK(std::all_of(t.silent.begin(), t.silent.end(), [](bool b) { return b; }));
  AudioBuffer tiny;
  tiny.samples.assign(1000, 0.1);
  CHECK_THROWS(track_pitch(tiny));
}

TEST_CASE("pitch_stats") {
  const auto [m, s] = pitch_stats(manual_track("VVVV", {110, 110, 110, 110}));
  CHECK(m == doctest::Approx(12.0));
  CHECK(s == 0.0);
  const auto [m2, s2] = pitch_stats(manual_track("VV", {110, 220}));
  CHECK(m2 == doctest::Approx(18.0));
  CHECK(s2 == doctest::Approx(6.0));
  CHECK_THROWS(pitch_stats(manual_track("UUS")));

  // Constant-f0 audio gives an exactly zero std.
  PitchTrack flat = manual_track(std::string(50, 'V'), std::vector<double>(50, 173.3));
  CHECK(pitch_stats(flat).second == 0.0);
}

TEST_CASE("segment_lengths") {
  const auto a = segment_lengths(manual_track("VVVUUVV"));
  CHECK(*a.voiced_ms == doctest::Approx(25.0));
  CHECK(*a.unvoiced_ms == doctest::Approx(20.0));
  const auto b = segment_lengths(manual_track("VVVV"));
  CHECK(*b.voiced_ms == doctest::Approx(40.0));
  CHECK(!b.unvoiced_ms.has_value());
  const auto c = segment_lengths(manual_track("VUVUVU"));
  CHECK(*c.voiced_ms == doctest::Approx(10.0));
  CHECK(*c.unvoiced_ms == doctest::Approx(10.0));
  // Silence is excluded from unvoiced runs and splits them.
  const auto d = segment_lengths(manual_track("UUSUVV"));
  CHECK(*d.unvoiced_ms == doctest::Approx(15.0));
  CHECK_THROWS(segment_lengths(manual_track("SSS")));
}

TEST_CASE("loudness_stats") {
  AudioBuffer square;
  for (int i = 0; i < 16000; ++i) square.samples.push_back((i / 40) % 2 ? 1.0 : -1.0);
  const auto [m, s] = loudness_stats(square);
  CHECK(std::abs(m) < 1e-9);
  CHECK(s < 1e-9);
  const auto [mh, sh] = loudness_stats(scaled(square, 0.5));
  CHECK(mh == doctest::Approx(m - 6.0206).epsilon(1e-4));
  CHECK(sh < 1e-9);

  // -10 dBFS then -30 dBFS square halves: frame levels split evenly (but for
  // the straddling frames), so the std is close to 10 dB.
  AudioBuffer two;
  const double a1 = std::pow(10.0, -10.0 / 20.0), a2 = std::pow(10.0, -30.0 / 20.0);
  for (int i = 0; i < 32000; ++i) two.samples.push_back(((i / 40) % 2 ? 1.0 : -1.0) * (i < 16000 ? a1 : a2));
  const auto [m2, s2] = loudness_stats(two);
  CHECK(m2 == doctest::Approx(-20.0).epsilon(0.02));
  CHECK(s2 == doctest::Approx(10.0).epsilon(0.02));

  AudioBuffer silence;
  silence.samples.assign(4000, 0.0);
  CHECK_THROWS(loudness_stats(silence));
}

TEST_CASE("shimmer") {
  CHECK(shimmer(track_pitch(sawtooth(150.0, 1.0))) < 0.01);
  PitchTrack alt;
  alt.period_peak_amps = {{1.0, 0.8, 1.0, 0.8, 1.0, 0.8}};
  CHECK(shimmer(alt) == doctest::Approx(0.2 / 0.9));
  PitchTrack one;
  one.period_peak_amps = {{1.0}, {0.7}};
  CHECK_THROWS(shimmer(one));
}

TEST_CASE("shimmer detects alternating period amplitudes in audio") {
  // 100 Hz train of one-sided pulses whose odd periods are scaled by 0.8.
  AudioBuffer x;
  for (int i = 0; i < 16000; ++i) {
    const int period = i / 160;
    const double ph = (i % 160) / 160.0;
    const double pulse = std::pow(std::max(0.0, std::sin(2.0 * std::numbers::pi * ph)), 3.0);
    x.samples.push_back((period % 2 ? 0.8 : 1.0) * 0.5 * pulse);
  }
  const auto t = track_pitch(x);
  CHECK(shimmer(t) == doctest::Approx(0.2 / 0.9).epsilon(0.05));
}

TEST_CASE("hnr") {
  const auto s = sine(200.0, 1.0, 0.5);
  CHECK(hnr(s, track_pitch(s)) >= 25.0);

  auto noisy = sine(200.0, 2.0, 0.5);
  const auto n = white_noise(2.0, 0.5 / std::sqrt(2.0), 4);
  for (std::size_t i = 0; i < noisy.samples.size(); ++i) noisy.samples[i] += n.samples[i];
  CHECK(std::abs(hnr(noisy, track_pitch(noisy))) < 1.5);

  const auto wn = white_noise(1.0, 0.1, 5);
  CHECK_THROWS(hnr(wn, track_pitch(wn)));
}

TEST_CASE("alpha_ratio") {
  auto low = sine(500.0, 1.0, 0.5);
  const auto dither = white_noise(1.0, 0.5 * 1e-4, 6);
  for (std::size_t i = 0; i < low.samples.size(); ++i) low.samples[i] += dither.samples[i];
  CHECK(alpha_ratio(low) > 30.0);
  auto high = sine(3000.0, 1.0, 0.5);
  for (std::size_t i = 0; i < high.samples.size(); ++i) high.samples[i] += dither.samples[i];
  CHECK(alpha_ratio(high) < -30.0);
  CHECK(std::abs(alpha_ratio(white_noise(10.0, 0.1, 7)) - 10.0 * std::log10(950.0 / 4000.0)) < 0.5);
  AudioBuffer silence;
  silence.samples.assign(4000, 0.0);
  CHECK_THROWS(alpha_ratio(silence));
}

TEST_CASE("speech_rate") {
  CoarsePartition p;
  p.group_of_unit = {0, 1};
  p.num_groups = 2;
  p.sonorant_group = 0;

  // 60 s at 20 ms hop with 120 sonorant runs.
  UnitSequence u{{}, 20.0};
  for (int r = 0; r < 240; ++r) {
    for (int f = 0; f < 12; ++f) u.unit_ids.push_back(static_cast<std::uint16_t>(r % 2));
  }
  u.unit_ids.resize(3000, 1);
  CHECK(speech_rate(u, p) == doctest::Approx(120.0));

  // Alternating 150 ms runs at 10 ms hop for 60 s.
  UnitSequence alt{{}, 10.0};
  for (int r = 0; r < 400; ++r) {
    for (int f = 0; f < 15; ++f) alt.unit_ids.push_back(static_cast<std::uint16_t>(r % 2));
  }
  CHECK(speech_rate(alt, p) == doctest::Approx(200.0).epsilon(0.05));

  CHECK_THROWS(speech_rate(UnitSequence{{}, 20.0}, p));
  CoarsePartition nosono = p;
  nosono.sonorant_group.reset();
  CHECK_THROWS(speech_rate(alt, nosono));
}

TEST_CASE("extract_all on a speech-like fixture") {
  const auto x = speech_like(2.0, 130.0, 0.4, 1);
  CoarsePartition p;
  p.group_of_unit = {0, 0, 1, 1, 2};
  p.num_groups = 3;
  p.sonorant_group = 0;
  UnitSequence u{{}, 20.0};
  for (int i = 0; i < 100; ++i) u.unit_ids.push_back(static_cast<std::uint16_t>((i / 5) % 5));

  const auto f = extract_all(x, &u, &p);
  CHECK(f.duration_s == doctest::Approx(2.0).epsilon(0.0005));
  for (const auto& v : feature_values(f)) {
    REQUIRE(v.has_value());
    CHECK(std::isfinite(*v));
  }
  CHECK(*f.voiced_len_ms > 100.0);
  CHECK(*f.unvoiced_len_ms < 150.0);
  CHECK(f.pitch_mean_st == doctest::Approx(12.0 * std::log2(130.0 / 55.0)).epsilon(0.02));

  const auto g = extract_all(x);
  CHECK(!g.speech_rate_spm.has_value());
}

TEST_CASE("extract_all on silence lists every failing marker") {
  AudioBuffer silence;
  silence.samples.assign(16000, 0.0);
  try {
    extract_all(silence);
    FAIL("expected FeatureError");
  } catch (const FeatureError& e) {
    std::vector<std::string> names;
    for (const auto& [name, _] : e.failures()) names.push_back(name);
    CHECK(std::find(names.begin(), names.end(), "pitch") != names.end());
    CHECK(std::find(names.begin(), names.end(), "loudness") != names.end());
    CHECK(std::find(names.begin(), names.end(), "alpha_ratio_db") != names.end());
    CHECK(std::string(e.what()).find("hnr_db") != std::string::npos);
  }
}

TEST_CASE("feature invariants under scaling, reversal and repetition") {
  const auto x = speech_like(1.5, 150.0, 0.3, 2);
  const auto base = extract_all(x);

  SUBCASE("amplitude scaling") {
    const double c = 0.5;
    const auto s = extract_all(scaled(x, c));
    CHECK(s.loudness_mean_db - base.loudness_mean_db == doctest::Approx(20.0 * std::log10(c)).epsilon(1e-9));
    CHECK(s.pitch_mean_st == doctest::Approx(base.pitch_mean_st).epsilon(1e-3));
    CHECK(s.pitch_std_st == doctest::Approx(base.pitch_std_st).epsilon(1e-3));
    CHECK(s.shimmer == doctest::Approx(base.shimmer).epsilon(1e-3));
  }
  SUBCASE("time reversal") {
    AudioBuffer r = x;
    std::reverse(r.samples.begin(), r.samples.end());
    const auto [m0, s0] = loudness_stats(x);
    const auto [m1, s1] = loudness_stats(r);
    CHECK(r.duration_s() == x.duration_s());
    // Frames are anchored at the start, so reversal shifts the grid by the
    // leftover samples; level statistics barely move.
    CHECK(m1 == doctest::Approx(m0).epsilon(0.01));
    CHECK(s1 == doctest::Approx(s0).epsilon(0.02));
  }
  SUBCASE("self-concatenation") {
    const auto d = extract_all(concat(x, x));
    CHECK(d.duration_s == doctest::Approx(2.0 * base.duration_s));
    CHECK(d.pitch_mean_st == doctest::Approx(base.pitch_mean_st).epsilon(0.01));
    CHECK(d.pitch_std_st == doctest::Approx(base.pitch_std_st).epsilon(0.05));
    CHECK(d.loudness_mean_db == doctest::Approx(base.loudness_mean_db).epsilon(0.01));
    CHECK(d.loudness_std_db == doctest::Approx(base.loudness_std_db).epsilon(0.02));
    CHECK(d.shimmer == doctest::Approx(base.shimmer).epsilon(0.05));
    CHECK(d.hnr_db == doctest::Approx(base.hnr_db).epsilon(0.05));
    CHECK(d.alpha_ratio_db == doctest::Approx(base.alpha_ratio_db).epsilon(0.02));
  }
}
