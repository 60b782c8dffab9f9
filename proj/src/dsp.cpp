#include "voxid/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "voxid/rng.hpp"

namespace voxid {
namespace {

constexpr double kPi = std::numbers::pi;

void check_alpha(double alpha, const char* who) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument(std::string(who) + ": alpha must be in (0, 1)");
  }
}

bool is_pow2(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

struct WelchAccumulator {
  std::vector<double> acc;
  std::size_t segments = 0;
};

void welch_accumulate(const AudioBuffer& x, const WelchOptions& opt, WelchAccumulator& out) {
  const std::size_t n = opt.segment_len;
  if (!is_pow2(n)) throw std::invalid_argument("welch_psd: segment_len must be a power of two");
  if (!(opt.overlap >= 0.0 && opt.overlap < 1.0)) throw std::invalid_argument("welch_psd: overlap must be in [0, 1)");
  if (x.samples.size() < n) {
    throw std::invalid_argument("welch_psd: input of " + std::to_string(x.samples.size()) +
                                " samples is shorter than one segment (" + std::to_string(n) + ")");
  }
  const auto noverlap = static_cast<std::size_t>(std::floor(static_cast<double>(n) * opt.overlap));
  const std::size_t hop = std::max<std::size_t>(1, n - noverlap);

  std::vector<double> window(n);
  double wss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
    wss += window[i] * window[i];
  }
  const double scale = 1.0 / (static_cast<double>(x.sample_rate) * wss);
  const std::size_t nfreq = n / 2 + 1;
  if (out.acc.empty()) out.acc.assign(nfreq, 0.0);

  std::vector<std::complex<double>> buf(n);
  for (std::size_t start = 0; start + n <= x.samples.size(); start += hop) {
    for (std::size_t i = 0; i < n; ++i) buf[i] = {x.samples[start + i] * window[i], 0.0};
    fft_inplace(buf);
    for (std::size_t k = 0; k < nfreq; ++k) {
      double p = std::norm(buf[k]) * scale;
      if (k != 0 && k != n / 2) p *= 2.0;
      out.acc[k] += p;
    }
    ++out.segments;
  }
}

PowerSpectrum finish_welch(const WelchAccumulator& w, std::size_t segment_len, int sample_rate) {
  PowerSpectrum s;
  s.sample_rate = sample_rate;
  s.frequencies.resize(w.acc.size());
  s.psd.resize(w.acc.size());
  for (std::size_t k = 0; k < w.acc.size(); ++k) {
    s.frequencies[k] = static_cast<double>(k) * sample_rate / static_cast<double>(segment_len);
    s.psd[k] = w.acc[k] / static_cast<double>(w.segments);
  }
  return s;
}

std::vector<double> floored(const std::vector<double>& psd, double floor_db) {
  const double peak = *std::max_element(psd.begin(), psd.end());
  const double floor = peak * std::pow(10.0, -floor_db / 10.0);
  std::vector<double> out(psd.size());
  for (std::size_t i = 0; i < psd.size(); ++i) out[i] = std::max(psd[i], floor);
  return out;
}

}  // namespace

void fft_inplace(std::vector<std::complex<double>>& buf) {
  const std::size_t n = buf.size();
  if (!is_pow2(n)) throw std::invalid_argument("fft_inplace: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[i], buf[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        const auto u = buf[i + k];
        const auto v = buf[i + k + len / 2] * w;
        buf[i + k] = u + v;
        buf[i + k + len / 2] = u - v;
      }
    }
  }
}

NoiseResult add_white_noise(const AudioBuffer& x, double snr_db, std::uint64_t seed) {
  if (!std::isfinite(snr_db)) throw std::invalid_argument("add_white_noise: snr_db must be finite");
  const double p_signal = mean_power(x);
  if (!(p_signal > 0.0)) throw std::invalid_argument("add_white_noise: silent input");

  Rng rng(seed);
  std::vector<double> noise(x.samples.size());
  double mean = 0.0;
  for (auto& v : noise) {
    v = rng.normal();
    mean += v;
  }
  mean /= static_cast<double>(noise.size());
  double p_raw = 0.0;
  for (auto& v : noise) {
    v -= mean;
    p_raw += v * v;
  }
  p_raw /= static_cast<double>(noise.size());
  if (!(p_raw > 0.0)) throw std::invalid_argument("add_white_noise: input too short for a noise draw");

  const double p_noise = p_signal / std::pow(10.0, snr_db / 10.0);
  const double gain = std::sqrt(p_noise / p_raw);

  NoiseResult out;
  out.signal_power = p_signal;
  out.noise_power = p_noise;
  out.audio.sample_rate = x.sample_rate;
  out.audio.samples.resize(x.samples.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < noise.size(); ++i) {
    out.audio.samples[i] = x.samples[i] + gain * noise[i];
    peak = std::max(peak, std::abs(out.audio.samples[i]));
  }
  if (peak > 1.0) {
    out.scale = 1.0 / peak;
    for (auto& s : out.audio.samples) s *= out.scale;
  }
  return out;
}

AudioBuffer apply_emphasis(const AudioBuffer& x, double alpha) {
  check_alpha(alpha, "apply_emphasis");
  AudioBuffer y{std::vector<double>(x.samples.size()), x.sample_rate};
  double prev = 0.0;
  for (std::size_t n = 0; n < x.samples.size(); ++n) {
    y.samples[n] = x.samples[n] - alpha * prev;
    prev = x.samples[n];
  }
  return y;
}

AudioBuffer apply_deemphasis(const AudioBuffer& x, double alpha) {
  check_alpha(alpha, "apply_deemphasis");
  AudioBuffer y{std::vector<double>(x.samples.size()), x.sample_rate};
  double prev = 0.0;
  for (std::size_t n = 0; n < x.samples.size(); ++n) {
    prev = x.samples[n] + alpha * prev;
    y.samples[n] = prev;
  }
  return y;
}

PowerSpectrum welch_psd(const AudioBuffer& x, const WelchOptions& opt) {
  WelchAccumulator w;
  welch_accumulate(x, opt, w);
  return finish_welch(w, opt.segment_len, x.sample_rate);
}

PowerSpectrum welch_psd_pooled(std::span<const AudioBuffer> xs, const WelchOptions& opt) {
  if (xs.empty()) throw std::invalid_argument("welch_psd_pooled: no inputs");
  WelchAccumulator w;
  for (const auto& x : xs) {
    if (x.sample_rate != xs.front().sample_rate) {
      throw std::invalid_argument("welch_psd_pooled: mixed sample rates");
    }
    welch_accumulate(x, opt, w);
  }
  return finish_welch(w, opt.segment_len, xs.front().sample_rate);
}

std::vector<double> band_centers(const EqDesignOptions& opt) {
  if (opt.n_bands < 2) throw std::invalid_argument("band_centers: need at least 2 bands");
  if (!(opt.lowest_center_hz > 0.0 && opt.highest_center_hz > opt.lowest_center_hz)) {
    throw std::invalid_argument("band_centers: invalid center range");
  }
  std::vector<double> c(opt.n_bands);
  const double ratio = std::log(opt.highest_center_hz / opt.lowest_center_hz) / static_cast<double>(opt.n_bands - 1);
  for (std::size_t k = 0; k < opt.n_bands; ++k) c[k] = opt.lowest_center_hz * std::exp(ratio * static_cast<double>(k));
  c.back() = opt.highest_center_hz;
  return c;
}

std::vector<double> band_edges(std::span<const double> centers) {
  const std::size_t b = centers.size();
  std::vector<double> e(b + 1);
  for (std::size_t k = 1; k < b; ++k) e[k] = std::sqrt(centers[k - 1] * centers[k]);
  e[0] = centers[0] * centers[0] / e[1];
  e[b] = centers[b - 1] * centers[b - 1] / e[b - 1];
  return e;
}

double band_mean(const PowerSpectrum& s, double lo_hz, double hi_hz) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < s.frequencies.size(); ++k) {
    if (s.frequencies[k] >= lo_hz && s.frequencies[k] < hi_hz) {
      acc += s.psd[k];
      ++count;
    }
  }
  if (count > 0) return acc / static_cast<double>(count);
  const double center = std::sqrt(lo_hz * hi_hz);
  std::size_t best = 0;
  for (std::size_t k = 1; k < s.frequencies.size(); ++k) {
    if (std::abs(s.frequencies[k] - center) < std::abs(s.frequencies[best] - center)) best = k;
  }
  return s.psd[best];
}

double interpolate_band_gain_db(std::span<const double> centers, std::span<const double> gains_db, double f_hz) {
  if (f_hz <= centers.front()) return gains_db.front();
  if (f_hz >= centers.back()) return gains_db.back();
  const auto it = std::upper_bound(centers.begin(), centers.end(), f_hz);
  const std::size_t k = static_cast<std::size_t>(it - centers.begin());
  const double t = std::log(f_hz / centers[k - 1]) / std::log(centers[k] / centers[k - 1]);
  return gains_db[k - 1] + t * (gains_db[k] - gains_db[k - 1]);
}

std::vector<double> design_fir_from_amplitude(const std::function<double(double)>& amplitude_at_hz,
                                              std::size_t n_taps, int sample_rate) {
  if (n_taps < 3 || n_taps % 2 == 0) throw std::invalid_argument("design_fir: n_taps must be odd and >= 3");
  // Sample the zero-phase response at N equally spaced frequencies; the
  // inverse DFT of a real even spectrum is a real symmetric impulse response.
  const std::size_t n = n_taps;
  const std::size_t half = (n - 1) / 2;
  std::vector<double> amp(half + 1);
  for (std::size_t k = 0; k <= half; ++k) {
    amp[k] = amplitude_at_hz(static_cast<double>(k) * sample_rate / static_cast<double>(n));
  }
  std::vector<double> taps(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = static_cast<double>(i) - static_cast<double>(half);
    double acc = amp[0];
    for (std::size_t k = 1; k <= half; ++k) {
      acc += 2.0 * amp[k] * std::cos(2.0 * kPi * static_cast<double>(k) * m / static_cast<double>(n));
    }
    taps[i] = acc / static_cast<double>(n);
  }
  for (std::size_t i = 0; i < half; ++i) {
    const double avg = 0.5 * (taps[i] + taps[n - 1 - i]);
    taps[i] = taps[n - 1 - i] = avg;
  }
  return taps;
}

EqFilter design_match_eq(const PowerSpectrum& reference, const PowerSpectrum& target, const EqDesignOptions& opt) {
  if (reference.frequencies.size() != target.frequencies.size() || reference.sample_rate != target.sample_rate) {
    throw std::invalid_argument("design_match_eq: spectra are on different frequency grids");
  }
  for (std::size_t k = 0; k < reference.frequencies.size(); ++k) {
    if (std::abs(reference.frequencies[k] - target.frequencies[k]) > 1e-9) {
      throw std::invalid_argument("design_match_eq: spectra are on different frequency grids");
    }
  }
  if (reference.psd.empty()) throw std::invalid_argument("design_match_eq: empty spectrum");
  if (!(opt.clamp_db > 0.0)) throw std::invalid_argument("design_match_eq: clamp_db must be positive");
  if (opt.highest_center_hz >= reference.sample_rate / 2.0) {
    throw std::invalid_argument("design_match_eq: band centers must lie below Nyquist");
  }

  const auto s_ref = floored(reference.psd, opt.floor_db);
  const auto s_tgt = floored(target.psd, opt.floor_db);
  for (std::size_t k = 0; k < s_ref.size(); ++k) {
    if (!(s_ref[k] > 0.0) || !(s_tgt[k] > 0.0) || !std::isfinite(s_ref[k]) || !std::isfinite(s_tgt[k])) {
      throw std::invalid_argument("design_match_eq: non-positive PSD after flooring");
    }
  }
  PowerSpectrum ref_f = reference, tgt_f = target;
  ref_f.psd = s_ref;
  tgt_f.psd = s_tgt;

  EqFilter eq;
  eq.sample_rate = reference.sample_rate;
  eq.band_centers = band_centers(opt);
  const auto edges = band_edges(eq.band_centers);
  eq.band_gains_db.resize(opt.n_bands);
  for (std::size_t b = 0; b < opt.n_bands; ++b) {
    const double ratio = band_mean(ref_f, edges[b], edges[b + 1]) / band_mean(tgt_f, edges[b], edges[b + 1]);
    eq.band_gains_db[b] = std::clamp(10.0 * std::log10(ratio), -opt.clamp_db, opt.clamp_db);
  }
  const auto& centers = eq.band_centers;
  const auto& gains = eq.band_gains_db;
  eq.taps = design_fir_from_amplitude(
      [&](double f) { return std::pow(10.0, interpolate_band_gain_db(centers, gains, f) / 20.0); }, opt.n_taps,
      eq.sample_rate);
  return eq;
}

AudioBuffer apply_eq(const AudioBuffer& x, const EqFilter& eq) {
  const std::size_t m = eq.taps.size();
  if (m == 0 || m % 2 == 0) throw std::invalid_argument("apply_eq: filter must have an odd, nonzero tap count");
  for (std::size_t i = 0; i < m; ++i) {
    if (!std::isfinite(eq.taps[i]) || std::abs(eq.taps[i] - eq.taps[m - 1 - i]) > 1e-9) {
      throw std::invalid_argument("apply_eq: filter taps must be finite and symmetric");
    }
  }
  if (eq.sample_rate != x.sample_rate) throw std::invalid_argument("apply_eq: sample rate mismatch");
  const auto n = static_cast<std::ptrdiff_t>(x.samples.size());
  const auto delay = static_cast<std::ptrdiff_t>(eq.delay());
  AudioBuffer y{std::vector<double>(x.samples.size(), 0.0), x.sample_rate};
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    // y[i] = sum_k h[k] x[i + delay - k]
    const std::ptrdiff_t k_lo = std::max<std::ptrdiff_t>(0, i + delay - (n - 1));
    const std::ptrdiff_t k_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(m) - 1, i + delay);
    double acc = 0.0;
    for (std::ptrdiff_t k = k_lo; k <= k_hi; ++k) acc += eq.taps[static_cast<std::size_t>(k)] * x.samples[static_cast<std::size_t>(i + delay - k)];
    y.samples[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

double fir_magnitude(std::span<const double> taps, double f_hz, int sample_rate) {
  const double w = 2.0 * kPi * f_hz / static_cast<double>(sample_rate);
  std::complex<double> acc{0.0, 0.0};
  for (std::size_t k = 0; k < taps.size(); ++k) acc += taps[k] * std::polar(1.0, -w * static_cast<double>(k));
  return std::abs(acc);
}

}  // namespace voxid
