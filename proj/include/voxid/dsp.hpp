#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "voxid/audio.hpp"

namespace voxid {

/// One-sided power spectral density on a uniform grid from 0 to fs/2.
struct PowerSpectrum {
  std::vector<double> frequencies;
  std::vector<double> psd;
  int sample_rate = kSampleRate;

  double bin_width() const { return frequencies.size() > 1 ? frequencies[1] - frequencies[0] : 0.0; }
};

/// Linear-phase FIR equalizer plus the per-band gains it was designed from.
struct EqFilter {
  std::vector<double> taps;
  std::vector<double> band_centers;
  std::vector<double> band_gains_db;
  int sample_rate = kSampleRate;

  std::size_t delay() const { return taps.empty() ? 0 : (taps.size() - 1) / 2; }
};

struct NoiseResult {
  AudioBuffer audio;
  /// Global factor applied to signal+noise to keep every sample within [-1, 1]; 1 if unscaled.
  double scale = 1.0;
  double signal_power = 0.0;
  double noise_power = 0.0;
};

/// Adds zero-mean Gaussian noise whose realized mean square is exactly
/// P_signal / 10^(snr/10), where P_signal is measured over the whole file.
NoiseResult add_white_noise(const AudioBuffer& x, double snr_db, std::uint64_t seed);

/// y[n] = x[n] - alpha x[n-1], x[-1] = 0.
AudioBuffer apply_emphasis(const AudioBuffer& x, double alpha = 0.97);

/// y[n] = x[n] + alpha y[n-1], y[-1] = 0.
AudioBuffer apply_deemphasis(const AudioBuffer& x, double alpha = 0.97);

struct WelchOptions {
  std::size_t segment_len = 1024;  // power of two
  double overlap = 0.5;
};

/// Averaged periodogram with a periodic Hann window, density scaling
/// (power per Hz), one-sided. No detrending, so the integral of the PSD
/// equals the mean square of the input for stationary signals.
PowerSpectrum welch_psd(const AudioBuffer& x, const WelchOptions& opt = {});

/// Segment-weighted average of Welch estimates over several buffers.
PowerSpectrum welch_psd_pooled(std::span<const AudioBuffer> xs, const WelchOptions& opt = {});

struct EqDesignOptions {
  std::size_t n_bands = 16;
  std::size_t n_taps = 513;  // odd; integer group delay
  double clamp_db = 12.0;
  double lowest_center_hz = 50.0;
  double highest_center_hz = 7000.0;
  double floor_db = 80.0;  // PSDs floored this far below their maximum
};

/// Log-spaced band centers from lowest_center_hz to highest_center_hz.
std::vector<double> band_centers(const EqDesignOptions& opt);

/// Designs G with |G(f)|^2 = S_ref(f) / S_target(f), averaged per band and
/// clamped, then realized as a linear-phase FIR by frequency sampling.
EqFilter design_match_eq(const PowerSpectrum& reference, const PowerSpectrum& target,
                         const EqDesignOptions& opt = {});

/// Frequency-sampling design from an arbitrary real amplitude response.
/// n_taps must be odd; the result is symmetric.
std::vector<double> design_fir_from_amplitude(const std::function<double(double)>& amplitude_at_hz,
                                              std::size_t n_taps, int sample_rate);

/// Gain curve used between band centers: linear in dB over log-frequency,
/// held flat beyond the outermost centers.
double interpolate_band_gain_db(std::span<const double> centers, std::span<const double> gains_db, double f_hz);

/// Linear convolution, trimmed to the input length with the group delay removed.
AudioBuffer apply_eq(const AudioBuffer& x, const EqFilter& eq);

/// |H(e^{jw})| of a tap sequence at f_hz.
double fir_magnitude(std::span<const double> taps, double f_hz, int sample_rate);

/// Mean PSD inside [lo, hi) Hz; nearest bin to the band center if the band holds no bin.
double band_mean(const PowerSpectrum& s, double lo_hz, double hi_hz);

/// Band edges at geometric midpoints between centers (n_bands + 1 values).
std::vector<double> band_edges(std::span<const double> centers);

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& buf);

}  // namespace voxid
