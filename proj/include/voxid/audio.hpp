#pragma once

#include <filesystem>
#include <vector>

namespace voxid {

inline constexpr int kSampleRate = 16000;

/// Mono signal, nominal range [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

/// Reads a 16 kHz mono 16-bit PCM RIFF/WAVE file. Any other layout is rejected.
AudioBuffer read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM; samples are clipped to [-1, 1) and rounded to the nearest code.
/// With a nonzero `error_feedback` c, the rounding error q[n] of each sample
/// is subtracted (times c) from the next one, so the written error is
/// q[n] - c q[n-1]. Passing the emphasis coefficient makes a later
/// de-emphasis see white quantization error of at most half a code.
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio, double error_feedback = 0.0);

/// Mean squared amplitude over the whole buffer.
double mean_power(const AudioBuffer& audio);

}  // namespace voxid
