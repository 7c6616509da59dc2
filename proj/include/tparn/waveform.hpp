#pragma once

#include <cstddef>
#include <vector>

namespace tparn {

/// Multichannel sample matrix, laid out row-major as [channels x num_samples].
struct Waveform {
  int channels = 0;
  long num_samples = 0;
  int sample_rate = 16000;
  std::vector<double> samples;

  Waveform() = default;
  Waveform(int p, long n, int fs = 16000)
      : channels(p), num_samples(n), sample_rate(fs), samples(static_cast<std::size_t>(p) * n, 0.0) {}

  double& at(int p, long n) { return samples[static_cast<std::size_t>(p) * num_samples + n]; }
  double at(int p, long n) const { return samples[static_cast<std::size_t>(p) * num_samples + n]; }

  double* channel(int p) { return samples.data() + static_cast<std::size_t>(p) * num_samples; }
  const double* channel(int p) const { return samples.data() + static_cast<std::size_t>(p) * num_samples; }

  /// Copies one channel out as a mono waveform.
  Waveform mono(int p) const {
    Waveform w(1, num_samples, sample_rate);
    const double* src = channel(p);
    for (long n = 0; n < num_samples; ++n) w.samples[n] = src[n];
    return w;
  }
};

}  // namespace tparn
