#pragma once

// Synthetic speech-like and noise-like signal generators for self-contained
// training checks. The "speech" is a harmonic source with a wandering pitch
// and a segment-wise amplitude envelope; noise is low-passed white noise.

#include <cmath>
#include <vector>

#include "tparn/rng.hpp"
#include "tparn/waveform.hpp"

namespace synth {

inline tparn::Waveform speech_like(long n, tparn::Rng& rng, double fs = 16000.0) {
  tparn::Waveform w(1, n, static_cast<int>(fs));
  const double f0 = rng.uniform(120.0, 250.0);
  const double vibrato_rate = rng.uniform(3.0, 7.0);
  const double vibrato_depth = rng.uniform(0.01, 0.04);
  const int harmonics = 5;
  double amps[harmonics], phases[harmonics];
  for (int h = 0; h < harmonics; ++h) {
    amps[h] = rng.uniform(0.3, 1.0) / (h + 1);
    phases[h] = rng.uniform(0.0, 2.0 * M_PI);
  }
  // Piecewise envelope with voiced segments and pauses.
  std::vector<double> env(n, 0.0);
  long pos = 0;
  while (pos < n) {
    const long seg = 800 + static_cast<long>(rng.uniform_index(2400));
    const bool voiced = rng.uniform() < 0.75;
    const double level = voiced ? rng.uniform(0.4, 1.0) : 0.0;
    for (long i = 0; i < seg && pos + i < n; ++i) {
      const double ramp = std::min({1.0, i / 200.0, (seg - 1.0 - i) / 200.0});
      env[pos + i] = level * std::max(0.0, ramp);
    }
    pos += seg;
  }
  double phase = 0.0;
  for (long i = 0; i < n; ++i) {
    const double f = f0 * (1.0 + vibrato_depth * std::sin(2.0 * M_PI * vibrato_rate * i / fs));
    phase += 2.0 * M_PI * f / fs;
    double s = 0.0;
    for (int h = 0; h < harmonics; ++h) s += amps[h] * std::sin((h + 1) * phase + phases[h]);
    w.samples[i] = 0.25 * env[i] * s;
  }
  return w;
}

inline tparn::Waveform noise_like(long n, tparn::Rng& rng, double fs = 16000.0) {
  tparn::Waveform w(1, n, static_cast<int>(fs));
  const double cutoff = rng.uniform(500.0, 4000.0);
  const double a = std::exp(-2.0 * M_PI * cutoff / fs);
  double state = 0.0;
  for (long i = 0; i < n; ++i) {
    state = a * state + (1.0 - a) * rng.uniform(-1.0, 1.0);
    w.samples[i] = 4.0 * state;
  }
  return w;
}

}  // namespace synth
