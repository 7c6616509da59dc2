#pragma once

#include <vector>

#include "tparn/waveform.hpp"

namespace tparn {

/// One-sided spectrogram, real and imaginary parts as [P x T x F] tensors.
struct Spectrogram {
  int channels = 0;
  long num_frames = 0;  // T
  int num_bins = 0;     // F = fft_size/2 + 1
  int fft_size = 0;
  int hop = 0;
  std::vector<double> re, im;

  std::size_t index(int p, long t, int f) const {
    return (static_cast<std::size_t>(p) * num_frames + t) * num_bins + f;
  }
};

struct StftConfig {
  int fft_size = 512;
  int hop = 256;
};

/// Hann-windowed one-sided transform; signals shorter than one window are
/// zero-padded. fft_size must be a power of two, hop in (0, fft_size].
Spectrogram stft(const Waveform& w, int fft_size, int hop);

/// U = X - D_hat, elementwise.
Waveform estimate_interference(const Waveform& x, const Waveform& d_hat);

/// Mean absolute difference of the magnitude proxies |Re| + |Im| between the
/// spectrograms of both signals, normalized by P*T*F.
double sm_loss(const Waveform& d, const Waveform& d_hat, const StftConfig& cfg = {});

/// Gradient of sm_loss wrt d_hat (subgradient zero at kinks).
Waveform sm_loss_grad(const Waveform& d, const Waveform& d_hat, const StftConfig& cfg = {});

struct LossReport {
  double total = 0.0;
  double speech_term = 0.0;
  double interference_term = 0.0;
};

/// total = 0.5 * sm(D, D_hat) + 0.5 * sm(U, U_hat) with U = X - D and
/// U_hat = X - D_hat.
LossReport pcm_loss(const Waveform& x, const Waveform& d, const Waveform& d_hat,
                    const StftConfig& cfg = {});

Waveform pcm_loss_grad(const Waveform& x, const Waveform& d, const Waveform& d_hat,
                       const StftConfig& cfg = {});

double mse_loss(const Waveform& d, const Waveform& d_hat);
Waveform mse_loss_grad(const Waveform& d, const Waveform& d_hat);

/// Scale-invariant signal-to-distortion ratio in dB, capped at +-100 when the
/// residual or the scaled target vanishes. Throws on an all-zero reference.
double si_sdr(const std::vector<double>& estimate, const std::vector<double>& reference);

}  // namespace tparn
