#include "tparn/loss.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <stdexcept>

#include "tparn/framing.hpp"

namespace tparn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Precomputed one-sided DFT basis: re = frames * cos, im = -frames * sin.
struct DftBasis {
  RowMat cos_mat, sin_mat;  // [fft_size x F]
  std::vector<double> window;

  explicit DftBasis(int fft_size) {
    const int bins = fft_size / 2 + 1;
    cos_mat.resize(fft_size, bins);
    sin_mat.resize(fft_size, bins);
    window.resize(fft_size);
    for (int n = 0; n < fft_size; ++n) {
      window[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / fft_size);
      for (int f = 0; f < bins; ++f) {
        const double phase = 2.0 * M_PI * n * f / fft_size;
        cos_mat(n, f) = std::cos(phase);
        sin_mat(n, f) = std::sin(phase);
      }
    }
  }

  static const DftBasis& get(int fft_size) {
    thread_local std::map<int, DftBasis> cache;
    auto it = cache.find(fft_size);
    if (it == cache.end()) it = cache.emplace(fft_size, DftBasis(fft_size)).first;
    return it->second;
  }
};

void check_stft_args(int fft_size, int hop) {
  if (!is_power_of_two(fft_size)) throw std::invalid_argument("fft size must be a power of two");
  if (hop <= 0 || hop > fft_size) throw std::invalid_argument("hop must be in (0, fft size]");
}

void check_same_shape(const Waveform& a, const Waveform& b) {
  if (a.channels != b.channels || a.num_samples != b.num_samples)
    throw std::invalid_argument("shape mismatch");
}

long stft_num_frames(long n, int fft_size, int hop) {
  return (padded_length(n, fft_size, hop) - fft_size) / hop + 1;
}

// Windowed frames of one channel, [T x fft_size].
RowMat windowed_frames(const double* x, long n, long t_frames, const DftBasis& basis, int hop) {
  const int fft = static_cast<int>(basis.window.size());
  RowMat frames = RowMat::Zero(t_frames, fft);
  for (long t = 0; t < t_frames; ++t) {
    const long start = t * hop;
    for (int k = 0; k < fft && start + k < n; ++k) frames(t, k) = x[start + k] * basis.window[k];
  }
  return frames;
}

}  // namespace

Spectrogram stft(const Waveform& w, int fft_size, int hop) {
  check_stft_args(fft_size, hop);
  const DftBasis& basis = DftBasis::get(fft_size);
  const long t_frames = stft_num_frames(w.num_samples, fft_size, hop);

  Spectrogram s;
  s.channels = w.channels;
  s.num_frames = t_frames;
  s.num_bins = fft_size / 2 + 1;
  s.fft_size = fft_size;
  s.hop = hop;
  s.re.resize(static_cast<std::size_t>(w.channels) * t_frames * s.num_bins);
  s.im.resize(s.re.size());

  for (int p = 0; p < w.channels; ++p) {
    const RowMat frames = windowed_frames(w.channel(p), w.num_samples, t_frames, basis, hop);
    Eigen::Map<RowMat> re(s.re.data() + static_cast<std::size_t>(p) * t_frames * s.num_bins, t_frames,
                          s.num_bins);
    Eigen::Map<RowMat> im(s.im.data() + static_cast<std::size_t>(p) * t_frames * s.num_bins, t_frames,
                          s.num_bins);
    re.noalias() = frames * basis.cos_mat;
    im.noalias() = -frames * basis.sin_mat;
  }
  return s;
}

Waveform estimate_interference(const Waveform& x, const Waveform& d_hat) {
  check_same_shape(x, d_hat);
  Waveform u = x;
  for (std::size_t i = 0; i < u.samples.size(); ++i) u.samples[i] -= d_hat.samples[i];
  return u;
}

namespace {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double sm_loss_impl(const Waveform& d, const Waveform& d_hat, const StftConfig& cfg,
                    Waveform* grad_d_hat) {
  check_same_shape(d, d_hat);
  check_stft_args(cfg.fft_size, cfg.hop);
  const Spectrogram sd = stft(d, cfg.fft_size, cfg.hop);
  const Spectrogram se = stft(d_hat, cfg.fft_size, cfg.hop);

  const double norm =
      1.0 / (static_cast<double>(sd.channels) * sd.num_frames * sd.num_bins);
  double loss = 0.0;
  std::vector<double> dre, dim;
  if (grad_d_hat != nullptr) {
    dre.assign(se.re.size(), 0.0);
    dim.assign(se.im.size(), 0.0);
  }
  for (std::size_t i = 0; i < sd.re.size(); ++i) {
    const double diff =
        (std::abs(sd.re[i]) + std::abs(sd.im[i])) - (std::abs(se.re[i]) + std::abs(se.im[i]));
    loss += std::abs(diff);
    if (grad_d_hat != nullptr) {
      // d|diff|/d|Ê| = -sgn(diff); chain through the magnitudes.
      const double outer = -sgn(diff);
      dre[i] = outer * sgn(se.re[i]) * norm;
      dim[i] = outer * sgn(se.im[i]) * norm;
    }
  }
  loss *= norm;

  if (grad_d_hat != nullptr) {
    const DftBasis& basis = DftBasis::get(cfg.fft_size);
    *grad_d_hat = Waveform(d_hat.channels, d_hat.num_samples, d_hat.sample_rate);
    for (int p = 0; p < d_hat.channels; ++p) {
      Eigen::Map<const RowMat> gre(dre.data() + static_cast<std::size_t>(p) * se.num_frames * se.num_bins,
                                   se.num_frames, se.num_bins);
      Eigen::Map<const RowMat> gim(dim.data() + static_cast<std::size_t>(p) * se.num_frames * se.num_bins,
                                   se.num_frames, se.num_bins);
      // re = frames*C, im = -frames*S  =>  d frames = gre*C^T - gim*S^T
      RowMat gframes = gre * basis.cos_mat.transpose();
      gframes.noalias() -= gim * basis.sin_mat.transpose();
      double* gw = grad_d_hat->channel(p);
      for (long t = 0; t < se.num_frames; ++t) {
        const long start = t * static_cast<long>(cfg.hop);
        for (int k = 0; k < cfg.fft_size && start + k < d_hat.num_samples; ++k)
          gw[start + k] += gframes(t, k) * basis.window[k];
      }
    }
  }
  return loss;
}

}  // namespace

double sm_loss(const Waveform& d, const Waveform& d_hat, const StftConfig& cfg) {
  return sm_loss_impl(d, d_hat, cfg, nullptr);
}

Waveform sm_loss_grad(const Waveform& d, const Waveform& d_hat, const StftConfig& cfg) {
  Waveform grad;
  sm_loss_impl(d, d_hat, cfg, &grad);
  return grad;
}

LossReport pcm_loss(const Waveform& x, const Waveform& d, const Waveform& d_hat, const StftConfig& cfg) {
  check_same_shape(x, d);
  check_same_shape(x, d_hat);
  const Waveform u = estimate_interference(x, d);
  const Waveform u_hat = estimate_interference(x, d_hat);
  LossReport r;
  r.speech_term = sm_loss(d, d_hat, cfg);
  r.interference_term = sm_loss(u, u_hat, cfg);
  r.total = 0.5 * r.speech_term + 0.5 * r.interference_term;
  return r;
}

Waveform pcm_loss_grad(const Waveform& x, const Waveform& d, const Waveform& d_hat, const StftConfig& cfg) {
  check_same_shape(x, d);
  check_same_shape(x, d_hat);
  const Waveform u = estimate_interference(x, d);
  const Waveform u_hat = estimate_interference(x, d_hat);
  Waveform g = sm_loss_grad(d, d_hat, cfg);
  const Waveform gu = sm_loss_grad(u, u_hat, cfg);
  // U_hat = X - D_hat, so the interference term contributes with flipped sign.
  for (std::size_t i = 0; i < g.samples.size(); ++i)
    g.samples[i] = 0.5 * g.samples[i] - 0.5 * gu.samples[i];
  return g;
}

double mse_loss(const Waveform& d, const Waveform& d_hat) {
  check_same_shape(d, d_hat);
  double acc = 0.0;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const double e = d.samples[i] - d_hat.samples[i];
    acc += e * e;
  }
  return acc / static_cast<double>(d.samples.size());
}

Waveform mse_loss_grad(const Waveform& d, const Waveform& d_hat) {
  check_same_shape(d, d_hat);
  Waveform g(d.channels, d.num_samples, d.sample_rate);
  const double scale = 2.0 / static_cast<double>(d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    g.samples[i] = scale * (d_hat.samples[i] - d.samples[i]);
  return g;
}

double si_sdr(const std::vector<double>& estimate, const std::vector<double>& reference) {
  if (estimate.size() != reference.size()) throw std::invalid_argument("length mismatch");
  if (estimate.empty()) throw std::invalid_argument("empty signals");
  double dot = 0.0, ref_energy = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    dot += estimate[i] * reference[i];
    ref_energy += reference[i] * reference[i];
  }
  if (ref_energy == 0.0) throw std::invalid_argument("undefined reference");

  const double alpha = dot / ref_energy;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference[i];
    const double r = estimate[i] - t;
    target += t * t;
    residual += r * r;
  }
  if (target == 0.0) return -100.0;
  if (residual == 0.0) return 100.0;
  const double value = 10.0 * std::log10(target / residual);
  return std::min(100.0, std::max(-100.0, value));
}

}  // namespace tparn
