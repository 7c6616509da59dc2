#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (direct summation, hand-unrolled recurrences) so they
// share no code path with the library.

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "tparn/rng.hpp"

namespace oracle {

// Direct O(N^2) DFT of one real frame; onesided bins.
inline void naive_dft(const std::vector<double>& frame, std::vector<double>& re,
                      std::vector<double>& im) {
  const std::size_t n = frame.size();
  const std::size_t bins = n / 2 + 1;
  re.assign(bins, 0.0);
  im.assign(bins, 0.0);
  for (std::size_t f = 0; f < bins; ++f) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double phase = -2.0 * M_PI * static_cast<double>(t) * static_cast<double>(f) /
                           static_cast<double>(n);
      acc += frame[t] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    re[f] = acc.real();
    im[f] = acc.imag();
  }
}

// Hann window matching a periodic window of length n.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

// Spectral-magnitude loss computed directly from naive DFTs of right-padded
// Hann-windowed frames; mirrors the published definition term by term.
inline double naive_sm_loss(const std::vector<std::vector<double>>& d,
                            const std::vector<std::vector<double>>& d_hat, int fft, int hop) {
  const std::size_t channels = d.size();
  const std::size_t n = d[0].size();
  std::size_t n_pad = n <= static_cast<std::size_t>(fft)
                          ? static_cast<std::size_t>(fft)
                          : n + ((n - fft) % hop == 0 ? 0 : hop - (n - fft) % hop);
  const std::size_t frames = (n_pad - fft) / hop + 1;
  const std::size_t bins = static_cast<std::size_t>(fft) / 2 + 1;
  const auto window = hann(fft);

  double acc = 0.0;
  for (std::size_t p = 0; p < channels; ++p) {
    for (std::size_t t = 0; t < frames; ++t) {
      std::vector<double> fa(fft, 0.0), fb(fft, 0.0);
      for (int k = 0; k < fft; ++k) {
        const std::size_t idx = t * hop + k;
        if (idx < n) {
          fa[k] = d[p][idx] * window[k];
          fb[k] = d_hat[p][idx] * window[k];
        }
      }
      std::vector<double> ra, ia, rb, ib;
      naive_dft(fa, ra, ia);
      naive_dft(fb, rb, ib);
      for (std::size_t f = 0; f < bins; ++f) {
        const double ma = std::abs(ra[f]) + std::abs(ia[f]);
        const double mb = std::abs(rb[f]) + std::abs(ib[f]);
        acc += std::abs(ma - mb);
      }
    }
  }
  return acc / (static_cast<double>(channels) * frames * bins);
}

// One LSTM step (gate order i, f, g, o), scalar loops only.
inline void lstm_step(const std::vector<double>& x, const std::vector<double>& h_prev,
                      const std::vector<double>& c_prev, const std::vector<std::vector<double>>& wx,
                      const std::vector<std::vector<double>>& wh, const std::vector<double>& b,
                      std::vector<double>& h, std::vector<double>& c) {
  const std::size_t d = h_prev.size();
  std::vector<double> pre(4 * d, 0.0);
  for (std::size_t j = 0; j < 4 * d; ++j) {
    pre[j] = b[j];
    for (std::size_t i = 0; i < x.size(); ++i) pre[j] += x[i] * wx[i][j];
    for (std::size_t i = 0; i < d; ++i) pre[j] += h_prev[i] * wh[i][j];
  }
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  h.assign(d, 0.0);
  c.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double gi = sig(pre[i]);
    const double gf = sig(pre[d + i]);
    const double gc = std::tanh(pre[2 * d + i]);
    const double go = sig(pre[3 * d + i]);
    c[i] = gf * c_prev[i] + gi * gc;
    h[i] = go * std::tanh(c[i]);
  }
}

// Softmax attention on tiny instances, scalar loops only.
inline std::vector<double> naive_attention(const std::vector<double>& qr, const std::vector<double>& kr,
                                           const std::vector<double>& vr, long batch, long u, long d) {
  std::vector<double> out(static_cast<std::size_t>(batch) * u * d, 0.0);
  for (long b = 0; b < batch; ++b) {
    for (long i = 0; i < u; ++i) {
      std::vector<double> score(u, 0.0);
      for (long j = 0; j < u; ++j)
        for (long k = 0; k < d; ++k)
          score[j] += qr[(b * u + i) * d + k] * kr[(b * u + j) * d + k];
      double mx = score[0];
      for (long j = 1; j < u; ++j) mx = std::max(mx, score[j]);
      double sum = 0.0;
      for (long j = 0; j < u; ++j) {
        score[j] = std::exp(score[j] / std::sqrt(static_cast<double>(d)) - mx / std::sqrt(static_cast<double>(d)));
        sum += score[j];
      }
      for (long j = 0; j < u; ++j)
        for (long k = 0; k < d; ++k)
          out[(b * u + i) * d + k] += score[j] / sum * vr[(b * u + j) * d + k];
    }
  }
  return out;
}

// Central finite difference of a scalar function at x along one coordinate.
inline double central_diff(const std::function<double(double)>& f_of_theta, double theta,
                           double step = 1e-5) {
  return (f_of_theta(theta + step) - f_of_theta(theta - step)) / (2.0 * step);
}

// Brute-force shoebox image enumeration via the classic (n, q) mirroring
// parametrization; independent of the library's signed-index walk.
struct ImageTap {
  long delay;
  double amplitude;
};

inline std::vector<double> brute_force_rir(const std::array<double, 3>& room,
                                           const std::array<double, 3>& src,
                                           const std::array<double, 3>& mic, int max_order, double beta,
                                           int fs, long rir_len) {
  std::vector<double> taps(rir_len, 0.0);
  const double c = 343.0;
  const int lim = max_order;  // |2n - q| <= max_order per axis is within this n range
  for (int nx = -lim; nx <= lim; ++nx)
    for (int qx = 0; qx <= 1; ++qx) {
      const int refl_x = std::abs(nx - qx) + std::abs(nx);
      if (refl_x > max_order) continue;
      const double px = (1 - 2 * qx) * src[0] + 2.0 * nx * room[0];
      for (int ny = -lim; ny <= lim; ++ny)
        for (int qy = 0; qy <= 1; ++qy) {
          const int refl_y = std::abs(ny - qy) + std::abs(ny);
          if (refl_x + refl_y > max_order) continue;
          const double py = (1 - 2 * qy) * src[1] + 2.0 * ny * room[1];
          for (int nz = -lim; nz <= lim; ++nz)
            for (int qz = 0; qz <= 1; ++qz) {
              const int refl = refl_x + refl_y + std::abs(nz - qz) + std::abs(nz);
              if (refl > max_order) continue;
              const double pz = (1 - 2 * qz) * src[2] + 2.0 * nz * room[2];
              const double dx = px - mic[0], dy = py - mic[1], dz = pz - mic[2];
              const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
              const long delay = std::lround(fs * dist / c);
              if (delay >= rir_len) continue;
              taps[delay] += std::pow(beta, refl) / (4.0 * M_PI * dist);
            }
        }
    }
  return taps;
}

inline std::vector<double> random_vector(std::size_t n, tparn::Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace oracle
