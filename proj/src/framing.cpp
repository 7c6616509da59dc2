#include "tparn/framing.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace tparn {

long padded_length(long n, int window, int shift) {
  if (n <= window) return window;
  const long rem = (n - window) % shift;
  return rem == 0 ? n : n + (shift - rem);
}

FrameTensor frame_signal(const Waveform& w, int frame_size, int frame_shift) {
  if (w.channels < 1 || w.num_samples < 1) throw std::invalid_argument("empty input");
  if (frame_shift <= 0 || frame_shift > frame_size) throw std::invalid_argument("frame shift must be in (0, frame size]");

  const long n_pad = padded_length(w.num_samples, frame_size, frame_shift);
  FrameTensor f;
  f.channels = w.channels;
  f.frame_size = frame_size;
  f.frame_shift = frame_shift;
  f.pad_len = n_pad - w.num_samples;
  f.num_frames = (n_pad - frame_size) / frame_shift + 1;
  f.data.assign(static_cast<std::size_t>(w.channels) * f.num_frames * frame_size, 0.0);

  for (int p = 0; p < w.channels; ++p) {
    const double* src = w.channel(p);
    for (long t = 0; t < f.num_frames; ++t) {
      const long start = t * frame_shift;
      const long count = std::min<long>(frame_size, w.num_samples - start);
      if (count > 0) std::memcpy(f.frame(p, t), src + start, sizeof(double) * count);
    }
  }
  return f;
}

namespace {

// Coverage count of sample/frame index i under (window, shift, total units).
std::vector<double> coverage(long padded_n, int window, int shift, long units) {
  std::vector<double> cov(padded_n, 0.0);
  for (long t = 0; t < units; ++t)
    for (int k = 0; k < window; ++k) cov[t * shift + k] += 1.0;
  return cov;
}

}  // namespace

Waveform overlap_add_frames(const FrameTensor& f, long original_n) {
  const long n_pad = (f.num_frames - 1) * static_cast<long>(f.frame_shift) + f.frame_size;
  if (original_n < 1 || original_n > n_pad || n_pad - original_n != f.pad_len)
    throw std::invalid_argument("original sample count inconsistent with frame tensor");

  const auto cov = coverage(n_pad, f.frame_size, f.frame_shift, f.num_frames);
  Waveform w(f.channels, original_n);
  std::vector<double> acc(n_pad);
  for (int p = 0; p < f.channels; ++p) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (long t = 0; t < f.num_frames; ++t) {
      const double* fr = f.frame(p, t);
      double* dst = acc.data() + t * f.frame_shift;
      for (int k = 0; k < f.frame_size; ++k) dst[k] += fr[k];
    }
    double* out = w.channel(p);
    for (long n = 0; n < original_n; ++n) out[n] = acc[n] / cov[n];
  }
  return w;
}

ChunkTensor chunk_frames(const FrameTensor& f, int chunk_size, int chunk_shift) {
  if (chunk_shift <= 0 || chunk_shift > chunk_size) throw std::invalid_argument("chunk shift must be in (0, chunk size]");

  const long t_pad = padded_length(f.num_frames, chunk_size, chunk_shift);
  ChunkTensor c;
  c.channels = f.channels;
  c.chunk_size = chunk_size;
  c.chunk_shift = chunk_shift;
  c.frame_pad = t_pad - f.num_frames;
  c.num_chunks = (t_pad - chunk_size) / chunk_shift + 1;
  c.feature = f.frame_size;
  c.data.assign(static_cast<std::size_t>(c.channels) * c.num_chunks * chunk_size * c.feature, 0.0);

  for (int p = 0; p < f.channels; ++p)
    for (long ci = 0; ci < c.num_chunks; ++ci)
      for (int r = 0; r < chunk_size; ++r) {
        const long t = ci * chunk_shift + r;
        if (t < f.num_frames) std::memcpy(c.at(p, ci, r), f.frame(p, t), sizeof(double) * c.feature);
      }
  return c;
}

FrameTensor overlap_add_chunks(const ChunkTensor& c, long original_t, int frame_shift, long pad_len) {
  const long t_pad = (c.num_chunks - 1) * static_cast<long>(c.chunk_shift) + c.chunk_size;
  if (original_t < 1 || original_t > t_pad || t_pad - original_t != c.frame_pad)
    throw std::invalid_argument("original frame count inconsistent with chunk tensor");

  const auto cov = coverage(t_pad, c.chunk_size, c.chunk_shift, c.num_chunks);
  FrameTensor f;
  f.channels = c.channels;
  f.num_frames = original_t;
  f.frame_size = c.feature;
  f.frame_shift = frame_shift;
  f.pad_len = pad_len;
  f.data.assign(static_cast<std::size_t>(c.channels) * original_t * c.feature, 0.0);

  for (int p = 0; p < c.channels; ++p) {
    for (long ci = 0; ci < c.num_chunks; ++ci)
      for (int r = 0; r < c.chunk_size; ++r) {
        const long t = ci * c.chunk_shift + r;
        if (t >= original_t) continue;
        const double* src = c.at(p, ci, r);
        double* dst = f.frame(p, t);
        for (int k = 0; k < c.feature; ++k) dst[k] += src[k];
      }
    for (long t = 0; t < original_t; ++t) {
      double* dst = f.frame(p, t);
      for (int k = 0; k < c.feature; ++k) dst[k] /= cov[t];
    }
  }
  return f;
}

FrameTensor overlap_add_frames_adjoint(const Waveform& grad_wave, const FrameTensor& like) {
  const long n_pad = (like.num_frames - 1) * static_cast<long>(like.frame_shift) + like.frame_size;
  const auto cov = coverage(n_pad, like.frame_size, like.frame_shift, like.num_frames);

  FrameTensor g = like;
  g.data.assign(static_cast<std::size_t>(like.channels) * like.num_frames * like.frame_size, 0.0);
  for (int p = 0; p < like.channels; ++p) {
    const double* gw = grad_wave.channel(p);
    for (long t = 0; t < like.num_frames; ++t) {
      double* dst = g.frame(p, t);
      for (int k = 0; k < like.frame_size; ++k) {
        const long n = t * like.frame_shift + k;
        if (n < grad_wave.num_samples) dst[k] = gw[n] / cov[n];
      }
    }
  }
  return g;
}

ChunkTensor overlap_add_chunks_adjoint(const FrameTensor& grad_frames, const ChunkTensor& like) {
  const long t_pad = (like.num_chunks - 1) * static_cast<long>(like.chunk_shift) + like.chunk_size;
  const auto cov = coverage(t_pad, like.chunk_size, like.chunk_shift, like.num_chunks);

  ChunkTensor g = like;
  g.data.assign(static_cast<std::size_t>(like.channels) * like.num_chunks * like.chunk_size * like.feature, 0.0);
  for (int p = 0; p < like.channels; ++p)
    for (long ci = 0; ci < like.num_chunks; ++ci)
      for (int r = 0; r < like.chunk_size; ++r) {
        const long t = ci * like.chunk_shift + r;
        if (t >= grad_frames.num_frames) continue;
        const double* src = grad_frames.frame(p, t);
        double* dst = g.at(p, ci, r);
        for (int k = 0; k < like.feature; ++k) dst[k] = src[k] / cov[t];
      }
  return g;
}

}  // namespace tparn
