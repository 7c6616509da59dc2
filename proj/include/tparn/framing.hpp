#pragma once

#include <vector>

#include "tparn/waveform.hpp"

namespace tparn {

/// Frames of a multichannel waveform, [channels x num_frames x frame_size].
/// pad_len records the zeros appended to the signal so that every sample is
/// covered and the last frame is full.
struct FrameTensor {
  int channels = 0;
  long num_frames = 0;  // T
  int frame_size = 0;   // L
  int frame_shift = 0;  // K
  long pad_len = 0;
  std::vector<double> data;

  double* frame(int p, long t) {
    return data.data() + (static_cast<std::size_t>(p) * num_frames + t) * frame_size;
  }
  const double* frame(int p, long t) const {
    return data.data() + (static_cast<std::size_t>(p) * num_frames + t) * frame_size;
  }
};

/// Chunks of a frame tensor, [channels x num_chunks x chunk_size x feature].
/// feature equals the frame size at the framing boundary and the model width
/// inside the network. frame_pad records zero-frames appended before chunking.
struct ChunkTensor {
  int channels = 0;   // P
  long num_chunks = 0;  // C
  int chunk_size = 0;   // R
  int chunk_shift = 0;  // S
  long frame_pad = 0;
  int feature = 0;  // F
  std::vector<double> data;

  std::size_t index(int p, long c, int r) const {
    return ((static_cast<std::size_t>(p) * num_chunks + c) * chunk_size + r) * feature;
  }
  double* at(int p, long c, int r) { return data.data() + index(p, c, r); }
  const double* at(int p, long c, int r) const { return data.data() + index(p, c, r); }
};

/// Minimal right zero-padding so that (n - window) is a nonnegative multiple
/// of shift. Returns the padded length (>= window).
long padded_length(long n, int window, int shift);

/// Splits a waveform into overlapping frames of length L every K samples.
/// Throws std::invalid_argument on empty input or K outside (0, L].
FrameTensor frame_signal(const Waveform& w, int frame_size, int frame_shift);

/// Rectangular-window overlap-add with coverage-count normalization; exact
/// inverse of frame_signal. original_n is the unpadded sample count.
Waveform overlap_add_frames(const FrameTensor& f, long original_n);

/// Groups frames into overlapping chunks of R frames every S frames.
ChunkTensor chunk_frames(const FrameTensor& f, int chunk_size, int chunk_shift);

/// Overlap-add along the chunk axis; exact inverse of chunk_frames.
/// frame_shift/pad_len are carried through so the result feeds overlap_add_frames.
FrameTensor overlap_add_chunks(const ChunkTensor& c, long original_t, int frame_shift = 0, long pad_len = 0);

// Adjoints of the two overlap-add reconstructions, used for backpropagation
// through the synthesis path. Given d(loss)/d(output) they return
// d(loss)/d(input) of the corresponding forward op.
FrameTensor overlap_add_frames_adjoint(const Waveform& grad_wave, const FrameTensor& like);
ChunkTensor overlap_add_chunks_adjoint(const FrameTensor& grad_frames, const ChunkTensor& like);

}  // namespace tparn
