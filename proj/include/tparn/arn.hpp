#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tparn/rng.hpp"

namespace tparn {

/// Batched sequences of feature vectors, [batch x seq_len x feat] row-major.
struct SequenceBatch {
  long batch = 0;
  long seq_len = 0;
  long feat = 0;
  std::vector<double> data;

  SequenceBatch() = default;
  SequenceBatch(long b, long u, long d)
      : batch(b), seq_len(u), feat(d), data(static_cast<std::size_t>(b) * u * d, 0.0) {}

  long rows() const { return batch * seq_len; }
  double* at(long b, long u) { return data.data() + (b * seq_len + u) * feat; }
  const double* at(long b, long u) const { return data.data() + (b * seq_len + u) * feat; }
};

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

/// y = x * w + b with w stored [in x out].
struct Linear {
  Mat w;
  Vec b;
  long in() const { return w.rows(); }
  long out() const { return w.cols(); }
};

/// Feature-axis normalization with learnable gain and bias, eps = 1e-5.
struct LayerNorm {
  Vec gain;
  Vec bias;
};

/// One LSTM direction; gate order inside the 4D axis is (input, forget, cell, output).
struct LstmDir {
  Mat wx;  // [in x 4D]
  Mat wh;  // [D x 4D]
  Vec b;   // [4D]
};

struct BiLstm {
  LstmDir fwd, bwd;
};

/// Trainable gating vectors and linear maps of the attention module. The
/// value gate Sigm(lin_v1(vp)) * Tanh(lin_v2(vp)) is input-independent, so it
/// is computed from parameters during training and read from cached_vgate in
/// evaluation mode.
struct AttentionParams {
  RowVec qp, kp, vp;  // [1 x D]
  Linear lin_q;       // applied to the query tensor
  Linear lin_v1, lin_v2;  // applied to vp
  RowVec cached_vgate;    // empty until refreshed

  RowVec compute_vgate() const;
  void refresh_gate_cache() { cached_vgate = compute_vgate(); }
};

/// Full parameter set of one attentive recurrent network. has_rnn /
/// has_attention select the reduced variants used for spatial processing.
struct ArnParams {
  bool has_rnn = true;
  bool has_attention = true;
  LayerNorm rnn_ln1, rnn_ln2;
  BiLstm rnn;
  Linear rnn_proj;   // D -> D
  Linear rnn_merge;  // 3D -> D
  LayerNorm att_ln1, att_ln2;
  AttentionParams attention;
  LayerNorm ff_ln1, ff_ln2;
  Linear ff_in;   // D -> 4D
  Linear ff_out;  // 4D -> D
  double dropout_rate = 0.05;

  long width() const { return ff_in.in(); }
};

/// Uniform +-1/sqrt(fan_in) weight init; gate vectors start at zero, layer
/// norm at identity.
ArnParams make_arn_params(long dim, bool has_rnn, bool has_attention, double dropout_rate, Rng& rng);

// ---- forward caches (everything the analytic backward pass consumes) ----

struct LayerNormCache {
  std::vector<double> xhat;     // [rows x D]
  std::vector<double> inv_std;  // [rows]
};

struct LstmDirCache {
  // Step-major buffers in the direction's processing order.
  std::vector<double> x;      // [U x B x D] inputs
  std::vector<double> gates;  // [U x B x 4D] activated gates
  std::vector<double> c;      // [U x B x D] cell states
  std::vector<double> h;      // [U x B x D] hidden states
};

struct RnnBlockCache {
  LayerNormCache ln1, ln2;
  std::vector<double> ln1_out, ln2_out;
  LstmDirCache fwd, bwd;
  std::vector<double> merge_in;  // [rows x 3D] concat of BiLSTM output and projected input
};

struct AttentionBlockCache {
  LayerNormCache ln1, ln2;
  std::vector<double> ln1_out, ln2_out;  // query / key-value sources
  std::vector<double> linq_out;          // [rows x D]
  std::vector<double> probs;             // [B x U x U] softmax rows
  std::vector<double> vr;                // [rows x D]
  RowVec gate_s, gate_t;                 // Sigm and Tanh halves of the value gate
  bool gate_from_cache = false;
};

struct FfBlockCache {
  LayerNormCache ln1, ln2;
  std::vector<double> ln1_out;
  std::vector<double> mid;             // [rows x 4D] pre-GELU
  std::vector<unsigned char> keep;     // dropout keep mask, empty when inactive
  double keep_prob = 1.0;
};

struct ArnCache {
  long batch = 0, seq_len = 0, dim = 0;
  RnnBlockCache rnn;
  AttentionBlockCache att;
  FfBlockCache ff;
};

// ---- spec operations ----

struct GatedQkv {
  SequenceBatch qr, kr, vr;
};

/// Eq.-style gating of query/key/value. In evaluation mode the value gate is
/// read from cached_vgate and a missing cache is an error.
GatedQkv gate_qkv(const SequenceBatch& q, const SequenceBatch& k, const SequenceBatch& v,
                  const AttentionParams& p, bool eval_mode);

/// Scaled dot-product attention, softmax over the key axis, computed per
/// batch element. probs_out, when given, receives the [B x U x U] weights.
SequenceBatch attention(const SequenceBatch& qr, const SequenceBatch& kr, const SequenceBatch& vr,
                        std::vector<double>* probs_out = nullptr);

SequenceBatch rnn_block(const SequenceBatch& x, const ArnParams& p, RnnBlockCache* cache = nullptr);
SequenceBatch attention_block(const SequenceBatch& x, const ArnParams& p, bool eval_mode,
                              AttentionBlockCache* cache = nullptr);
SequenceBatch feedforward_block(const SequenceBatch& x, const ArnParams& p, bool training,
                                Rng* rng = nullptr, FfBlockCache* cache = nullptr);

/// RNN block, attention block, feedforward block in sequence (reduced
/// variants skip the corresponding stage).
SequenceBatch arn_forward(const SequenceBatch& x, const ArnParams& p, bool eval_mode,
                          Rng* rng = nullptr, ArnCache* cache = nullptr);

// ---- analytic backward passes; gradients accumulate into `grads` ----

SequenceBatch rnn_block_backward(const SequenceBatch& grad_out, const RnnBlockCache& cache,
                                 const ArnParams& p, ArnParams& grads);
SequenceBatch attention_block_backward(const SequenceBatch& grad_out, const AttentionBlockCache& cache,
                                       const ArnParams& p, ArnParams& grads);
SequenceBatch feedforward_block_backward(const SequenceBatch& grad_out, const FfBlockCache& cache,
                                         const ArnParams& p, ArnParams& grads);
SequenceBatch arn_backward(const SequenceBatch& grad_out, const ArnCache& cache,
                           const ArnParams& p, ArnParams& grads);

/// Same shapes as `like`, all values zero. Gradient accumulator factory.
ArnParams zeros_like(const ArnParams& like);

/// Visits every trainable array as ("<prefix>.<sub_block>.<param>", data, size).
using ArnParamVisitor = std::function<void(const std::string&, double*, long)>;
void visit_arn_params(const std::string& prefix, ArnParams& p, const ArnParamVisitor& fn);

}  // namespace tparn
