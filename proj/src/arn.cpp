#include "tparn/arn.hpp"

#include <cmath>
#include <cstring>

namespace tparn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

constexpr double kLnEps = 1e-5;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

void check_finite_dims(const SequenceBatch& x) {
  if (x.batch < 1 || x.seq_len < 1 || x.feat < 1) throw std::invalid_argument("sequence batch must be non-empty");
}

// y = x * w + b over flat [rows x in] buffers.
void linear_forward(const double* x, long rows, const Linear& lin, double* y) {
  CMapRM xm(x, rows, lin.in());
  MapRM ym(y, rows, lin.out());
  ym.noalias() = xm * lin.w;
  ym.rowwise() += lin.b.transpose();
}

// Accumulates dW/db, returns grad wrt x in gx (overwritten).
void linear_backward(const double* x, const double* gy, long rows, const Linear& lin,
                     Linear& grad, double* gx) {
  CMapRM xm(x, rows, lin.in());
  CMapRM gym(gy, rows, lin.out());
  grad.w.noalias() += xm.transpose() * gym;
  grad.b.noalias() += gym.colwise().sum().transpose();
  if (gx != nullptr) {
    MapRM gxm(gx, rows, lin.in());
    gxm.noalias() = gym * lin.w.transpose();
  }
}

void layer_norm_forward(const double* x, long rows, const LayerNorm& ln, double* y, LayerNormCache* cache) {
  const long d = ln.gain.size();
  if (cache != nullptr) {
    cache->xhat.resize(static_cast<std::size_t>(rows) * d);
    cache->inv_std.resize(rows);
  }
  for (long r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double* yr = y + r * d;
    double mean = 0.0;
    for (long i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (long i = 0; i < d; ++i) {
      const double c = xr[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + kLnEps);
    for (long i = 0; i < d; ++i) {
      const double xh = (xr[i] - mean) * inv_std;
      yr[i] = ln.gain[i] * xh + ln.bias[i];
      if (cache != nullptr) cache->xhat[r * d + i] = xh;
    }
    if (cache != nullptr) cache->inv_std[r] = inv_std;
  }
}

// gx may alias gy.
void layer_norm_backward(const double* gy, long rows, const LayerNorm& ln, const LayerNormCache& cache,
                         LayerNorm& grad, double* gx) {
  const long d = ln.gain.size();
  std::vector<double> dxhat(d);
  for (long r = 0; r < rows; ++r) {
    const double* gyr = gy + r * d;
    const double* xh = cache.xhat.data() + r * d;
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (long i = 0; i < d; ++i) {
      grad.gain[i] += gyr[i] * xh[i];
      grad.bias[i] += gyr[i];
      dxhat[i] = gyr[i] * ln.gain[i];
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * xh[i];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    const double inv_std = cache.inv_std[r];
    double* gxr = gx + r * d;
    for (long i = 0; i < d; ++i) gxr[i] = inv_std * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
  }
}

// ---- LSTM ----
//
// All step-major buffers use the direction's processing order: step s of the
// forward direction is time s, of the backward direction time U-1-s.

struct LstmShape {
  long batch, steps, dim;
};

void lstm_dir_forward(const double* x_bm, const LstmShape& s, bool reverse, const LstmDir& p,
                      double* out_bm, long out_stride, long out_offset, LstmDirCache& cache) {
  const long B = s.batch, U = s.steps, D = s.dim;
  const long rows = B * U;
  cache.x.resize(static_cast<std::size_t>(rows) * D);
  cache.gates.resize(static_cast<std::size_t>(rows) * 4 * D);
  cache.c.resize(static_cast<std::size_t>(rows) * D);
  cache.h.resize(static_cast<std::size_t>(rows) * D);

  // Gather batch-major [B x U x D] input into step-major [U x B x D].
  for (long step = 0; step < U; ++step) {
    const long t = reverse ? U - 1 - step : step;
    for (long b = 0; b < B; ++b)
      std::memcpy(cache.x.data() + (step * B + b) * D, x_bm + (b * U + t) * D, sizeof(double) * D);
  }

  // Input contribution for every step at once.
  CMapRM xm(cache.x.data(), rows, D);
  MapRM gm(cache.gates.data(), rows, 4 * D);
  gm.noalias() = xm * p.wx;
  gm.rowwise() += p.b.transpose();

  std::vector<double> h_prev(static_cast<std::size_t>(B) * D, 0.0);
  std::vector<double> c_prev(static_cast<std::size_t>(B) * D, 0.0);
  for (long step = 0; step < U; ++step) {
    double* gates = cache.gates.data() + step * B * 4 * D;
    {
      CMapRM hm(h_prev.data(), B, D);
      MapRM gsm(gates, B, 4 * D);
      gsm.noalias() += hm * p.wh;
    }
    double* c_t = cache.c.data() + step * B * D;
    double* h_t = cache.h.data() + step * B * D;
    for (long b = 0; b < B; ++b) {
      double* g = gates + b * 4 * D;
      for (long i = 0; i < D; ++i) {
        const double gi = sigmoid(g[i]);
        const double gf = sigmoid(g[D + i]);
        const double gc = std::tanh(g[2 * D + i]);
        const double go = sigmoid(g[3 * D + i]);
        g[i] = gi;
        g[D + i] = gf;
        g[2 * D + i] = gc;
        g[3 * D + i] = go;
        const double c = gf * c_prev[b * D + i] + gi * gc;
        c_t[b * D + i] = c;
        h_t[b * D + i] = go * std::tanh(c);
      }
    }
    std::memcpy(h_prev.data(), h_t, sizeof(double) * B * D);
    std::memcpy(c_prev.data(), c_t, sizeof(double) * B * D);

    const long t = reverse ? U - 1 - step : step;
    for (long b = 0; b < B; ++b)
      std::memcpy(out_bm + (b * U + t) * out_stride + out_offset, h_t + b * D, sizeof(double) * D);
  }
}

// grad_bm: [B x U x out_stride] gradient on the concatenated BiLSTM output.
// gx_bm accumulates the gradient wrt the batch-major input.
void lstm_dir_backward(const double* grad_bm, long grad_stride, long grad_offset, const LstmShape& s,
                       bool reverse, const LstmDir& p, const LstmDirCache& cache, LstmDir& grad,
                       double* gx_bm) {
  const long B = s.batch, U = s.steps, D = s.dim;
  const long rows = B * U;
  std::vector<double> dgates(static_cast<std::size_t>(rows) * 4 * D);
  std::vector<double> dh(static_cast<std::size_t>(B) * D, 0.0);
  std::vector<double> dc(static_cast<std::size_t>(B) * D, 0.0);

  for (long step = U - 1; step >= 0; --step) {
    const long t = reverse ? U - 1 - step : step;
    const double* gates = cache.gates.data() + step * B * 4 * D;
    const double* c_t = cache.c.data() + step * B * D;
    const double* c_prev = step > 0 ? cache.c.data() + (step - 1) * B * D : nullptr;
    double* dg = dgates.data() + step * B * 4 * D;

    for (long b = 0; b < B; ++b) {
      const double* g = gates + b * 4 * D;
      double* dgb = dg + b * 4 * D;
      for (long i = 0; i < D; ++i) {
        const double dh_t = dh[b * D + i] + grad_bm[(b * U + t) * grad_stride + grad_offset + i];
        const double gi = g[i], gf = g[D + i], gc = g[2 * D + i], go = g[3 * D + i];
        const double tc = std::tanh(c_t[b * D + i]);
        const double dcell = dc[b * D + i] + dh_t * go * (1.0 - tc * tc);
        const double cprev = c_prev != nullptr ? c_prev[b * D + i] : 0.0;
        dgb[i] = dcell * gc * gi * (1.0 - gi);
        dgb[D + i] = dcell * cprev * gf * (1.0 - gf);
        dgb[2 * D + i] = dcell * gi * (1.0 - gc * gc);
        dgb[3 * D + i] = dh_t * tc * go * (1.0 - go);
        dc[b * D + i] = dcell * gf;
      }
    }
    // Recurrent gradient into the previous step's hidden state.
    CMapRM dgm(dg, B, 4 * D);
    MapRM dhm(dh.data(), B, D);
    dhm.noalias() = dgm * p.wh.transpose();
  }

  CMapRM xm(cache.x.data(), rows, D);
  CMapRM dgm(dgates.data(), rows, 4 * D);
  grad.wx.noalias() += xm.transpose() * dgm;
  grad.b.noalias() += dgm.colwise().sum().transpose();
  // h_{prev} rows: zero at step 0, cache.h shifted by one step otherwise.
  if (U > 1) {
    CMapRM hprev(cache.h.data(), (U - 1) * B, D);
    CMapRM dglater(dgates.data() + B * 4 * D, (U - 1) * B, 4 * D);
    grad.wh.noalias() += hprev.transpose() * dglater;
  }

  std::vector<double> dx(static_cast<std::size_t>(rows) * D);
  MapRM dxm(dx.data(), rows, D);
  dxm.noalias() = dgm * p.wx.transpose();
  for (long step = 0; step < U; ++step) {
    const long t = reverse ? U - 1 - step : step;
    for (long b = 0; b < B; ++b) {
      const double* src = dx.data() + (step * B + b) * D;
      double* dst = gx_bm + (b * U + t) * D;
      for (long i = 0; i < D; ++i) dst[i] += src[i];
    }
  }
}

RowVec sigmoid_vec(const RowVec& v) {
  RowVec out(v.size());
  for (long i = 0; i < v.size(); ++i) out[i] = sigmoid(v[i]);
  return out;
}

// Applies lin (D -> D) to a parameter row vector.
RowVec linear_row(const Linear& lin, const RowVec& v) {
  return v * lin.w + lin.b.transpose();
}

}  // namespace

RowVec AttentionParams::compute_vgate() const {
  const RowVec s = sigmoid_vec(linear_row(lin_v1, vp));
  RowVec t = linear_row(lin_v2, vp);
  for (long i = 0; i < t.size(); ++i) t[i] = std::tanh(t[i]);
  return s.cwiseProduct(t);
}

GatedQkv gate_qkv(const SequenceBatch& q, const SequenceBatch& k, const SequenceBatch& v,
                  const AttentionParams& p, bool eval_mode) {
  if (q.feat != k.feat || q.feat != v.feat || q.batch != k.batch || q.batch != v.batch ||
      q.seq_len != k.seq_len || q.seq_len != v.seq_len)
    throw std::invalid_argument("query/key/value shapes must match");

  const long d = q.feat;
  const long rows = q.rows();
  GatedQkv out;
  out.qr = SequenceBatch(q.batch, q.seq_len, d);
  out.kr = SequenceBatch(q.batch, q.seq_len, d);
  out.vr = SequenceBatch(q.batch, q.seq_len, d);

  linear_forward(q.data.data(), rows, p.lin_q, out.qr.data.data());
  const RowVec sq = sigmoid_vec(p.qp);
  const RowVec sk = sigmoid_vec(p.kp);
  RowVec vgate;
  if (eval_mode) {
    if (p.cached_vgate.size() != d) throw std::runtime_error("gate cache not materialized");
    vgate = p.cached_vgate;
  } else {
    vgate = p.compute_vgate();
  }

  for (long r = 0; r < rows; ++r) {
    double* qr = out.qr.data.data() + r * d;
    double* kr = out.kr.data.data() + r * d;
    double* vr = out.vr.data.data() + r * d;
    const double* kin = k.data.data() + r * d;
    const double* vin = v.data.data() + r * d;
    for (long i = 0; i < d; ++i) {
      qr[i] *= sq[i];
      kr[i] = kin[i] * sk[i];
      vr[i] = vin[i] * vgate[i];
    }
  }
  return out;
}

SequenceBatch attention(const SequenceBatch& qr, const SequenceBatch& kr, const SequenceBatch& vr,
                        std::vector<double>* probs_out) {
  const long B = qr.batch, U = qr.seq_len, D = qr.feat;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  SequenceBatch out(B, U, D);
  if (probs_out != nullptr) probs_out->resize(static_cast<std::size_t>(B) * U * U);
  std::vector<double> scores(static_cast<std::size_t>(U) * U);

  for (long b = 0; b < B; ++b) {
    CMapRM qm(qr.data.data() + b * U * D, U, D);
    CMapRM km(kr.data.data() + b * U * D, U, D);
    CMapRM vm(vr.data.data() + b * U * D, U, D);
    MapRM sm(scores.data(), U, U);
    sm.noalias() = qm * km.transpose() * scale;
    // Row softmax, max-shifted.
    for (long i = 0; i < U; ++i) {
      double* row = scores.data() + i * U;
      double mx = row[0];
      for (long j = 1; j < U; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (long j = 0; j < U; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (long j = 0; j < U; ++j) row[j] /= sum;
    }
    if (probs_out != nullptr)
      std::memcpy(probs_out->data() + b * U * U, scores.data(), sizeof(double) * U * U);
    MapRM om(out.data.data() + b * U * D, U, D);
    om.noalias() = sm * vm;
  }
  return out;
}

ArnParams make_arn_params(long dim, bool has_rnn, bool has_attention, double dropout_rate, Rng& rng) {
  auto uniform_mat = [&rng](long in, long out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Mat m(in, out);
    for (long j = 0; j < out; ++j)
      for (long i = 0; i < in; ++i) m(i, j) = rng.uniform(-bound, bound);
    return m;
  };
  auto uniform_linear = [&](long in, long out) {
    Linear lin;
    lin.w = uniform_mat(in, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    lin.b = Vec(out);
    for (long i = 0; i < out; ++i) lin.b[i] = rng.uniform(-bound, bound);
    return lin;
  };
  auto identity_ln = [dim] {
    LayerNorm ln;
    ln.gain = Vec::Ones(dim);
    ln.bias = Vec::Zero(dim);
    return ln;
  };

  ArnParams p;
  p.has_rnn = has_rnn;
  p.has_attention = has_attention;
  p.dropout_rate = dropout_rate;
  if (has_rnn) {
    p.rnn_ln1 = identity_ln();
    p.rnn_ln2 = identity_ln();
    for (LstmDir* dir : {&p.rnn.fwd, &p.rnn.bwd}) {
      dir->wx = uniform_mat(dim, 4 * dim);
      dir->wh = uniform_mat(dim, 4 * dim);
      const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
      dir->b = Vec(4 * dim);
      for (long i = 0; i < 4 * dim; ++i) dir->b[i] = rng.uniform(-bound, bound);
    }
    p.rnn_proj = uniform_linear(dim, dim);
    p.rnn_merge = uniform_linear(3 * dim, dim);
  }
  if (has_attention) {
    p.att_ln1 = identity_ln();
    p.att_ln2 = identity_ln();
    p.attention.qp = RowVec::Zero(dim);
    p.attention.kp = RowVec::Zero(dim);
    p.attention.vp = RowVec::Zero(dim);
    p.attention.lin_q = uniform_linear(dim, dim);
    p.attention.lin_v1 = uniform_linear(dim, dim);
    p.attention.lin_v2 = uniform_linear(dim, dim);
  }
  p.ff_ln1 = identity_ln();
  p.ff_ln2 = identity_ln();
  p.ff_in = uniform_linear(dim, 4 * dim);
  p.ff_out = uniform_linear(4 * dim, dim);
  return p;
}

ArnParams zeros_like(const ArnParams& like) {
  ArnParams z = like;
  auto zero_lin = [](Linear& l) {
    l.w.setZero();
    l.b.setZero();
  };
  auto zero_ln = [](LayerNorm& l) {
    l.gain.setZero();
    l.bias.setZero();
  };
  zero_ln(z.rnn_ln1);
  zero_ln(z.rnn_ln2);
  zero_ln(z.att_ln1);
  zero_ln(z.att_ln2);
  zero_ln(z.ff_ln1);
  zero_ln(z.ff_ln2);
  for (LstmDir* dir : {&z.rnn.fwd, &z.rnn.bwd}) {
    dir->wx.setZero();
    dir->wh.setZero();
    dir->b.setZero();
  }
  zero_lin(z.rnn_proj);
  zero_lin(z.rnn_merge);
  z.attention.qp.setZero();
  z.attention.kp.setZero();
  z.attention.vp.setZero();
  zero_lin(z.attention.lin_q);
  zero_lin(z.attention.lin_v1);
  zero_lin(z.attention.lin_v2);
  z.attention.cached_vgate.resize(0);
  zero_lin(z.ff_in);
  zero_lin(z.ff_out);
  return z;
}

SequenceBatch rnn_block(const SequenceBatch& x, const ArnParams& p, RnnBlockCache* cache) {
  check_finite_dims(x);
  const long B = x.batch, U = x.seq_len, D = x.feat;
  const long rows = B * U;
  RnnBlockCache local;
  RnnBlockCache& c = cache != nullptr ? *cache : local;

  c.ln1_out.resize(static_cast<std::size_t>(rows) * D);
  c.ln2_out.resize(static_cast<std::size_t>(rows) * D);
  layer_norm_forward(x.data.data(), rows, p.rnn_ln1, c.ln1_out.data(), &c.ln1);
  layer_norm_forward(x.data.data(), rows, p.rnn_ln2, c.ln2_out.data(), &c.ln2);

  // merge_in = [BiLSTM(ln1) | proj(ln2)], width 3D.
  c.merge_in.assign(static_cast<std::size_t>(rows) * 3 * D, 0.0);
  const LstmShape shape{B, U, D};
  lstm_dir_forward(c.ln1_out.data(), shape, false, p.rnn.fwd, c.merge_in.data(), 3 * D, 0, c.fwd);
  lstm_dir_forward(c.ln1_out.data(), shape, true, p.rnn.bwd, c.merge_in.data(), 3 * D, D, c.bwd);
  std::vector<double> proj(static_cast<std::size_t>(rows) * D);
  linear_forward(c.ln2_out.data(), rows, p.rnn_proj, proj.data());
  for (long r = 0; r < rows; ++r)
    std::memcpy(c.merge_in.data() + r * 3 * D + 2 * D, proj.data() + r * D, sizeof(double) * D);

  SequenceBatch out(B, U, D);
  linear_forward(c.merge_in.data(), rows, p.rnn_merge, out.data.data());
  return out;
}

SequenceBatch rnn_block_backward(const SequenceBatch& grad_out, const RnnBlockCache& cache,
                                 const ArnParams& p, ArnParams& grads) {
  const long B = grad_out.batch, U = grad_out.seq_len, D = grad_out.feat;
  const long rows = B * U;

  std::vector<double> dmerge_in(static_cast<std::size_t>(rows) * 3 * D);
  linear_backward(cache.merge_in.data(), grad_out.data.data(), rows, p.rnn_merge, grads.rnn_merge,
                  dmerge_in.data());

  // Split the 3D gradient: BiLSTM halves and the projection slice.
  std::vector<double> dproj(static_cast<std::size_t>(rows) * D);
  for (long r = 0; r < rows; ++r)
    std::memcpy(dproj.data() + r * D, dmerge_in.data() + r * 3 * D + 2 * D, sizeof(double) * D);

  std::vector<double> dln1_out(static_cast<std::size_t>(rows) * D, 0.0);
  const LstmShape shape{B, U, D};
  lstm_dir_backward(dmerge_in.data(), 3 * D, 0, shape, false, p.rnn.fwd, cache.fwd, grads.rnn.fwd,
                    dln1_out.data());
  lstm_dir_backward(dmerge_in.data(), 3 * D, D, shape, true, p.rnn.bwd, cache.bwd, grads.rnn.bwd,
                    dln1_out.data());

  std::vector<double> dln2_out(static_cast<std::size_t>(rows) * D);
  linear_backward(cache.ln2_out.data(), dproj.data(), rows, p.rnn_proj, grads.rnn_proj, dln2_out.data());

  SequenceBatch grad_in(B, U, D);
  layer_norm_backward(dln1_out.data(), rows, p.rnn_ln1, cache.ln1, grads.rnn_ln1, dln1_out.data());
  layer_norm_backward(dln2_out.data(), rows, p.rnn_ln2, cache.ln2, grads.rnn_ln2, dln2_out.data());
  for (long i = 0; i < rows * D; ++i) grad_in.data[i] = dln1_out[i] + dln2_out[i];
  return grad_in;
}

SequenceBatch attention_block(const SequenceBatch& x, const ArnParams& p, bool eval_mode,
                              AttentionBlockCache* cache) {
  check_finite_dims(x);
  const long B = x.batch, U = x.seq_len, D = x.feat;
  const long rows = B * U;
  AttentionBlockCache local;
  AttentionBlockCache& c = cache != nullptr ? *cache : local;

  c.ln1_out.resize(static_cast<std::size_t>(rows) * D);
  c.ln2_out.resize(static_cast<std::size_t>(rows) * D);
  layer_norm_forward(x.data.data(), rows, p.att_ln1, c.ln1_out.data(), &c.ln1);
  layer_norm_forward(x.data.data(), rows, p.att_ln2, c.ln2_out.data(), &c.ln2);

  // Gating, expanded here so the cache holds the pieces backward needs.
  c.linq_out.resize(static_cast<std::size_t>(rows) * D);
  linear_forward(c.ln1_out.data(), rows, p.attention.lin_q, c.linq_out.data());
  const RowVec sq = sigmoid_vec(p.attention.qp);
  const RowVec sk = sigmoid_vec(p.attention.kp);
  RowVec vgate(D);
  c.gate_from_cache = eval_mode;
  if (eval_mode) {
    if (p.attention.cached_vgate.size() != D) throw std::runtime_error("gate cache not materialized");
    vgate = p.attention.cached_vgate;
  } else {
    c.gate_s = sigmoid_vec(linear_row(p.attention.lin_v1, p.attention.vp));
    c.gate_t = linear_row(p.attention.lin_v2, p.attention.vp);
    for (long i = 0; i < D; ++i) c.gate_t[i] = std::tanh(c.gate_t[i]);
    vgate = c.gate_s.cwiseProduct(c.gate_t);
  }

  SequenceBatch qr(B, U, D), kr(B, U, D);
  c.vr.resize(static_cast<std::size_t>(rows) * D);
  for (long r = 0; r < rows; ++r) {
    const double* kv = c.ln2_out.data() + r * D;
    const double* lq = c.linq_out.data() + r * D;
    double* q = qr.data.data() + r * D;
    double* k = kr.data.data() + r * D;
    double* v = c.vr.data() + r * D;
    for (long i = 0; i < D; ++i) {
      q[i] = lq[i] * sq[i];
      k[i] = kv[i] * sk[i];
      v[i] = kv[i] * vgate[i];
    }
  }

  SequenceBatch vr_seq(B, U, D);
  vr_seq.data = c.vr;
  SequenceBatch att = attention(qr, kr, vr_seq, &c.probs);

  SequenceBatch out(B, U, D);
  for (long i = 0; i < rows * D; ++i) out.data[i] = x.data[i] + att.data[i];
  return out;
}

SequenceBatch attention_block_backward(const SequenceBatch& grad_out, const AttentionBlockCache& cache,
                                       const ArnParams& p, ArnParams& grads) {
  const long B = grad_out.batch, U = grad_out.seq_len, D = grad_out.feat;
  const long rows = B * U;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));

  const RowVec sq = sigmoid_vec(p.attention.qp);
  const RowVec sk = sigmoid_vec(p.attention.kp);
  const RowVec vgate = cache.gate_from_cache ? p.attention.cached_vgate
                                             : RowVec(cache.gate_s.cwiseProduct(cache.gate_t));

  // Rebuild Qr/Kr from cached tensors (cheap elementwise work).
  std::vector<double> qr(static_cast<std::size_t>(rows) * D), kr(static_cast<std::size_t>(rows) * D);
  for (long r = 0; r < rows; ++r)
    for (long i = 0; i < D; ++i) {
      qr[r * D + i] = cache.linq_out[r * D + i] * sq[i];
      kr[r * D + i] = cache.ln2_out[r * D + i] * sk[i];
    }

  std::vector<double> dqr(static_cast<std::size_t>(rows) * D), dkr(static_cast<std::size_t>(rows) * D),
      dvr(static_cast<std::size_t>(rows) * D);
  std::vector<double> dprob(static_cast<std::size_t>(U) * U), dscore(static_cast<std::size_t>(U) * U);
  for (long b = 0; b < B; ++b) {
    CMapRM da(grad_out.data.data() + b * U * D, U, D);
    CMapRM pm(cache.probs.data() + b * U * U, U, U);
    CMapRM vm(cache.vr.data() + b * U * D, U, D);
    MapRM dvm(dvr.data() + b * U * D, U, D);
    dvm.noalias() = pm.transpose() * da;
    MapRM dpm(dprob.data(), U, U);
    dpm.noalias() = da * vm.transpose();
    // Softmax backward per row.
    for (long i = 0; i < U; ++i) {
      const double* pr = cache.probs.data() + b * U * U + i * U;
      const double* dpr = dprob.data() + i * U;
      double dot = 0.0;
      for (long j = 0; j < U; ++j) dot += pr[j] * dpr[j];
      double* dsr = dscore.data() + i * U;
      for (long j = 0; j < U; ++j) dsr[j] = pr[j] * (dpr[j] - dot) * scale;
    }
    CMapRM qm(qr.data() + b * U * D, U, D);
    CMapRM km(kr.data() + b * U * D, U, D);
    CMapRM dsm(dscore.data(), U, U);
    MapRM dqm(dqr.data() + b * U * D, U, D);
    MapRM dkm(dkr.data() + b * U * D, U, D);
    dqm.noalias() = dsm * km;
    dkm.noalias() = dsm.transpose() * qm;
  }

  // Through the gates.
  RowVec dqp = RowVec::Zero(D), dkp = RowVec::Zero(D), dvgate = RowVec::Zero(D);
  std::vector<double> dlinq(static_cast<std::size_t>(rows) * D);
  std::vector<double> dln2_out(static_cast<std::size_t>(rows) * D);
  for (long r = 0; r < rows; ++r) {
    const double* lq = cache.linq_out.data() + r * D;
    const double* kv = cache.ln2_out.data() + r * D;
    for (long i = 0; i < D; ++i) {
      dlinq[r * D + i] = dqr[r * D + i] * sq[i];
      dqp[i] += dqr[r * D + i] * lq[i];
      dln2_out[r * D + i] = dkr[r * D + i] * sk[i] + dvr[r * D + i] * vgate[i];
      dkp[i] += dkr[r * D + i] * kv[i];
      dvgate[i] += dvr[r * D + i] * kv[i];
    }
  }
  for (long i = 0; i < D; ++i) {
    grads.attention.qp[i] += dqp[i] * sq[i] * (1.0 - sq[i]);
    grads.attention.kp[i] += dkp[i] * sk[i] * (1.0 - sk[i]);
  }

  // Value-gate parameters only carry gradient on the training path.
  if (!cache.gate_from_cache) {
    RowVec ds = dvgate.cwiseProduct(cache.gate_t);
    RowVec dt = dvgate.cwiseProduct(cache.gate_s);
    RowVec dpre1(D), dpre2(D);
    for (long i = 0; i < D; ++i) {
      dpre1[i] = ds[i] * cache.gate_s[i] * (1.0 - cache.gate_s[i]);
      dpre2[i] = dt[i] * (1.0 - cache.gate_t[i] * cache.gate_t[i]);
    }
    grads.attention.lin_v1.w.noalias() += p.attention.vp.transpose() * dpre1;
    grads.attention.lin_v1.b.noalias() += dpre1.transpose();
    grads.attention.lin_v2.w.noalias() += p.attention.vp.transpose() * dpre2;
    grads.attention.lin_v2.b.noalias() += dpre2.transpose();
    grads.attention.vp.noalias() += dpre1 * p.attention.lin_v1.w.transpose();
    grads.attention.vp.noalias() += dpre2 * p.attention.lin_v2.w.transpose();
  }

  std::vector<double> dln1_out(static_cast<std::size_t>(rows) * D);
  linear_backward(cache.ln1_out.data(), dlinq.data(), rows, p.attention.lin_q, grads.attention.lin_q,
                  dln1_out.data());

  layer_norm_backward(dln1_out.data(), rows, p.att_ln1, cache.ln1, grads.att_ln1, dln1_out.data());
  layer_norm_backward(dln2_out.data(), rows, p.att_ln2, cache.ln2, grads.att_ln2, dln2_out.data());

  SequenceBatch grad_in = grad_out;  // residual path
  for (long i = 0; i < rows * D; ++i) grad_in.data[i] += dln1_out[i] + dln2_out[i];
  return grad_in;
}

SequenceBatch feedforward_block(const SequenceBatch& x, const ArnParams& p, bool training,
                                Rng* rng, FfBlockCache* cache) {
  check_finite_dims(x);
  const long B = x.batch, U = x.seq_len, D = x.feat;
  const long rows = B * U;
  const long H = p.ff_in.out();
  FfBlockCache local;
  FfBlockCache& c = cache != nullptr ? *cache : local;

  c.ln1_out.resize(static_cast<std::size_t>(rows) * D);
  std::vector<double> ln2_out(static_cast<std::size_t>(rows) * D);
  layer_norm_forward(x.data.data(), rows, p.ff_ln1, c.ln1_out.data(), &c.ln1);
  layer_norm_forward(x.data.data(), rows, p.ff_ln2, ln2_out.data(), &c.ln2);

  c.mid.resize(static_cast<std::size_t>(rows) * H);
  linear_forward(c.ln1_out.data(), rows, p.ff_in, c.mid.data());

  std::vector<double> act(static_cast<std::size_t>(rows) * H);
  const bool use_dropout = training && p.dropout_rate > 0.0;
  c.keep_prob = use_dropout ? 1.0 - p.dropout_rate : 1.0;
  if (use_dropout) {
    if (rng == nullptr) throw std::invalid_argument("training-mode dropout requires an rng");
    c.keep.resize(static_cast<std::size_t>(rows) * H);
    for (long i = 0; i < rows * H; ++i) {
      c.keep[i] = rng->bernoulli(c.keep_prob) ? 1 : 0;
      act[i] = c.keep[i] != 0 ? gelu(c.mid[i]) / c.keep_prob : 0.0;
    }
  } else {
    c.keep.clear();
    for (long i = 0; i < rows * H; ++i) act[i] = gelu(c.mid[i]);
  }

  SequenceBatch out(B, U, D);
  linear_forward(act.data(), rows, p.ff_out, out.data.data());
  for (long i = 0; i < rows * D; ++i) out.data[i] += ln2_out[i];
  return out;
}

SequenceBatch feedforward_block_backward(const SequenceBatch& grad_out, const FfBlockCache& cache,
                                         const ArnParams& p, ArnParams& grads) {
  const long B = grad_out.batch, U = grad_out.seq_len, D = grad_out.feat;
  const long rows = B * U;
  const long H = p.ff_in.out();

  // Rebuild the post-activation input of ff_out from the cached pre-GELU mid.
  std::vector<double> act(static_cast<std::size_t>(rows) * H);
  const bool use_dropout = !cache.keep.empty();
  for (long i = 0; i < rows * H; ++i) {
    double a = gelu(cache.mid[i]);
    if (use_dropout) a = cache.keep[i] != 0 ? a / cache.keep_prob : 0.0;
    act[i] = a;
  }

  std::vector<double> dact(static_cast<std::size_t>(rows) * H);
  linear_backward(act.data(), grad_out.data.data(), rows, p.ff_out, grads.ff_out, dact.data());

  std::vector<double> dmid(static_cast<std::size_t>(rows) * H);
  for (long i = 0; i < rows * H; ++i) {
    double g = dact[i];
    if (use_dropout) g = cache.keep[i] != 0 ? g / cache.keep_prob : 0.0;
    dmid[i] = g * gelu_grad(cache.mid[i]);
  }

  std::vector<double> dln1_out(static_cast<std::size_t>(rows) * D);
  linear_backward(cache.ln1_out.data(), dmid.data(), rows, p.ff_in, grads.ff_in, dln1_out.data());

  std::vector<double> dln2_out = grad_out.data;  // residual adds LN2(x) directly
  layer_norm_backward(dln1_out.data(), rows, p.ff_ln1, cache.ln1, grads.ff_ln1, dln1_out.data());
  layer_norm_backward(dln2_out.data(), rows, p.ff_ln2, cache.ln2, grads.ff_ln2, dln2_out.data());

  SequenceBatch grad_in(B, U, D);
  for (long i = 0; i < rows * D; ++i) grad_in.data[i] = dln1_out[i] + dln2_out[i];
  return grad_in;
}

SequenceBatch arn_forward(const SequenceBatch& x, const ArnParams& p, bool eval_mode, Rng* rng,
                          ArnCache* cache) {
  if (x.feat != p.width()) throw std::invalid_argument("sequence feature width does not match parameters");
  ArnCache local;
  ArnCache& c = cache != nullptr ? *cache : local;
  c.batch = x.batch;
  c.seq_len = x.seq_len;
  c.dim = x.feat;

  SequenceBatch cur = p.has_rnn ? rnn_block(x, p, &c.rnn) : x;
  if (p.has_attention) cur = attention_block(cur, p, eval_mode, &c.att);
  return feedforward_block(cur, p, !eval_mode, rng, &c.ff);
}

SequenceBatch arn_backward(const SequenceBatch& grad_out, const ArnCache& cache, const ArnParams& p,
                           ArnParams& grads) {
  SequenceBatch g = feedforward_block_backward(grad_out, cache.ff, p, grads);
  if (p.has_attention) g = attention_block_backward(g, cache.att, p, grads);
  if (p.has_rnn) g = rnn_block_backward(g, cache.rnn, p, grads);
  return g;
}

void visit_arn_params(const std::string& prefix, ArnParams& p, const ArnParamVisitor& fn) {
  auto lin = [&fn](const std::string& name, Linear& l) {
    fn(name + ".w", l.w.data(), l.w.size());
    fn(name + ".b", l.b.data(), l.b.size());
  };
  auto ln = [&fn](const std::string& name, LayerNorm& l) {
    fn(name + ".gain", l.gain.data(), l.gain.size());
    fn(name + ".bias", l.bias.data(), l.bias.size());
  };
  if (p.has_rnn) {
    ln(prefix + ".rnn_ln1", p.rnn_ln1);
    ln(prefix + ".rnn_ln2", p.rnn_ln2);
    for (auto&& [dir, name] : {std::pair<LstmDir*, const char*>{&p.rnn.fwd, "fwd"}, {&p.rnn.bwd, "bwd"}}) {
      fn(prefix + ".rnn." + name + ".wx", dir->wx.data(), dir->wx.size());
      fn(prefix + ".rnn." + name + ".wh", dir->wh.data(), dir->wh.size());
      fn(prefix + ".rnn." + name + ".b", dir->b.data(), dir->b.size());
    }
    lin(prefix + ".rnn_proj", p.rnn_proj);
    lin(prefix + ".rnn_merge", p.rnn_merge);
  }
  if (p.has_attention) {
    ln(prefix + ".att_ln1", p.att_ln1);
    ln(prefix + ".att_ln2", p.att_ln2);
    fn(prefix + ".att.qp", p.attention.qp.data(), p.attention.qp.size());
    fn(prefix + ".att.kp", p.attention.kp.data(), p.attention.kp.size());
    fn(prefix + ".att.vp", p.attention.vp.data(), p.attention.vp.size());
    lin(prefix + ".att.lin_q", p.attention.lin_q);
    lin(prefix + ".att.lin_v1", p.attention.lin_v1);
    lin(prefix + ".att.lin_v2", p.attention.lin_v2);
  }
  ln(prefix + ".ff_ln1", p.ff_ln1);
  ln(prefix + ".ff_ln2", p.ff_ln2);
  lin(prefix + ".ff_in", p.ff_in);
  lin(prefix + ".ff_out", p.ff_out);
}

}  // namespace tparn
