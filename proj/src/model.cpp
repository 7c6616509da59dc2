#include "tparn/model.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace tparn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

void linear_forward_flat(const double* x, long rows, const Linear& lin, double* y) {
  CMapRM xm(x, rows, lin.in());
  MapRM ym(y, rows, lin.out());
  ym.noalias() = xm * lin.w;
  ym.rowwise() += lin.b.transpose();
}

void linear_backward_flat(const double* x, const double* gy, long rows, const Linear& lin,
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

std::vector<Path> stage_order(const TparnConfig& cfg, bool has_spatial) {
  if (!has_spatial) return {Path::kIntra, Path::kInter};
  switch (cfg.spatial_location) {
    case SpatialLocation::kPre: return {Path::kSpatial, Path::kIntra, Path::kInter};
    case SpatialLocation::kMid: return {Path::kIntra, Path::kSpatial, Path::kInter};
    case SpatialLocation::kPost: return {Path::kIntra, Path::kInter, Path::kSpatial};
  }
  throw std::logic_error("unknown spatial location");
}

Linear make_linear(long in, long out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear lin;
  lin.w = Mat(in, out);
  for (long j = 0; j < out; ++j)
    for (long i = 0; i < in; ++i) lin.w(i, j) = rng.uniform(-bound, bound);
  lin.b = Vec(out);
  for (long i = 0; i < out; ++i) lin.b[i] = rng.uniform(-bound, bound);
  return lin;
}

void visit_linear(const std::string& prefix, Linear& lin, const ParamVisitor& fn) {
  fn(prefix + ".w", lin.w.data(), lin.w.size());
  fn(prefix + ".b", lin.b.data(), lin.b.size());
}

}  // namespace

const char* to_string(SpatialVariant v) {
  switch (v) {
    case SpatialVariant::kAttention: return "attention";
    case SpatialVariant::kRnn: return "rnn";
    case SpatialVariant::kArn: return "arn";
  }
  return "?";
}

const char* to_string(SpatialLocation l) {
  switch (l) {
    case SpatialLocation::kPre: return "pre";
    case SpatialLocation::kMid: return "mid";
    case SpatialLocation::kPost: return "post";
  }
  return "?";
}

const char* to_string(OutputMode m) {
  switch (m) {
    case OutputMode::kMimo: return "mimo";
    case OutputMode::kMiso: return "miso";
    case OutputMode::kSiso: return "siso";
  }
  return "?";
}

SpatialVariant spatial_variant_from_string(const std::string& s) {
  if (s == "attention") return SpatialVariant::kAttention;
  if (s == "rnn") return SpatialVariant::kRnn;
  if (s == "arn") return SpatialVariant::kArn;
  throw std::invalid_argument("unknown spatial variant: " + s);
}

SpatialLocation spatial_location_from_string(const std::string& s) {
  if (s == "pre") return SpatialLocation::kPre;
  if (s == "mid") return SpatialLocation::kMid;
  if (s == "post") return SpatialLocation::kPost;
  throw std::invalid_argument("unknown spatial location: " + s);
}

OutputMode output_mode_from_string(const std::string& s) {
  if (s == "mimo") return OutputMode::kMimo;
  if (s == "miso") return OutputMode::kMiso;
  if (s == "siso") return OutputMode::kSiso;
  throw std::invalid_argument("unknown output mode: " + s);
}

bool TparnConfig::block_has_spatial(int k) const {
  return std::find(spatial_blocks.begin(), spatial_blocks.end(), k) != spatial_blocks.end();
}

void validate_config(const TparnConfig& cfg) {
  if (cfg.channels < 1) throw std::invalid_argument("channels must be >= 1");
  if (cfg.frame_size < 1 || cfg.frame_shift < 1 || cfg.frame_shift > cfg.frame_size)
    throw std::invalid_argument("frame shift must be in (0, frame size]");
  if (cfg.chunk_size < 1 || cfg.chunk_shift < 1 || cfg.chunk_shift > cfg.chunk_size)
    throw std::invalid_argument("chunk shift must be in (0, chunk size]");
  if (cfg.feature_dim < 1) throw std::invalid_argument("feature dim must be >= 1");
  if (cfg.num_blocks < 1) throw std::invalid_argument("num blocks must be >= 1");
  for (int k : cfg.spatial_blocks)
    if (k < 1 || k > cfg.num_blocks) throw std::invalid_argument("spatial block id out of range");
  if (cfg.reference_channel < 0 || cfg.reference_channel >= cfg.channels)
    throw std::invalid_argument("reference channel out of range");
  if (cfg.output_mode == OutputMode::kSiso && cfg.channels != 1)
    throw std::invalid_argument("siso mode requires a single channel");
  if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0)
    throw std::invalid_argument("dropout rate must be in [0, 1)");
}

void TparnParams::refresh_gate_caches() {
  for (auto& blk : blocks) {
    if (blk.intra.has_attention) blk.intra.attention.refresh_gate_cache();
    if (blk.inter.has_attention) blk.inter.attention.refresh_gate_cache();
    if (blk.spatial.has_value() && blk.spatial->has_attention) blk.spatial->attention.refresh_gate_cache();
  }
}

TparnParams make_tparn_params(const TparnConfig& cfg, Rng& rng) {
  validate_config(cfg);
  const long d = cfg.feature_dim;
  TparnParams p;
  p.encoder = make_linear(cfg.frame_size, d, rng);
  p.blocks.resize(cfg.num_blocks);
  for (int k = 1; k <= cfg.num_blocks; ++k) {
    TparnBlockParams& blk = p.blocks[k - 1];
    if (k > 1) blk.input_proj = make_linear(static_cast<long>(k) * d, d, rng);
    blk.intra = make_arn_params(d, true, true, cfg.dropout_rate, rng);
    blk.inter = make_arn_params(d, true, true, cfg.dropout_rate, rng);
    if (cfg.block_has_spatial(k)) {
      const bool has_rnn = cfg.spatial_variant != SpatialVariant::kAttention;
      const bool has_att = cfg.spatial_variant != SpatialVariant::kRnn;
      blk.spatial = make_arn_params(d, has_rnn, has_att, cfg.dropout_rate, rng);
    }
  }
  p.decoder = make_linear(d, cfg.frame_size, rng);
  return p;
}

TparnParams zeros_like(const TparnParams& like) {
  TparnParams z = like;
  z.encoder.w.setZero();
  z.encoder.b.setZero();
  z.decoder.w.setZero();
  z.decoder.b.setZero();
  for (auto& blk : z.blocks) {
    if (blk.input_proj.w.size() > 0) {
      blk.input_proj.w.setZero();
      blk.input_proj.b.setZero();
    }
    blk.intra = zeros_like(static_cast<const ArnParams&>(blk.intra));
    blk.inter = zeros_like(static_cast<const ArnParams&>(blk.inter));
    if (blk.spatial.has_value()) blk.spatial = zeros_like(static_cast<const ArnParams&>(*blk.spatial));
  }
  return z;
}

SequenceBatch reshape_for_path(const ChunkTensor& x, Path path) {
  const long P = x.channels, C = x.num_chunks, R = x.chunk_size, D = x.feature;
  switch (path) {
    case Path::kIntra: {
      // [P x C x R x D] is already contiguous as [P*C x R x D].
      SequenceBatch seq(P * C, R, D);
      seq.data = x.data;
      return seq;
    }
    case Path::kInter: {
      SequenceBatch seq(P * R, C, D);
      for (long p = 0; p < P; ++p)
        for (long c = 0; c < C; ++c)
          for (long r = 0; r < R; ++r)
            std::memcpy(seq.at(p * R + r, c), x.at(static_cast<int>(p), c, static_cast<int>(r)),
                        sizeof(double) * D);
      return seq;
    }
    case Path::kSpatial: {
      SequenceBatch seq(R * C, P, D);
      for (long p = 0; p < P; ++p)
        for (long c = 0; c < C; ++c)
          for (long r = 0; r < R; ++r)
            std::memcpy(seq.at(r * C + c, p), x.at(static_cast<int>(p), c, static_cast<int>(r)),
                        sizeof(double) * D);
      return seq;
    }
  }
  throw std::logic_error("unknown path");
}

void reshape_from_path(const SequenceBatch& seq, Path path, ChunkTensor& out) {
  const long P = out.channels, C = out.num_chunks, R = out.chunk_size, D = out.feature;
  out.data.resize(static_cast<std::size_t>(P) * C * R * D);
  switch (path) {
    case Path::kIntra:
      std::memcpy(out.data.data(), seq.data.data(), sizeof(double) * seq.data.size());
      return;
    case Path::kInter:
      for (long p = 0; p < P; ++p)
        for (long c = 0; c < C; ++c)
          for (long r = 0; r < R; ++r)
            std::memcpy(out.at(static_cast<int>(p), c, static_cast<int>(r)), seq.at(p * R + r, c),
                        sizeof(double) * D);
      return;
    case Path::kSpatial:
      for (long p = 0; p < P; ++p)
        for (long c = 0; c < C; ++c)
          for (long r = 0; r < R; ++r)
            std::memcpy(out.at(static_cast<int>(p), c, static_cast<int>(r)), seq.at(r * C + c, p),
                        sizeof(double) * D);
      return;
  }
  throw std::logic_error("unknown path");
}

namespace {

ArnCache* cache_for(TparnBlockCache* cache, Path path) {
  if (cache == nullptr) return nullptr;
  switch (path) {
    case Path::kIntra: return &cache->intra;
    case Path::kInter: return &cache->inter;
    case Path::kSpatial: return &cache->spatial;
  }
  return nullptr;
}

const ArnParams& params_for(const TparnBlockParams& params, Path path) {
  switch (path) {
    case Path::kIntra: return params.intra;
    case Path::kInter: return params.inter;
    case Path::kSpatial: return *params.spatial;
  }
  throw std::logic_error("unknown path");
}

ArnParams& grads_for(TparnBlockParams& grads, Path path) {
  switch (path) {
    case Path::kIntra: return grads.intra;
    case Path::kInter: return grads.inter;
    case Path::kSpatial: return *grads.spatial;
  }
  throw std::logic_error("unknown path");
}

}  // namespace

ChunkTensor tparn_block(const ChunkTensor& x, int block_id, const TparnBlockParams& params,
                        const TparnConfig& cfg, bool eval_mode, Rng* rng, TparnBlockCache* cache) {
  const long d = cfg.feature_dim;
  const long expected = static_cast<long>(block_id) * d;
  if (x.feature != expected)
    throw std::invalid_argument("block input width mismatch: expected " + std::to_string(expected) +
                                ", got " + std::to_string(x.feature));
  const long rows = static_cast<long>(x.channels) * x.num_chunks * x.chunk_size;

  ChunkTensor work = x;
  work.feature = static_cast<int>(d);
  if (block_id > 1) {
    if (cache != nullptr) cache->input = x.data;
    work.data.resize(static_cast<std::size_t>(rows) * d);
    linear_forward_flat(x.data.data(), rows, params.input_proj, work.data.data());
  }

  for (Path path : stage_order(cfg, params.spatial.has_value())) {
    SequenceBatch seq = reshape_for_path(work, path);
    SequenceBatch out = arn_forward(seq, params_for(params, path), eval_mode, rng, cache_for(cache, path));
    reshape_from_path(out, path, work);
  }
  return work;
}

namespace {

// Gradient of tparn_block wrt its input, accumulating parameter grads.
std::vector<double> tparn_block_backward(const std::vector<double>& grad_out_data,
                                         const ChunkTensor& geom, int block_id,
                                         const TparnBlockParams& params, const TparnConfig& cfg,
                                         const TparnBlockCache& cache, TparnBlockParams& grads) {
  const long d = cfg.feature_dim;
  const long rows = static_cast<long>(geom.channels) * geom.num_chunks * geom.chunk_size;

  ChunkTensor work = geom;
  work.feature = static_cast<int>(d);
  work.data = grad_out_data;

  auto order = stage_order(cfg, params.spatial.has_value());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Path path = *it;
    SequenceBatch seq_grad = reshape_for_path(work, path);
    const ArnCache* ac = cache_for(const_cast<TparnBlockCache*>(&cache), path);
    SequenceBatch g = arn_backward(seq_grad, *ac, params_for(params, path), grads_for(grads, path));
    reshape_from_path(g, path, work);
  }

  if (block_id > 1) {
    std::vector<double> grad_in(static_cast<std::size_t>(rows) * block_id * d);
    linear_backward_flat(cache.input.data(), work.data.data(), rows, params.input_proj,
                         grads.input_proj, grad_in.data());
    return grad_in;
  }
  return std::move(work.data);
}

// Decoder + chunk OLA + frame OLA shared by the MIMO and MISO heads.
Waveform decode_to_waveform(const std::vector<double>& dec_in, const ChunkTensor& geom_d,
                            const TparnParams& params, const TparnConfig& cfg, long original_t,
                            long frame_pad_len, long original_n, TparnForwardCache* cache) {
  const long rows = static_cast<long>(geom_d.channels) * geom_d.num_chunks * geom_d.chunk_size;
  ChunkTensor dec = geom_d;
  dec.feature = cfg.frame_size;
  dec.data.resize(static_cast<std::size_t>(rows) * cfg.frame_size);
  linear_forward_flat(dec_in.data(), rows, params.decoder, dec.data.data());

  FrameTensor frames = overlap_add_chunks(dec, original_t, cfg.frame_shift, frame_pad_len);
  Waveform out = overlap_add_frames(frames, original_n);

  if (cache != nullptr) {
    cache->dec_in = dec_in;
    cache->dec_geom = dec;
    cache->dec_geom.data.clear();
    cache->frame_geom = frames;
    cache->frame_geom.data.clear();
    cache->original_n = original_n;
  }
  return out;
}

}  // namespace

Waveform tparn_forward(const Waveform& w, const TparnParams& params, const TparnConfig& cfg,
                       bool eval_mode, Rng* rng, TparnForwardCache* cache) {
  if (w.channels != cfg.channels) throw std::invalid_argument("channel count does not match configuration");
  const long d = cfg.feature_dim;

  FrameTensor frames = frame_signal(w, cfg.frame_size, cfg.frame_shift);
  ChunkTensor chunks = chunk_frames(frames, cfg.chunk_size, cfg.chunk_shift);
  const long rows = static_cast<long>(chunks.channels) * chunks.num_chunks * chunks.chunk_size;

  std::vector<double> enc(static_cast<std::size_t>(rows) * d);
  linear_forward_flat(chunks.data.data(), rows, params.encoder, enc.data());

  if (cache != nullptr) {
    cache->enc_in = chunks;
    cache->enc_out = enc;
    cache->blocks.assign(params.blocks.size(), {});
  }

  ChunkTensor geom = chunks;  // carries P/C/R/S/frame_pad; feature varies per use
  geom.data.clear();

  std::vector<std::vector<double>> outputs;  // y_k, each [rows x D]
  outputs.reserve(params.blocks.size());
  std::vector<double> concat;
  for (std::size_t k = 1; k <= params.blocks.size(); ++k) {
    ChunkTensor input = geom;
    input.feature = static_cast<int>(k * d);
    if (k == 1) {
      input.data = enc;
    } else {
      concat.resize(static_cast<std::size_t>(rows) * k * d);
      for (long r = 0; r < rows; ++r) {
        double* dst = concat.data() + r * k * d;
        std::memcpy(dst, enc.data() + r * d, sizeof(double) * d);
        for (std::size_t j = 0; j < k - 1; ++j)
          std::memcpy(dst + (j + 1) * d, outputs[j].data() + r * d, sizeof(double) * d);
      }
      input.data = concat;
    }
    ChunkTensor y = tparn_block(input, static_cast<int>(k), params.blocks[k - 1], cfg, eval_mode, rng,
                                cache != nullptr ? &cache->blocks[k - 1] : nullptr);
    outputs.push_back(std::move(y.data));
  }

  const std::vector<double>& final_out = outputs.back();
  const long t = frames.num_frames;

  if (cfg.output_mode == OutputMode::kMiso) {
    const long per_ch = chunks.num_chunks * static_cast<long>(chunks.chunk_size);
    std::vector<double> mean(static_cast<std::size_t>(per_ch) * d, 0.0);
    for (long p = 0; p < cfg.channels; ++p)
      for (long i = 0; i < per_ch * d; ++i) mean[i] += final_out[p * per_ch * d + i];
    const double inv = 1.0 / static_cast<double>(cfg.channels);
    for (auto& v : mean) v *= inv;
    ChunkTensor geom1 = geom;
    geom1.channels = 1;
    return decode_to_waveform(mean, geom1, params, cfg, t, frames.pad_len, w.num_samples, cache);
  }
  return decode_to_waveform(final_out, geom, params, cfg, t, frames.pad_len, w.num_samples, cache);
}

Waveform mimo_to_miso(const ChunkTensor& final_block_output, const TparnParams& params,
                      const TparnConfig& cfg, long original_num_samples) {
  const long d = cfg.feature_dim;
  if (final_block_output.feature != d) throw std::invalid_argument("expected a D-wide block output");
  const long per_ch = final_block_output.num_chunks * static_cast<long>(final_block_output.chunk_size);
  std::vector<double> mean(static_cast<std::size_t>(per_ch) * d, 0.0);
  for (long p = 0; p < final_block_output.channels; ++p)
    for (long i = 0; i < per_ch * d; ++i) mean[i] += final_block_output.data[p * per_ch * d + i];
  const double inv = 1.0 / static_cast<double>(final_block_output.channels);
  for (auto& v : mean) v *= inv;

  const long t_pad = (final_block_output.num_chunks - 1) * static_cast<long>(final_block_output.chunk_shift) +
                     final_block_output.chunk_size;
  const long t = t_pad - final_block_output.frame_pad;
  const long n_pad = (t - 1) * static_cast<long>(cfg.frame_shift) + cfg.frame_size;
  if (original_num_samples < 1 || original_num_samples > n_pad)
    throw std::invalid_argument("original sample count inconsistent with chunk geometry");

  ChunkTensor geom1 = final_block_output;
  geom1.data.clear();
  geom1.channels = 1;
  return decode_to_waveform(mean, geom1, params, cfg, t, n_pad - original_num_samples,
                            original_num_samples, nullptr);
}

void tparn_backward(const Waveform& grad_out, const TparnForwardCache& cache, const TparnParams& params,
                    const TparnConfig& cfg, TparnParams& grads) {
  const long d = cfg.feature_dim;
  const long rows = static_cast<long>(cache.enc_in.channels) * cache.enc_in.num_chunks * cache.enc_in.chunk_size;
  const long dec_rows = static_cast<long>(cache.dec_geom.channels) * cache.dec_geom.num_chunks *
                        cache.dec_geom.chunk_size;

  FrameTensor gframes = overlap_add_frames_adjoint(grad_out, cache.frame_geom);
  ChunkTensor gdec = overlap_add_chunks_adjoint(gframes, cache.dec_geom);

  std::vector<double> ddec_in(static_cast<std::size_t>(dec_rows) * d);
  linear_backward_flat(cache.dec_in.data(), gdec.data.data(), dec_rows, params.decoder, grads.decoder,
                       ddec_in.data());

  const std::size_t nb = params.blocks.size();
  std::vector<std::vector<double>> grad_y(nb);
  if (cfg.output_mode == OutputMode::kMiso) {
    // Channel mean: broadcast the single-channel gradient back over channels.
    const long per_ch = dec_rows * d;  // dec_rows == C*R for one channel
    grad_y[nb - 1].resize(static_cast<std::size_t>(rows) * d);
    const double inv = 1.0 / static_cast<double>(cfg.channels);
    for (long p = 0; p < cfg.channels; ++p)
      for (long i = 0; i < per_ch; ++i) grad_y[nb - 1][p * per_ch + i] = ddec_in[i] * inv;
  } else {
    grad_y[nb - 1] = std::move(ddec_in);
  }

  std::vector<double> denc(static_cast<std::size_t>(rows) * d, 0.0);
  ChunkTensor geom = cache.enc_in;
  geom.data.clear();

  for (std::size_t k = nb; k >= 1; --k) {
    std::vector<double> grad_in =
        tparn_block_backward(grad_y[k - 1], geom, static_cast<int>(k), params.blocks[k - 1], cfg,
                             cache.blocks[k - 1], grads.blocks[k - 1]);
    // Split the k*D-wide input gradient into the encoder slice and earlier outputs.
    for (long r = 0; r < rows; ++r) {
      const double* src = grad_in.data() + r * k * d;
      for (long i = 0; i < d; ++i) denc[r * d + i] += src[i];
      for (std::size_t j = 0; j + 1 < k; ++j) {
        if (grad_y[j].empty()) grad_y[j].assign(static_cast<std::size_t>(rows) * d, 0.0);
        double* dst = grad_y[j].data() + r * d;
        const double* seg = src + (j + 1) * d;
        for (long i = 0; i < d; ++i) dst[i] += seg[i];
      }
    }
  }

  linear_backward_flat(cache.enc_in.data.data(), denc.data(), rows, params.encoder, grads.encoder, nullptr);
}

long count_params(const TparnParams& p) {
  long total = 0;
  visit_params(p, [&total](const std::string&, const double*, long n) { total += n; });
  return total;
}

std::vector<std::pair<std::string, long>> param_count_report(const TparnParams& p) {
  std::vector<std::pair<std::string, long>> report;
  report.emplace_back("encoder", p.encoder.w.size() + p.encoder.b.size());
  for (std::size_t k = 1; k <= p.blocks.size(); ++k) {
    long n = 0;
    const std::string prefix = "block" + std::to_string(k);
    visit_params(p, [&](const std::string& name, const double*, long size) {
      if (name.rfind(prefix + ".", 0) == 0) n += size;
    });
    report.emplace_back(prefix, n);
  }
  report.emplace_back("decoder", p.decoder.w.size() + p.decoder.b.size());
  return report;
}

void visit_params(TparnParams& p, const ParamVisitor& fn) {
  visit_linear("encoder", p.encoder, fn);
  for (std::size_t k = 1; k <= p.blocks.size(); ++k) {
    TparnBlockParams& blk = p.blocks[k - 1];
    const std::string prefix = "block" + std::to_string(k);
    if (blk.input_proj.w.size() > 0) visit_linear(prefix + ".input_proj", blk.input_proj, fn);
    visit_arn_params(prefix + ".intra", blk.intra, fn);
    visit_arn_params(prefix + ".inter", blk.inter, fn);
    if (blk.spatial.has_value()) visit_arn_params(prefix + ".spatial", *blk.spatial, fn);
  }
  visit_linear("decoder", p.decoder, fn);
}

void visit_params(const TparnParams& p, const ConstParamVisitor& fn) {
  visit_params(const_cast<TparnParams&>(p),
               [&fn](const std::string& name, double* data, long n) { fn(name, data, n); });
}

}  // namespace tparn
