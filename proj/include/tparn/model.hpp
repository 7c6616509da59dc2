#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tparn/arn.hpp"
#include "tparn/framing.hpp"
#include "tparn/waveform.hpp"

namespace tparn {

enum class SpatialVariant { kAttention, kRnn, kArn };
enum class SpatialLocation { kPre, kMid, kPost };
enum class OutputMode { kMimo, kMiso, kSiso };

const char* to_string(SpatialVariant v);
const char* to_string(SpatialLocation l);
const char* to_string(OutputMode m);
SpatialVariant spatial_variant_from_string(const std::string& s);
SpatialLocation spatial_location_from_string(const std::string& s);
OutputMode output_mode_from_string(const std::string& s);

/// Architecture hyperparameters. Defaults are the shipped full-size
/// configuration; every size can be overridden so tests run on micro models.
struct TparnConfig {
  int channels = 4;      // P
  int frame_size = 16;   // L
  int frame_shift = 8;   // K
  int chunk_size = 126;  // R
  int chunk_shift = 63;  // S
  int feature_dim = 128; // D
  int num_blocks = 4;
  SpatialVariant spatial_variant = SpatialVariant::kArn;
  SpatialLocation spatial_location = SpatialLocation::kPost;
  std::vector<int> spatial_blocks = {1, 2, 4};  // 1-based block ids
  OutputMode output_mode = OutputMode::kMimo;
  int reference_channel = 0;
  double dropout_rate = 0.05;
  int sample_rate = 16000;

  bool block_has_spatial(int k) const;  // k is 1-based
};

/// Throws std::invalid_argument when any invariant is violated.
void validate_config(const TparnConfig& cfg);

struct TparnBlockParams {
  Linear input_proj;  // k*D -> D, present for block ids k > 1
  ArnParams intra, inter;
  std::optional<ArnParams> spatial;
};

struct TparnParams {
  Linear encoder;  // L -> D
  std::vector<TparnBlockParams> blocks;
  Linear decoder;  // D -> L

  /// Recomputes every attention value-gate cache; required before
  /// evaluation-mode forwards after parameters change.
  void refresh_gate_caches();
};

TparnParams make_tparn_params(const TparnConfig& cfg, Rng& rng);
TparnParams zeros_like(const TparnParams& like);

// ---- reshapes between the chunk layout and the three ARN paths ----

enum class Path { kIntra, kInter, kSpatial };

/// [P x C x R x D] -> intra [P*C x R x D], inter [P*R x C x D],
/// spatial [R*C x P x D].
SequenceBatch reshape_for_path(const ChunkTensor& x, Path path);

/// Exact inverse of reshape_for_path; writes into out.data (geometry taken
/// from out's fields).
void reshape_from_path(const SequenceBatch& seq, Path path, ChunkTensor& out);

// ---- forward / backward ----

struct TparnBlockCache {
  std::vector<double> input;  // [P*C*R x k*D], kept only when the block projects
  ArnCache intra, inter, spatial;
};

struct TparnForwardCache {
  long original_n = 0;
  FrameTensor frame_geom;  // geometry only, data not retained
  ChunkTensor enc_in;      // [P x C x R x L] encoder input
  std::vector<double> enc_out;
  std::vector<TparnBlockCache> blocks;
  std::vector<double> dec_in;  // decoder input (post channel-average in MISO mode)
  ChunkTensor dec_geom;        // geometry of the decoder output
};

/// One TPARN block: optional k*D -> D projection, then the intra / inter /
/// spatial ARNs in the order implied by cfg.spatial_location.
ChunkTensor tparn_block(const ChunkTensor& x, int block_id, const TparnBlockParams& params,
                        const TparnConfig& cfg, bool eval_mode, Rng* rng = nullptr,
                        TparnBlockCache* cache = nullptr);

/// Full network: framing, chunking, encoder, densely connected blocks,
/// decoder, chunk OLA, frame OLA. Returns all channels in MIMO/SISO mode and
/// a single channel in MISO mode.
Waveform tparn_forward(const Waveform& w, const TparnParams& params, const TparnConfig& cfg,
                       bool eval_mode, Rng* rng = nullptr, TparnForwardCache* cache = nullptr);

/// Channel-mean of the final block output followed by the decoder and both
/// overlap-adds; the MISO head.
Waveform mimo_to_miso(const ChunkTensor& final_block_output, const TparnParams& params,
                      const TparnConfig& cfg, long original_num_samples);

/// Backpropagates d(loss)/d(output waveform) through the whole network,
/// accumulating into grads (same shapes as params).
void tparn_backward(const Waveform& grad_out, const TparnForwardCache& cache,
                    const TparnParams& params, const TparnConfig& cfg, TparnParams& grads);

long count_params(const TparnParams& p);

/// Per-component breakdown: ("encoder", n), ("block1", n), ..., ("decoder", n).
std::vector<std::pair<std::string, long>> param_count_report(const TparnParams& p);

/// Visits every trainable array as (name, data, size); names follow
/// "block{k}.{intra|inter|spatial}.{sub_block}.{param}".
using ParamVisitor = std::function<void(const std::string&, double*, long)>;
void visit_params(TparnParams& p, const ParamVisitor& fn);
using ConstParamVisitor = std::function<void(const std::string&, const double*, long)>;
void visit_params(const TparnParams& p, const ConstParamVisitor& fn);

}  // namespace tparn
