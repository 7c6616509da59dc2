#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tparn/loss.hpp"
#include "tparn/model.hpp"

namespace tparn {

enum class LossKind { kPcm, kMse };

LossKind loss_kind_from_string(const std::string& s);
const char* to_string(LossKind k);

struct RunConfig {
  TparnConfig model;
  LossKind loss = LossKind::kPcm;
  double lr = 4e-4;
  int batch_size = 8;
  int epochs = 100;
  double crop_seconds = 4.0;
  int lr_halving_patience = 5;
  std::uint64_t seed = 17;
  StftConfig stft;
  double grad_clip = 5.0;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Halves the learning rate when the best validation loss has not improved
/// for `patience` consecutive epochs.
class LrSchedule {
 public:
  LrSchedule(double initial_lr, int patience) : lr_(initial_lr), patience_(patience) {}

  /// Feed one epoch's validation loss; returns the learning rate for the
  /// next epoch.
  double update(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      stale_ = 0;
    } else if (++stale_ >= patience_) {
      lr_ *= 0.5;
      stale_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  int patience_;
  int stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Adam with bias correction; state laid out against the visit_params order.
class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(TparnParams& params, const TparnParams& grads, double lr);

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

/// Scales grads in place so the global l2 norm is at most max_norm; returns
/// the pre-clip norm.
double clip_grad_norm(TparnParams& grads, double max_norm);

struct TrainingExample {
  std::string id;
  Waveform x;  // mixture
  Waveform d;  // direct-path target
};

struct ManifestEntry {
  std::string id;
  std::string mix_path;
  std::string target_path;
  long num_samples = 0;
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
TrainingExample load_example(const ManifestEntry& entry);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  TparnParams best_params;
  double best_val_loss = 0.0;
  std::vector<EpochLog> log;
  std::vector<double> step_losses;  // per optimizer step, in order
};

using ProgressFn = std::function<void(const EpochLog&)>;

/// Core loop over in-memory examples: random crops, batched gradient
/// accumulation, Adam with gradient clipping, validation-driven LR halving,
/// best-validation parameter retention. Deterministic given (cfg, data).
/// Throws on a NaN loss, naming the offending batch seed.
TrainResult train_examples(const RunConfig& cfg, const std::vector<TrainingExample>& train_set,
                           const std::vector<TrainingExample>& val_set,
                           const ProgressFn& progress = nullptr);

/// Manifest-driven wrapper: loads the wavs, runs train_examples, writes
/// checkpoint + JSONL log under out_dir. Returns the result.
TrainResult train(const RunConfig& cfg, const std::string& train_manifest,
                  const std::string& val_manifest, const std::string& out_dir,
                  const ProgressFn& progress = nullptr);

/// Forward + loss + backward for one (possibly cropped) example; the
/// building block of train_examples, also used by gradient checks.
double training_step_loss(const RunConfig& cfg, const TparnParams& params, const Waveform& x,
                          const Waveform& d, Rng& dropout_rng, TparnParams& grads);

struct EvalRow {
  std::string id;
  bool missing = false;
  double si_sdr_in = 0.0;
  double si_sdr_out = 0.0;
  double pcm = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_si_sdr_in = 0.0;
  double mean_si_sdr_out = 0.0;
  double mean_improvement = 0.0;
  std::vector<std::string> missing_ids;
};

/// Scores enhanced files named <id>_enhanced.wav in enhanced_dir against the
/// manifest's references on the given reference channel. Missing files are
/// reported, not fatal.
EvalReport evaluate_enhanced(const std::vector<ManifestEntry>& manifest, const std::string& enhanced_dir,
                             int reference_channel, const StftConfig& stft_cfg = {});

}  // namespace tparn
