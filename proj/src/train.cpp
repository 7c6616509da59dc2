#include "tparn/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "tparn/checkpoint.hpp"
#include "tparn/wav_io.hpp"

namespace tparn {

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "pcm") return LossKind::kPcm;
  if (s == "mse") return LossKind::kMse;
  throw std::invalid_argument("unknown loss: " + s);
}

const char* to_string(LossKind k) { return k == LossKind::kPcm ? "pcm" : "mse"; }

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return nlohmann::json{
      {"model", config_to_json(cfg.model)},
      {"loss", to_string(cfg.loss)},
      {"lr", cfg.lr},
      {"batch_size", cfg.batch_size},
      {"epochs", cfg.epochs},
      {"crop_seconds", cfg.crop_seconds},
      {"lr_halving_patience", cfg.lr_halving_patience},
      {"seed", cfg.seed},
      {"stft", {{"fft_size", cfg.stft.fft_size}, {"hop", cfg.stft.hop}}},
      {"grad_clip", cfg.grad_clip},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("model")) cfg.model = config_from_json(j["model"]);
  if (j.contains("loss")) cfg.loss = loss_kind_from_string(j["loss"]);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.crop_seconds = j.value("crop_seconds", cfg.crop_seconds);
  cfg.lr_halving_patience = j.value("lr_halving_patience", cfg.lr_halving_patience);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("stft")) {
    cfg.stft.fft_size = j["stft"].value("fft_size", cfg.stft.fft_size);
    cfg.stft.hop = j["stft"].value("hop", cfg.stft.hop);
  }
  cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
  if (cfg.lr <= 0.0 || cfg.batch_size < 1 || cfg.epochs < 1 || cfg.crop_seconds <= 0.0 ||
      cfg.lr_halving_patience < 1)
    throw std::invalid_argument("run config values must be positive");
  return cfg;
}

void AdamOptimizer::step(TparnParams& params, const TparnParams& grads, double lr) {
  long total = count_params(params);
  if (m_.empty()) {
    m_.assign(total, 0.0);
    v_.assign(total, 0.0);
  } else if (static_cast<long>(m_.size()) != total) {
    throw std::logic_error("optimizer state does not match parameter count");
  }

  // Collect aligned segments from both structures, then update flat.
  std::vector<std::pair<double*, long>> param_segs;
  visit_params(params, [&](const std::string&, double* data, long n) { param_segs.emplace_back(data, n); });
  std::vector<std::pair<const double*, long>> grad_segs;
  visit_params(grads, [&](const std::string&, const double* data, long n) { grad_segs.emplace_back(data, n); });
  if (param_segs.size() != grad_segs.size()) throw std::logic_error("gradient structure mismatch");

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  long offset = 0;
  for (std::size_t s = 0; s < param_segs.size(); ++s) {
    double* p = param_segs[s].first;
    const double* g = grad_segs[s].first;
    const long n = param_segs[s].second;
    for (long i = 0; i < n; ++i) {
      double& m = m_[offset + i];
      double& v = v_[offset + i];
      m = beta1_ * m + (1.0 - beta1_) * g[i];
      v = beta2_ * v + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps_);
    }
    offset += n;
  }
}

double clip_grad_norm(TparnParams& grads, double max_norm) {
  double sq = 0.0;
  visit_params(grads, [&sq](const std::string&, const double* data, long n) {
    for (long i = 0; i < n; ++i) sq += data[i] * data[i];
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    visit_params(grads, [scale](const std::string&, double* data, long n) {
      for (long i = 0; i < n; ++i) data[i] *= scale;
    });
  }
  return norm;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.id = j.at("id");
    e.mix_path = j.at("mix");
    e.target_path = j.at("target");
    e.num_samples = j.value("num_samples", 0L);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw std::runtime_error("empty manifest: " + path);
  return entries;
}

TrainingExample load_example(const ManifestEntry& entry) {
  TrainingExample ex;
  ex.id = entry.id;
  ex.x = read_wav(entry.mix_path);
  ex.d = read_wav(entry.target_path);
  if (ex.x.channels != ex.d.channels || ex.x.num_samples != ex.d.num_samples)
    throw std::runtime_error("mixture/target shape mismatch for " + entry.id);
  return ex;
}

namespace {

struct Crop {
  Waveform x, d;
};

Crop crop_example(const TrainingExample& ex, long crop_len, Rng& rng) {
  if (crop_len <= 0 || crop_len >= ex.x.num_samples) return {ex.x, ex.d};
  const long start = static_cast<long>(rng.uniform_index(ex.x.num_samples - crop_len + 1));
  Crop c{Waveform(ex.x.channels, crop_len, ex.x.sample_rate),
         Waveform(ex.d.channels, crop_len, ex.d.sample_rate)};
  for (int p = 0; p < ex.x.channels; ++p)
    for (long i = 0; i < crop_len; ++i) {
      c.x.at(p, i) = ex.x.at(p, start + i);
      c.d.at(p, i) = ex.d.at(p, start + i);
    }
  return c;
}

// The MISO/SISO heads emit a single channel; compare against the reference
// channel of the target.
Waveform reference_target(const Waveform& d, const TparnConfig& model, int out_channels) {
  if (out_channels == d.channels) return d;
  return d.mono(model.reference_channel);
}

double eval_loss(const RunConfig& cfg, const TparnParams& params, const Waveform& x, const Waveform& d) {
  const Waveform y = tparn_forward(x, params, cfg.model, /*eval_mode=*/true);
  const Waveform ref = reference_target(d, cfg.model, y.channels);
  if (cfg.loss == LossKind::kMse) return mse_loss(ref, y);
  const Waveform mix_ref = reference_target(x, cfg.model, y.channels);
  return pcm_loss(mix_ref, ref, y, cfg.stft).total;
}

}  // namespace

double training_step_loss(const RunConfig& cfg, const TparnParams& params, const Waveform& x,
                          const Waveform& d, Rng& dropout_rng, TparnParams& grads) {
  TparnForwardCache cache;
  const Waveform y = tparn_forward(x, params, cfg.model, /*eval_mode=*/false, &dropout_rng, &cache);
  const Waveform ref = reference_target(d, cfg.model, y.channels);

  double loss;
  Waveform grad_wave;
  if (cfg.loss == LossKind::kMse) {
    loss = mse_loss(ref, y);
    grad_wave = mse_loss_grad(ref, y);
  } else {
    const Waveform mix_ref = reference_target(x, cfg.model, y.channels);
    loss = pcm_loss(mix_ref, ref, y, cfg.stft).total;
    grad_wave = pcm_loss_grad(mix_ref, ref, y, cfg.stft);
  }
  tparn_backward(grad_wave, cache, params, cfg.model, grads);
  return loss;
}

TrainResult train_examples(const RunConfig& cfg, const std::vector<TrainingExample>& train_set,
                           const std::vector<TrainingExample>& val_set, const ProgressFn& progress) {
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  validate_config(cfg.model);

  Rng init_rng(cfg.seed);
  TparnParams params = make_tparn_params(cfg.model, init_rng);
  AdamOptimizer adam;
  LrSchedule schedule(cfg.lr, cfg.lr_halving_patience);

  const long crop_len = std::lround(cfg.crop_seconds * cfg.model.sample_rate);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  double lr = cfg.lr;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[epoch_rng.uniform_index(i)]);

    double epoch_loss = 0.0;
    long epoch_items = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::uint64_t batch_seed = epoch_rng.next_u64();
      Rng batch_rng(batch_seed);
      TparnParams grads = zeros_like(params);
      double batch_loss = 0.0;
      long batch_items = 0;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        const Crop crop = crop_example(train_set[order[i]], crop_len, batch_rng);
        batch_loss += training_step_loss(cfg, params, crop.x, crop.d, batch_rng, grads);
        ++batch_items;
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("nan loss at epoch " + std::to_string(epoch) + ", batch seed " +
                                 std::to_string(batch_seed));
      const double inv = 1.0 / static_cast<double>(batch_items);
      visit_params(grads, [inv](const std::string&, double* data, long n) {
        for (long i = 0; i < n; ++i) data[i] *= inv;
      });
      clip_grad_norm(grads, cfg.grad_clip);
      adam.step(params, grads, lr);

      epoch_loss += batch_loss;
      epoch_items += batch_items;
      result.step_losses.push_back(batch_loss * inv);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(epoch_items);
    log.lr = lr;

    params.refresh_gate_caches();
    if (!val_set.empty()) {
      double val = 0.0;
      for (const auto& ex : val_set) val += eval_loss(cfg, params, ex.x, ex.d);
      log.val_loss = val / static_cast<double>(val_set.size());
    } else {
      log.val_loss = log.train_loss;
    }

    if (log.val_loss < result.best_val_loss) {
      result.best_val_loss = log.val_loss;
      result.best_params = params;
    }
    lr = schedule.update(log.val_loss);

    result.log.push_back(log);
    if (progress) progress(log);
  }

  if (result.log.empty() || !std::isfinite(result.best_val_loss)) result.best_params = params;
  return result;
}

TrainResult train(const RunConfig& cfg, const std::string& train_manifest,
                  const std::string& val_manifest, const std::string& out_dir,
                  const ProgressFn& progress) {
  std::vector<TrainingExample> train_set, val_set;
  for (const auto& entry : load_manifest(train_manifest)) train_set.push_back(load_example(entry));
  if (!val_manifest.empty())
    for (const auto& entry : load_manifest(val_manifest)) val_set.push_back(load_example(entry));

  TrainResult result = train_examples(cfg, train_set, val_set, progress);

  std::filesystem::create_directories(out_dir);
  const std::string ckpt = (std::filesystem::path(out_dir) / "best.tpnck").string();
  nlohmann::json meta{{"best_val_loss", result.best_val_loss},
                      {"epochs", cfg.epochs},
                      {"loss", to_string(cfg.loss)},
                      {"seed", cfg.seed}};
  result.best_params.refresh_gate_caches();
  save_checkpoint(ckpt, cfg.model, result.best_params, meta);

  std::ofstream log_out((std::filesystem::path(out_dir) / "train_log.jsonl").string());
  for (const auto& e : result.log)
    log_out << nlohmann::json{{"epoch", e.epoch},
                              {"train_loss", e.train_loss},
                              {"val_loss", e.val_loss},
                              {"lr", e.lr}}
                   .dump()
            << "\n";
  return result;
}

EvalReport evaluate_enhanced(const std::vector<ManifestEntry>& manifest, const std::string& enhanced_dir,
                             int reference_channel, const StftConfig& stft_cfg) {
  EvalReport report;
  double sum_in = 0.0, sum_out = 0.0;
  long scored = 0;
  for (const auto& entry : manifest) {
    EvalRow row;
    row.id = entry.id;
    const std::string enhanced_path =
        (std::filesystem::path(enhanced_dir) / (entry.id + "_enhanced.wav")).string();
    if (!std::filesystem::exists(enhanced_path)) {
      row.missing = true;
      report.missing_ids.push_back(entry.id);
      report.rows.push_back(row);
      continue;
    }
    const Waveform x = read_wav(entry.mix_path);
    const Waveform d = read_wav(entry.target_path);
    const Waveform y = read_wav(enhanced_path);
    if (reference_channel >= x.channels) throw std::invalid_argument("reference channel out of range");
    const int y_ref = y.channels == x.channels ? reference_channel : 0;

    const Waveform d_ref = d.mono(reference_channel);
    row.si_sdr_in = si_sdr(x.mono(reference_channel).samples, d_ref.samples);
    row.si_sdr_out = si_sdr(y.mono(y_ref).samples, d_ref.samples);
    row.pcm = pcm_loss(x.mono(reference_channel), d_ref, y.mono(y_ref), stft_cfg).total;
    sum_in += row.si_sdr_in;
    sum_out += row.si_sdr_out;
    ++scored;
    report.rows.push_back(row);
  }
  if (scored > 0) {
    report.mean_si_sdr_in = sum_in / static_cast<double>(scored);
    report.mean_si_sdr_out = sum_out / static_cast<double>(scored);
    report.mean_improvement = report.mean_si_sdr_out - report.mean_si_sdr_in;
  }
  return report;
}

}  // namespace tparn
