#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tparn/checkpoint.hpp"
#include "tparn/spatializer.hpp"
#include "tparn/train.hpp"
#include "tparn/wav_io.hpp"

namespace {

using namespace tparn;

// Paths may be given relative to $TPARN_DATA_ROOT.
std::string resolve_path(const std::string& path) {
  if (path.empty() || std::filesystem::path(path).is_absolute()) return path;
  const char* root = std::getenv("TPARN_DATA_ROOT");
  if (root == nullptr || *root == '\0') return path;
  return (std::filesystem::path(root) / path).string();
}

int run_spatialize(const std::string& split, const std::string& speech_dir, const std::string& noise_dir,
                   const std::string& out_dir, std::uint64_t seed, DatasetOptions opts) {
  const auto manifest = generate_dataset(split, resolve_path(speech_dir), resolve_path(noise_dir),
                                         resolve_path(out_dir), seed, opts);
  std::cout << "wrote " << manifest.size() << " examples for split '" << split << "' to "
            << resolve_path(out_dir) << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& train_manifest,
              const std::string& val_manifest, const std::string& out_dir, const nlohmann::json& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(resolve_path(config_path));
    if (!in) throw std::invalid_argument("cannot open config: " + config_path);
    in >> j;
  }
  j.update(overrides, /*merge_objects=*/true);
  const RunConfig cfg = run_config_from_json(j);

  const auto result = train(cfg, resolve_path(train_manifest), resolve_path(val_manifest),
                            resolve_path(out_dir), [](const EpochLog& log) {
                              std::cout << "epoch " << log.epoch << " train_loss " << log.train_loss
                                        << " val_loss " << log.val_loss << " lr " << log.lr << std::endl;
                            });
  std::cout << "best val loss " << result.best_val_loss << "; checkpoint written to "
            << (std::filesystem::path(resolve_path(out_dir)) / "best.tpnck").string() << "\n";
  return 0;
}

int run_enhance(const std::string& checkpoint_path, const std::vector<std::string>& inputs,
                const std::string& out_dir, const std::string& mode) {
  Checkpoint ck = load_checkpoint(resolve_path(checkpoint_path));
  if (mode == "miso")
    ck.config.output_mode = OutputMode::kMiso;
  else if (mode == "mimo")
    ck.config.output_mode = ck.config.channels == 1 ? ck.config.output_mode : OutputMode::kMimo;
  else
    throw std::invalid_argument("mode must be mimo or miso");

  std::filesystem::create_directories(resolve_path(out_dir));
  for (const auto& input : inputs) {
    const Waveform x = read_wav(resolve_path(input));
    if (x.channels != ck.config.channels)
      throw std::invalid_argument("channel count mismatch for " + input + ": model expects " +
                                  std::to_string(ck.config.channels));
    const Waveform y = tparn_forward(x, ck.params, ck.config, /*eval_mode=*/true);
    const std::string stem = std::filesystem::path(input).stem().string();
    const std::string out_path =
        (std::filesystem::path(resolve_path(out_dir)) / (stem + "_enhanced.wav")).string();
    write_wav(out_path, y);
    std::cout << out_path << "\n";
  }
  return 0;
}

int run_evaluate(const std::string& manifest_path, const std::string& enhanced_dir, int reference_channel,
                 const std::string& report_path) {
  const auto manifest = load_manifest(resolve_path(manifest_path));
  const EvalReport report = evaluate_enhanced(manifest, resolve_path(enhanced_dir), reference_channel);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!report_path.empty()) {
    file.open(resolve_path(report_path));
    out = &file;
  }
  for (const auto& row : report.rows) {
    nlohmann::json j{{"id", row.id},
                     {"si_sdr_in", row.missing ? nlohmann::json() : nlohmann::json(row.si_sdr_in)},
                     {"si_sdr_out", row.missing ? nlohmann::json() : nlohmann::json(row.si_sdr_out)},
                     {"pcm_loss", row.missing ? nlohmann::json() : nlohmann::json(row.pcm)},
                     {"stoi", nullptr},
                     {"pesq", nullptr}};
    *out << j.dump() << "\n";
  }
  std::cerr << "note: STOI and PESQ are unavailable in this build and reported as null\n";
  if (!report.missing_ids.empty()) {
    std::cerr << "missing enhanced files for " << report.missing_ids.size() << " ids:";
    for (const auto& id : report.missing_ids) std::cerr << " " << id;
    std::cerr << "\n";
  }
  std::cerr << "mean si_sdr in " << report.mean_si_sdr_in << " dB, out " << report.mean_si_sdr_out
            << " dB, improvement " << report.mean_improvement << " dB\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"triple-path attentive recurrent network for multichannel speech enhancement"};
  app.require_subcommand(1);

  // spatialize
  auto* sp = app.add_subcommand("spatialize", "generate multichannel mixtures from mono speech and noise");
  std::string split = "train", speech_dir, noise_dir, out_dir;
  std::uint64_t seed = 1;
  DatasetOptions opts;
  sp->add_option("--split", split, "train | validation | test");
  sp->add_option("--speech-dir", speech_dir, "directory of mono 16 kHz speech wavs")->required();
  sp->add_option("--noise-dir", noise_dir, "directory of mono 16 kHz noise wavs")->required();
  sp->add_option("--out-dir", out_dir, "output directory")->required();
  sp->add_option("--seed", seed, "rng seed");
  sp->add_option("--count", opts.max_examples, "limit number of examples (0 = all speech files)");
  sp->add_option("--max-order", opts.max_order, "image-source reflection order");
  sp->add_option("--t60-min", opts.constraints.t60_min, "minimum T60 in seconds");
  sp->add_option("--t60-max", opts.constraints.t60_max, "maximum T60 in seconds");
  sp->add_option("--snr-min", opts.constraints.snr_min, "minimum SNR in dB");
  sp->add_option("--snr-max", opts.constraints.snr_max, "maximum SNR in dB");
  sp->add_option("--noise-count-min", opts.constraints.noise_count_min, "minimum noise sources");
  sp->add_option("--noise-count-max", opts.constraints.noise_count_max, "maximum noise sources");
  sp->add_option("--mics", opts.constraints.num_mics, "microphones on the circular array");
  sp->add_option("--crop-min-seconds", opts.crop_min_seconds, "minimum speech crop length");
  sp->add_option("--crop-max-seconds", opts.crop_max_seconds, "maximum speech crop length (0 = no crop)");

  // train
  auto* tr = app.add_subcommand("train", "train a model from a spatialized manifest");
  std::string config_path, train_manifest, val_manifest, train_out;
  nlohmann::json overrides = nlohmann::json::object();
  double ov_lr = -1, ov_crop = -1;
  int ov_epochs = -1, ov_batch = -1;
  std::int64_t ov_seed = -1;
  std::string ov_loss;
  tr->add_option("--config", config_path, "run config JSON");
  tr->add_option("--train-manifest", train_manifest, "training manifest (jsonl)")->required();
  tr->add_option("--val-manifest", val_manifest, "validation manifest (jsonl)");
  tr->add_option("--out-dir", train_out, "output directory for checkpoint and log")->required();
  tr->add_option("--lr", ov_lr, "override learning rate");
  tr->add_option("--epochs", ov_epochs, "override epoch count");
  tr->add_option("--batch-size", ov_batch, "override batch size");
  tr->add_option("--crop-seconds", ov_crop, "override training crop length");
  tr->add_option("--seed", ov_seed, "override seed");
  tr->add_option("--loss", ov_loss, "override loss (pcm | mse)");

  // enhance
  auto* en = app.add_subcommand("enhance", "enhance multichannel wav files with a trained checkpoint");
  std::string ckpt_path, enhance_out, mode = "mimo";
  std::vector<std::string> inputs;
  en->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  en->add_option("--out-dir", enhance_out, "output directory")->required();
  en->add_option("--mode", mode, "mimo | miso");
  en->add_option("inputs", inputs, "input wav files")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score enhanced files against a manifest");
  std::string eval_manifest, enhanced_dir, report_path;
  int reference_channel = 0;
  ev->add_option("--manifest", eval_manifest, "test manifest (jsonl)")->required();
  ev->add_option("--enhanced-dir", enhanced_dir, "directory of <id>_enhanced.wav files")->required();
  ev->add_option("--reference-channel", reference_channel, "reference microphone index");
  ev->add_option("--out", report_path, "report jsonl path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (sp->parsed()) return run_spatialize(split, speech_dir, noise_dir, out_dir, seed, opts);
    if (tr->parsed()) {
      if (ov_lr > 0) overrides["lr"] = ov_lr;
      if (ov_epochs > 0) overrides["epochs"] = ov_epochs;
      if (ov_batch > 0) overrides["batch_size"] = ov_batch;
      if (ov_crop > 0) overrides["crop_seconds"] = ov_crop;
      if (ov_seed >= 0) overrides["seed"] = static_cast<std::uint64_t>(ov_seed);
      if (!ov_loss.empty()) overrides["loss"] = ov_loss;
      return run_train(config_path, train_manifest, val_manifest, train_out, overrides);
    }
    if (en->parsed()) return run_enhance(ckpt_path, inputs, enhance_out, mode);
    if (ev->parsed()) return run_evaluate(eval_manifest, enhanced_dir, reference_channel, report_path);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
