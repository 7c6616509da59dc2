#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tparn/rng.hpp"
#include "tparn/waveform.hpp"

namespace tparn {

using Point3 = std::array<double, 3>;

/// Sampling ranges for synthetic scenes. Defaults follow the shipped recipe:
/// shoebox rooms, a 4-mic circular array of radius 10 cm, sources 0.75-2 m
/// from the array center and at least 0.5 m from every wall.
struct SceneConstraints {
  double room_min_xy = 5.0, room_max_xy = 10.0;
  double room_min_z = 3.0, room_max_z = 4.0;
  double wall_margin = 0.5;
  double src_dist_min = 0.75, src_dist_max = 2.0;
  int num_mics = 4;
  double array_radius = 0.10;
  int noise_count_min = 5, noise_count_max = 10;
  double snr_min = -10.0, snr_max = 10.0;
  double t60_min = 0.2, t60_max = 1.2;
};

struct RoomScene {
  Point3 room_dims{};
  Point3 array_center{};
  std::vector<Point3> mic_positions;
  Point3 speech_pos{};
  std::vector<Point3> noise_positions;
  double t60 = 0.0;
  double snr = 0.0;
  std::uint64_t rng_seed = 0;
};

/// Rejection-samples a scene satisfying every constraint; throws after
/// 10,000 rejected position draws.
RoomScene sample_scene(Rng& rng, const SceneConstraints& constraints = {});

struct Rir {
  std::vector<double> taps;
  long dropped_images = 0;  // images whose delay fell beyond the buffer
};

/// Shoebox image-source impulse response with frequency-independent wall
/// reflection coefficient beta. Images are enumerated by signed per-axis
/// reflection counts (i, j, k) with |i|+|j|+|k| <= max_order; each contributes
/// beta^(|i|+|j|+|k|) / (4*pi*d) at delay round(fs*d/c), c = 343 m/s.
Rir image_source_rir(const Point3& room, const Point3& src, const Point3& mic, int max_order,
                     double beta, int fs, long rir_len);

/// Buffer length that keeps every image of the given order, so nothing drops.
long rir_length_for(const Point3& room, int max_order, int fs);

/// Uniform wall reflection coefficient from Sabine's formula. Throws when the
/// requested T60 needs absorption >= 1.
double t60_to_beta(double t60, const Point3& room_dims);

/// Sabine T60 implied by a reflection coefficient; inverse of t60_to_beta.
double beta_to_t60(double beta, const Point3& room_dims);

struct MixtureExample {
  Waveform x;  // mixture at the array
  Waveform d;  // direct-path speech, the training target
  Waveform u;  // interference: reverberant tail + scaled noise
  double noise_gain = 0.0;
  long dropped_images = 0;
};

/// Convolves each source with its per-mic RIR, extracts the direct path as
/// the target, and scales the summed noise so the array-wide direct-speech
/// SNR matches scene.snr. Output length equals the speech length.
MixtureExample propagate_and_mix(const RoomScene& scene, const Waveform& speech,
                                 const std::vector<Waveform>& noises, int max_order, int fs);

/// Deterministic disjoint train/validation/test split of noise files.
std::array<std::vector<std::string>, 3> partition_noise_files(std::vector<std::string> files,
                                                              std::uint64_t seed,
                                                              double train_frac = 0.8,
                                                              double val_frac = 0.1);

struct DatasetOptions {
  SceneConstraints constraints;
  int max_order = 6;
  int sample_rate = 16000;
  double crop_min_seconds = 0.0;  // 0 keeps whole utterances
  double crop_max_seconds = 0.0;
  long max_examples = 0;  // 0 = one example per speech file
  double noise_train_frac = 0.8, noise_val_frac = 0.1;
};

/// One mixture per speech file: writes <id>_mix.wav and <id>_target.wav under
/// out_dir plus manifest_<split>.jsonl, and returns the manifest entries.
/// split must be "train", "validation" or "test"; noise files are assigned
/// disjointly across the three splits from the same seed.
nlohmann::json generate_dataset(const std::string& split, const std::string& speech_dir,
                                const std::string& noise_dir, const std::string& out_dir,
                                std::uint64_t seed, const DatasetOptions& opts = {});

}  // namespace tparn
