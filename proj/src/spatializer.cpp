#include "tparn/spatializer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "tparn/wav_io.hpp"

namespace tparn {

namespace {

constexpr double kSpeedOfSound = 343.0;
constexpr int kMaxRejections = 10000;

double dist(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Mirrored source coordinate along one axis for signed reflection count i:
// even i -> i*L + s, odd i -> (i+1)*L - s. |i| is the number of wall hits.
double axis_image(long i, double s, double len) {
  if ((i & 1) == 0) return static_cast<double>(i) * len + s;
  return static_cast<double>(i + 1) * len - s;
}

}  // namespace

RoomScene sample_scene(Rng& rng, const SceneConstraints& cs) {
  RoomScene scene;
  scene.room_dims = {rng.uniform(cs.room_min_xy, cs.room_max_xy),
                     rng.uniform(cs.room_min_xy, cs.room_max_xy),
                     rng.uniform(cs.room_min_z, cs.room_max_z)};

  int rejections = 0;
  auto draw_point = [&](double margin) {
    return Point3{rng.uniform(margin, scene.room_dims[0] - margin),
                  rng.uniform(margin, scene.room_dims[1] - margin),
                  rng.uniform(margin, scene.room_dims[2] - margin)};
  };
  auto draw_source = [&] {
    while (true) {
      const Point3 p = draw_point(cs.wall_margin);
      const double d = dist(p, scene.array_center);
      if (d >= cs.src_dist_min && d <= cs.src_dist_max) return p;
      if (++rejections > kMaxRejections) throw std::runtime_error("constraints unsatisfiable");
    }
  };

  // Mics sit on a horizontal circle, so the center keeps an extra radius of
  // clearance in x/y.
  scene.array_center = {rng.uniform(cs.wall_margin + cs.array_radius, scene.room_dims[0] - cs.wall_margin - cs.array_radius),
                        rng.uniform(cs.wall_margin + cs.array_radius, scene.room_dims[1] - cs.wall_margin - cs.array_radius),
                        rng.uniform(cs.wall_margin, scene.room_dims[2] - cs.wall_margin)};
  const double azimuth = rng.uniform(0.0, 2.0 * M_PI);
  scene.mic_positions.resize(cs.num_mics);
  for (int m = 0; m < cs.num_mics; ++m) {
    const double angle = azimuth + 2.0 * M_PI * m / cs.num_mics;
    scene.mic_positions[m] = {scene.array_center[0] + cs.array_radius * std::cos(angle),
                              scene.array_center[1] + cs.array_radius * std::sin(angle),
                              scene.array_center[2]};
  }

  scene.speech_pos = draw_source();
  const int n_noise = cs.noise_count_min +
                      static_cast<int>(rng.uniform_index(cs.noise_count_max - cs.noise_count_min + 1));
  scene.noise_positions.resize(n_noise);
  for (auto& p : scene.noise_positions) p = draw_source();

  scene.t60 = rng.uniform(cs.t60_min, cs.t60_max);
  scene.snr = rng.uniform(cs.snr_min, cs.snr_max);
  return scene;
}

long rir_length_for(const Point3& room, int max_order, int fs) {
  const double span = static_cast<double>(max_order + 1);
  const double d_max = std::sqrt(room[0] * room[0] + room[1] * room[1] + room[2] * room[2]) * span;
  return std::lround(fs * d_max / kSpeedOfSound) + 2;
}

Rir image_source_rir(const Point3& room, const Point3& src, const Point3& mic, int max_order,
                     double beta, int fs, long rir_len) {
  if (max_order < 0) throw std::invalid_argument("max_order must be >= 0");
  if (beta < 0.0 || beta >= 1.0) throw std::invalid_argument("beta must be in [0, 1)");
  if (rir_len < 1) throw std::invalid_argument("rir_len must be >= 1");

  Rir rir;
  rir.taps.assign(rir_len, 0.0);
  for (long i = -max_order; i <= max_order; ++i) {
    const long rem_i = max_order - std::labs(i);
    const double ix = axis_image(i, src[0], room[0]);
    for (long j = -rem_i; j <= rem_i; ++j) {
      const long rem_j = rem_i - std::labs(j);
      const double iy = axis_image(j, src[1], room[1]);
      for (long k = -rem_j; k <= rem_j; ++k) {
        const double iz = axis_image(k, src[2], room[2]);
        const double d = dist({ix, iy, iz}, mic);
        const long delay = std::lround(fs * d / kSpeedOfSound);
        if (delay >= rir_len) {
          ++rir.dropped_images;
          continue;
        }
        const long reflections = std::labs(i) + std::labs(j) + std::labs(k);
        rir.taps[delay] += std::pow(beta, static_cast<double>(reflections)) / (4.0 * M_PI * d);
      }
    }
  }
  return rir;
}

double t60_to_beta(double t60, const Point3& room_dims) {
  if (t60 <= 0.0) throw std::invalid_argument("t60 must be positive");
  const double volume = room_dims[0] * room_dims[1] * room_dims[2];
  const double surface = 2.0 * (room_dims[0] * room_dims[1] + room_dims[0] * room_dims[2] +
                                room_dims[1] * room_dims[2]);
  const double absorption = 0.161 * volume / (surface * t60);
  if (absorption >= 1.0) throw std::invalid_argument("unachievable T60");
  return std::sqrt(1.0 - absorption);
}

double beta_to_t60(double beta, const Point3& room_dims) {
  if (beta < 0.0 || beta >= 1.0) throw std::invalid_argument("beta must be in [0, 1)");
  const double volume = room_dims[0] * room_dims[1] * room_dims[2];
  const double surface = 2.0 * (room_dims[0] * room_dims[1] + room_dims[0] * room_dims[2] +
                                room_dims[1] * room_dims[2]);
  const double absorption = 1.0 - beta * beta;
  return 0.161 * volume / (surface * absorption);
}

namespace {

// y[n] += sum_d taps[d] * x[n - d], truncated to y's length; RIRs are sparse
// so zero taps are skipped.
void convolve_add(const double* x, long n_x, const std::vector<double>& taps, double* y, long n_y) {
  for (long d = 0; d < static_cast<long>(taps.size()); ++d) {
    const double a = taps[d];
    if (a == 0.0) continue;
    const long n_end = std::min(n_y, n_x + d);
    for (long n = d; n < n_end; ++n) y[n] += a * x[n - d];
  }
}

}  // namespace

MixtureExample propagate_and_mix(const RoomScene& scene, const Waveform& speech,
                                 const std::vector<Waveform>& noises, int max_order, int fs) {
  if (speech.channels != 1) throw std::invalid_argument("speech must be mono");
  if (noises.size() != scene.noise_positions.size())
    throw std::invalid_argument("noise signal count must match scene noise positions");

  const int n_mics = static_cast<int>(scene.mic_positions.size());
  const long n = speech.num_samples;
  const double beta = t60_to_beta(scene.t60, scene.room_dims);
  const long rir_len = rir_length_for(scene.room_dims, max_order, fs);

  MixtureExample ex;
  ex.x = Waveform(n_mics, n, fs);
  ex.d = Waveform(n_mics, n, fs);
  ex.u = Waveform(n_mics, n, fs);

  Waveform reverb(n_mics, n, fs);
  Waveform noise_sum(n_mics, n, fs);

  for (int m = 0; m < n_mics; ++m) {
    const Rir full = image_source_rir(scene.room_dims, scene.speech_pos, scene.mic_positions[m],
                                      max_order, beta, fs, rir_len);
    const Rir direct = image_source_rir(scene.room_dims, scene.speech_pos, scene.mic_positions[m],
                                        0, beta, fs, rir_len);
    ex.dropped_images += full.dropped_images;

    convolve_add(speech.channel(0), n, direct.taps, ex.d.channel(m), n);
    convolve_add(speech.channel(0), n, full.taps, reverb.channel(m), n);
    for (long s = 0; s < n; ++s) reverb.at(m, s) -= ex.d.at(m, s);

    for (std::size_t j = 0; j < noises.size(); ++j) {
      const Rir nr = image_source_rir(scene.room_dims, scene.noise_positions[j],
                                      scene.mic_positions[m], max_order, beta, fs, rir_len);
      ex.dropped_images += nr.dropped_images;
      convolve_add(noises[j].channel(0), noises[j].num_samples, nr.taps, noise_sum.channel(m), n);
    }
  }

  double e_direct = 0.0, e_noise = 0.0;
  for (const double v : ex.d.samples) e_direct += v * v;
  for (const double v : noise_sum.samples) e_noise += v * v;
  if (e_noise == 0.0) throw std::runtime_error("cannot set SNR");
  const double gain = std::sqrt(e_direct / (e_noise * std::pow(10.0, scene.snr / 10.0)));
  ex.noise_gain = gain;

  for (std::size_t i = 0; i < ex.x.samples.size(); ++i) {
    ex.u.samples[i] = reverb.samples[i] + gain * noise_sum.samples[i];
    ex.x.samples[i] = ex.d.samples[i] + ex.u.samples[i];
  }
  return ex;
}

std::array<std::vector<std::string>, 3> partition_noise_files(std::vector<std::string> files,
                                                              std::uint64_t seed, double train_frac,
                                                              double val_frac) {
  std::sort(files.begin(), files.end());
  Rng rng(seed ^ 0x6e6f697365ULL);
  for (std::size_t i = files.size(); i > 1; --i)
    std::swap(files[i - 1], files[rng.uniform_index(i)]);

  std::array<std::vector<std::string>, 3> out;
  const auto n = static_cast<long>(files.size());
  const long n_train = std::lround(train_frac * n);
  const long n_val = std::min<long>(n - n_train, std::lround(val_frac * n));
  for (long i = 0; i < n; ++i) {
    if (i < n_train)
      out[0].push_back(files[i]);
    else if (i < n_train + n_val)
      out[1].push_back(files[i]);
    else
      out[2].push_back(files[i]);
  }
  return out;
}

namespace {

std::vector<std::string> list_wavs(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".wav")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

int split_index(const std::string& split) {
  if (split == "train") return 0;
  if (split == "validation" || split == "val") return 1;
  if (split == "test") return 2;
  throw std::invalid_argument("unknown split: " + split);
}

nlohmann::json point_json(const Point3& p) { return nlohmann::json{p[0], p[1], p[2]}; }

}  // namespace

nlohmann::json generate_dataset(const std::string& split, const std::string& speech_dir,
                                const std::string& noise_dir, const std::string& out_dir,
                                std::uint64_t seed, const DatasetOptions& opts) {
  const int split_id = split_index(split);
  const auto speech_files = list_wavs(speech_dir);
  const auto noise_files = list_wavs(noise_dir);
  if (speech_files.empty()) throw std::runtime_error("no speech wav files in " + speech_dir);
  if (noise_files.empty()) throw std::runtime_error("no noise wav files in " + noise_dir);

  const auto noise_split =
      partition_noise_files(noise_files, seed, opts.noise_train_frac, opts.noise_val_frac);
  const auto& split_noises = noise_split[split_id];
  if (split_noises.empty()) throw std::runtime_error("noise split '" + split + "' is empty");

  std::filesystem::create_directories(out_dir);
  const Rng base(seed);

  long count = static_cast<long>(speech_files.size());
  if (opts.max_examples > 0) count = std::min(count, opts.max_examples);

  nlohmann::json manifest = nlohmann::json::array();
  for (long idx = 0; idx < count; ++idx) {
    // Per-example stream so generation is order-independent and restartable.
    Rng rng = base.fork(static_cast<std::uint64_t>(split_id) * 1000003ULL + idx);
    const std::uint64_t example_seed = rng.next_u64();
    rng.reseed(example_seed);

    RoomScene scene = sample_scene(rng, opts.constraints);
    scene.rng_seed = example_seed;

    Waveform speech = read_wav(speech_files[idx]);
    if (speech.channels != 1) speech = speech.mono(0);
    if (opts.crop_max_seconds > 0.0) {
      const long lo = std::lround(opts.crop_min_seconds * opts.sample_rate);
      const long hi = std::lround(opts.crop_max_seconds * opts.sample_rate);
      const long want = lo + static_cast<long>(rng.uniform_index(hi - lo + 1));
      if (speech.num_samples > want) {
        const long start = static_cast<long>(rng.uniform_index(speech.num_samples - want + 1));
        Waveform cropped(1, want, speech.sample_rate);
        for (long i = 0; i < want; ++i) cropped.samples[i] = speech.samples[start + i];
        speech = std::move(cropped);
      }
    }

    std::vector<Waveform> noises;
    nlohmann::json noise_meta = nlohmann::json::array();
    for (std::size_t j = 0; j < scene.noise_positions.size(); ++j) {
      const std::string& path = split_noises[rng.uniform_index(split_noises.size())];
      Waveform noise = read_wav(path);
      if (noise.channels != 1) noise = noise.mono(0);
      // Random circular crop so each draw covers the full mixture length.
      Waveform fitted(1, speech.num_samples, opts.sample_rate);
      if (noise.num_samples > 0) {
        const long start = static_cast<long>(rng.uniform_index(noise.num_samples));
        for (long i = 0; i < speech.num_samples; ++i)
          fitted.samples[i] = noise.samples[(start + i) % noise.num_samples];
      }
      noise_meta.push_back(path);
      noises.push_back(std::move(fitted));
    }

    MixtureExample ex = propagate_and_mix(scene, speech, noises, opts.max_order, opts.sample_rate);

    const std::string id = split + "_" + std::to_string(idx);
    const std::string mix_path = (std::filesystem::path(out_dir) / (id + "_mix.wav")).string();
    const std::string target_path = (std::filesystem::path(out_dir) / (id + "_target.wav")).string();
    write_wav(mix_path, ex.x);
    write_wav(target_path, ex.d);

    double e_u = 0.0;
    for (const double v : ex.u.samples) e_u += v * v;

    manifest.push_back(nlohmann::json{
        {"id", id},
        {"seed", example_seed},
        {"speech", speech_files[idx]},
        {"noises", noise_meta},
        {"mix", mix_path},
        {"target", target_path},
        {"num_samples", speech.num_samples},
        {"snr_db", scene.snr},
        {"t60", scene.t60},
        {"noise_gain", ex.noise_gain},
        {"interference_energy", e_u},
        {"dropped_images", ex.dropped_images},
        {"room", point_json(scene.room_dims)},
        {"array_center", point_json(scene.array_center)},
        {"speech_pos", point_json(scene.speech_pos)},
    });
  }

  const std::string manifest_path =
      (std::filesystem::path(out_dir) / ("manifest_" + split + ".jsonl")).string();
  std::ofstream out(manifest_path);
  for (const auto& entry : manifest) out << entry.dump() << "\n";
  return manifest;
}

}  // namespace tparn
