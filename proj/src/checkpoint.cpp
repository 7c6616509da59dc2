#include "tparn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tparn {

namespace {

constexpr char kMagic[8] = {'T', 'P', 'N', 'C', 'K', 'P', 'T', '1'};

void write_raw(std::ostream& out, const void* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void read_raw(std::istream& in, void* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("truncated checkpoint");
}

}  // namespace

nlohmann::json config_to_json(const TparnConfig& cfg) {
  return nlohmann::json{
      {"channels", cfg.channels},
      {"frame_size", cfg.frame_size},
      {"frame_shift", cfg.frame_shift},
      {"chunk_size", cfg.chunk_size},
      {"chunk_shift", cfg.chunk_shift},
      {"feature_dim", cfg.feature_dim},
      {"num_blocks", cfg.num_blocks},
      {"spatial_variant", to_string(cfg.spatial_variant)},
      {"spatial_location", to_string(cfg.spatial_location)},
      {"spatial_blocks", cfg.spatial_blocks},
      {"output_mode", to_string(cfg.output_mode)},
      {"reference_channel", cfg.reference_channel},
      {"dropout_rate", cfg.dropout_rate},
      {"sample_rate", cfg.sample_rate},
  };
}

TparnConfig config_from_json(const nlohmann::json& j) {
  TparnConfig cfg;
  cfg.channels = j.value("channels", cfg.channels);
  cfg.frame_size = j.value("frame_size", cfg.frame_size);
  cfg.frame_shift = j.value("frame_shift", cfg.frame_shift);
  cfg.chunk_size = j.value("chunk_size", cfg.chunk_size);
  cfg.chunk_shift = j.value("chunk_shift", cfg.chunk_shift);
  cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
  cfg.num_blocks = j.value("num_blocks", cfg.num_blocks);
  if (j.contains("spatial_variant")) cfg.spatial_variant = spatial_variant_from_string(j["spatial_variant"]);
  if (j.contains("spatial_location"))
    cfg.spatial_location = spatial_location_from_string(j["spatial_location"]);
  if (j.contains("spatial_blocks")) cfg.spatial_blocks = j["spatial_blocks"].get<std::vector<int>>();
  if (j.contains("output_mode")) cfg.output_mode = output_mode_from_string(j["output_mode"]);
  cfg.reference_channel = j.value("reference_channel", cfg.reference_channel);
  cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
  cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
  validate_config(cfg);
  return cfg;
}

void save_checkpoint(const std::string& path, const TparnConfig& cfg, const TparnParams& params,
                     const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create checkpoint: " + path);

  nlohmann::json header{{"config", config_to_json(cfg)}, {"meta", meta}};
  const std::string header_str = header.dump();
  const std::uint64_t header_len = header_str.size();

  write_raw(out, kMagic, sizeof(kMagic));
  write_raw(out, &header_len, 8);
  write_raw(out, header_str.data(), header_str.size());

  std::uint32_t n_arrays = 0;
  visit_params(params, [&n_arrays](const std::string&, const double*, long) { ++n_arrays; });
  write_raw(out, &n_arrays, 4);

  visit_params(params, [&out](const std::string& name, const double* data, long n) {
    const auto name_len = static_cast<std::uint32_t>(name.size());
    const auto count = static_cast<std::uint64_t>(n);
    write_raw(out, &name_len, 4);
    write_raw(out, name.data(), name.size());
    write_raw(out, &count, 8);
    write_raw(out, data, sizeof(double) * n);
  });
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[8];
  read_raw(in, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file: " + path);

  std::uint64_t header_len = 0;
  read_raw(in, &header_len, 8);
  std::string header_str(header_len, '\0');
  read_raw(in, header_str.data(), header_len);
  const nlohmann::json header = nlohmann::json::parse(header_str);

  Checkpoint ck;
  ck.config = config_from_json(header.at("config"));
  ck.meta = header.value("meta", nlohmann::json::object());

  // Parameters are materialized with the right shapes, then filled by name.
  Rng rng(0);
  ck.params = make_tparn_params(ck.config, rng);

  std::uint32_t n_arrays = 0;
  read_raw(in, &n_arrays, 4);
  std::map<std::string, std::vector<double>> arrays;
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::uint32_t name_len = 0;
    read_raw(in, &name_len, 4);
    std::string name(name_len, '\0');
    read_raw(in, name.data(), name_len);
    std::uint64_t count = 0;
    read_raw(in, &count, 8);
    std::vector<double> values(count);
    read_raw(in, values.data(), sizeof(double) * count);
    arrays.emplace(std::move(name), std::move(values));
  }

  visit_params(ck.params, [&arrays, &path](const std::string& name, double* data, long n) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw std::runtime_error("checkpoint missing parameter " + name + ": " + path);
    if (static_cast<long>(it->second.size()) != n)
      throw std::runtime_error("checkpoint size mismatch for " + name + ": " + path);
    std::memcpy(data, it->second.data(), sizeof(double) * n);
  });

  ck.params.refresh_gate_caches();
  return ck;
}

}  // namespace tparn
