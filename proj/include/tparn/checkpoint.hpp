#pragma once

#include <string>

#include "json.hpp"
#include "tparn/model.hpp"

namespace tparn {

nlohmann::json config_to_json(const TparnConfig& cfg);
TparnConfig config_from_json(const nlohmann::json& j);

/// Single-file archive: JSON header (config + metadata) followed by named
/// parameter arrays. Parameter names follow the visit_params convention.
void save_checkpoint(const std::string& path, const TparnConfig& cfg, const TparnParams& params,
                     const nlohmann::json& meta = {});

struct Checkpoint {
  TparnConfig config;
  TparnParams params;  // gate caches refreshed on load
  nlohmann::json meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tparn
