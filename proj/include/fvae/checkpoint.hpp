#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "fvae/param_set.hpp"

namespace fvae {

// Container layout: magic "FVAE1", u32 little-endian header length,
// canonical JSON header (config, round, tensor directory in parameter
// order), then raw little-endian f32 payload with gap-free offsets.
inline constexpr char kCheckpointMagic[5] = {'F', 'V', 'A', 'E', '1'};

struct Checkpoint {
    nlohmann::json config;
    std::string config_hash;
    std::uint64_t round = 0;
    ParamSet params;
};

void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const std::string& config_hash, std::uint64_t round, const ParamSet& params);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace fvae
