#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "voxdiff/nn/tensor.hpp"
#include "voxdiff/schedule.hpp"

namespace voxdiff {

// On-disk training state. Little-endian binary:
//   magic "MDCK", u32 version,
//   u32 config-text length + canonical key=value text,
//   schedule (u32 T, f64 s, 4 x (T+1) f64 arrays),
//   named tensor list x3 (params, adam m, adam v):
//     u32 count, then per tensor u32 name len, name, u32 ndims, u32 dims, f32 data,
//   u64 step counter, u64 seed, u32 rng-state length + rng-state text.
struct CheckpointData {
    std::string config_text;
    Schedule schedule;
    std::vector<std::pair<std::string, nn::Tensor<float>>> params;
    std::vector<std::pair<std::string, nn::Tensor<float>>> adam_m;
    std::vector<std::pair<std::string, nn::Tensor<float>>> adam_v;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::string rng_state;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Canonical config text helpers (sorted key=value lines).
std::string config_text_from_map(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> config_map_from_text(const std::string& text);

}  // namespace voxdiff
