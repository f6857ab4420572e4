#pragma once

#include <filesystem>

#include "json.hpp"

#include "clipose/param_store.hpp"

namespace clipose {

// Binary layout, little-endian:
//   "CLPSCKPT" | u32 version | u64 header length | header JSON bytes
//   | u64 optimizer step | u64 parameter count
//   | per parameter: u32 name length, name, u32 rank, u64 dims[rank],
//                    f64 value[n], f64 first_moment[n], f64 second_moment[n],
//                    u8 frozen
inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'P', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json header;
  ParamStore params;
};

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& header);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace clipose
