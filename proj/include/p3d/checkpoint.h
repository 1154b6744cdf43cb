#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "p3d/adam.h"
#include "p3d/parameters.h"

namespace p3d {

// Binary layout (all integers and floats little-endian):
//   "P3DF"  magic, 4 bytes
//   u8      format version
//   u64     manifest length in bytes
//   ...     manifest, UTF-8 JSON:
//             {"params":[{"name":..,"shape":[..],"adam_step":n},..],
//              "optimizer":bool, "scalars":{name:number,..}}
//   ...     float32 payload: every parameter in manifest order, then, when
//           "optimizer" is true, first and second moments of each parameter.
inline constexpr std::string_view kCheckpointMagic = "P3DF";
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
    ParameterSet params;
    std::vector<AdamState> optimizer;  // empty, or one state per parameter
    std::map<std::string, double> scalars;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace p3d
