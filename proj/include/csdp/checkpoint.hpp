#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "csdp/optim.hpp"

namespace csdp {

/// Single-file parameter snapshot:
///   [u32 LE manifest length][JSON manifest][little-endian float64 blob]
/// The manifest records magic "CSDP1", a format version, the seed the params
/// were trained from, and per-param name/shape/offset (offset in doubles from
/// the start of the blob, in manifest order).
inline constexpr const char* kCheckpointMagic = "CSDP1";
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamGroup& params,
                     std::uint64_t seed);

/// Loads into an existing group: every manifest entry must match a param by
/// name and shape (and vice versa). Errors on magic/shape/name mismatch.
/// Returns the stored seed.
std::uint64_t load_checkpoint(const std::filesystem::path& path, const ParamGroup& params);

/// Reads just the seed (validating magic), for cheap compatibility probes.
std::uint64_t checkpoint_seed(const std::filesystem::path& path);

}  // namespace csdp
