#pragma once

#include "nest/model.hpp"

#include <cstdint>
#include <filesystem>

namespace nest {

inline constexpr char kCheckpointMagic[8] = {'N', 'E', 'S', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes the model in the layout described in docs/checkpoint_format.md.
void save_checkpoint(Nestformer& model, const std::filesystem::path& path);

/// Missing or truncated files raise DataError, an unknown version raises
/// VersionMismatch and a manifest that disagrees with the rebuilt model
/// raises StructuralError.
Nestformer load_checkpoint(const std::filesystem::path& path);

}  // namespace nest
