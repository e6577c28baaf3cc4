#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sprm/model.hpp"

namespace sprm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint container, little-endian:
///   "SPRC", u32 version, u64 n + n bytes of model config text,
///   u64 parameter count, then per parameter:
///   u32 n + name, u32 ndim, ndim x u64 dims, float32 values.
/// Values are stored in single precision; a model whose parameters are
/// already float-representable reloads bit-identically.
std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::string& bytes, const std::string& what = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Model& model);
/// Throws FormatError (with byte offset) on a malformed file and DataError
/// when a stored parameter does not match the model built from the config.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace sprm
