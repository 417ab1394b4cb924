#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "tseg/optim.hpp"
#include "tseg/unet.hpp"

namespace tseg {

struct CheckpointMeta {
  std::uint32_t epoch = 0;
  std::uint64_t seed = 0;
  std::uint64_t metric_digest = 0;
};

struct Checkpoint {
  UNetModel<float> model;
  CheckpointMeta meta;
  std::optional<AdamState<float>> adam;
};

// Binary format: "UNETCKPT" magic, version, config block, metadata, then
// per-tensor records (name length, name bytes, dtype code, rank, dims, raw
// little-endian values) in a fixed order. Files are written to a temporary
// name and renamed, so a failed save never leaves a partial checkpoint.
void save_checkpoint(const std::filesystem::path& path,
                     const UNetModel<float>& model, const CheckpointMeta& meta,
                     const AdamState<float>* adam = nullptr);

// Validates magic, version and every tensor shape against the embedded
// config before returning; corrupt or truncated files are rejected whole.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tseg
