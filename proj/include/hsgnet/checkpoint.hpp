#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hsgnet/network.hpp"

namespace hsg {

struct CheckpointRecord {
  std::string name;
  Tensor tensor;
};

/// On disk: "HSGC", u32 version, u32 manifest length, manifest bytes,
/// u32 record count, then per record u32 name length, name, u32 rank,
/// rank x u32 extents and the values as float32. Everything little-endian.
/// The manifest is the `key = value` text of the configuration that built
/// the model.
struct Checkpoint {
  std::string manifest;
  std::vector<CheckpointRecord> records;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Parameters followed by BN running statistics.
Checkpoint snapshot(HsgNet& model, std::string manifest);
/// Copies every record into the model. Missing, unexpected or mis-shaped
/// records raise an error that names them.
void restore(HsgNet& model, const Checkpoint& ckpt);

}  // namespace hsg
