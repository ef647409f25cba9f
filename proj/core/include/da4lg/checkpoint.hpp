#pragma once

#include <string>

#include "da4lg/model.hpp"

namespace da4lg {

// Checkpoint directory layout: manifest.json (config, policy, seed, vocabulary,
// freeze-mask summary, per-parameter shape/checksum) plus one binary blob per
// parameter (u64 rank, i64 dims, little-endian float32 data).
void save_checkpoint(const GroundingModel& model, const std::string& path);
GroundingModel load_checkpoint(const std::string& path);

}  // namespace da4lg
