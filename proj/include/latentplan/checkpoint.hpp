// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint container: "LPCK" magic, u32 version, model name, string
// metadata, then parameter descriptors and raw little-endian f64 payload in
// declaration order.  A human-readable sidecar (<path>.manifest) lists the
// same names/shapes plus an FNV-1a checksum of the binary file.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latentplan/nn.hpp"

namespace latentplan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    std::string model;
    std::map<std::string, std::string> metadata;
    NamedParams params;
};

void save_checkpoint(const std::string& path, const std::string& model,
                     const std::map<std::string, std::string>& metadata,
                     const NamedParams& params);

CheckpointData load_checkpoint(const std::string& path);

// copies values from a loaded checkpoint into live parameters; names and
// shapes must match exactly in order
void restore_params(const CheckpointData& ck, const NamedParams& params);

// metadata access with a clear error when a producer/consumer disagree
const std::string& require_meta(const CheckpointData& ck, const std::string& key);

} // namespace latentplan
