#pragma once

#include <string>

#include "magic/network.hpp"

namespace magic {

inline constexpr int kCheckpointVersion = 1;

/// Text header (version, config hash, content hash, active channels, the
/// config text, one line per parameter) followed by the raw little-endian
/// float32 parameter arrays in header order.
std::string checkpoint_bytes(const MagicModel<float>& model);
MagicModel<float> checkpoint_from_bytes(const std::string& bytes);

void save_checkpoint(const MagicModel<float>& model, const std::string& path);
MagicModel<float> load_checkpoint(const std::string& path);
/// Also rejects a checkpoint whose embedded config differs from `expected`.
MagicModel<float> load_checkpoint(const std::string& path, const NetworkConfig& expected);

}  // namespace magic
