#pragma once

#include <string>

#include "sanet/model.hpp"
#include "sanet/params.hpp"

namespace sanet {

// Checkpoint = JSON manifest (model config + parameter names, shapes, groups,
// byte offsets) next to a flat little-endian float32 blob. Save/load round-
// trips are byte-identical. The blob path recorded in the manifest is
// relative to the manifest's directory.
void save_checkpoint(const std::string& manifest_path, const SANetConfig& cfg,
                     const ParamStore& params);

SANetConfig load_checkpoint_config(const std::string& manifest_path);

// The store must already hold exactly the manifest's parameters (same names,
// shapes and groups); any disagreement is rejected by name.
void load_checkpoint(const std::string& manifest_path, ParamStore& params);

}  // namespace sanet
