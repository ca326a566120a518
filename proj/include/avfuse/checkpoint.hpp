#pragma once

#include <filesystem>

#include "avfuse/model.hpp"

namespace avf {

// Versioned checkpoint: magic "FWC1", format version, a JSON config record,
// then named parameter tensors, each serialized as an embedded FWF1 matrix
// block. Byte-stable for fixed parameters.
void save_checkpoint(const std::filesystem::path& path, FusionModel<float>& model);

FusionModel<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace avf
