#pragma once

#include <filesystem>

#include "cbam/model.hpp"

namespace cbam {

struct Checkpoint {
  TinyNetSpec spec;
  ParamMap params;
};

// Writes a JSON manifest at `path` (network spec plus the name and shape of
// every tensor) and the tensors themselves, as consecutive CBT1 records in
// manifest order, to `path` + ".tensors".
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Checks that the stored tensors are exactly the ones the network needs.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path tensor_file_for(const std::filesystem::path& manifest);

}  // namespace cbam
