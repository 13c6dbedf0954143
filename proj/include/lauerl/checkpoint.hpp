#pragma once

#include <string>
#include <vector>

#include "lauerl/nn.hpp"

namespace lauerl::nn {

// On-disk tensor container: a versioned magic line, one text line per tensor
// `tensor <name> <rows> <cols>`, a `payload` separator, then raw 32-bit
// little-endian floats (column-major) in header order. Round-trips bit-exact.
inline constexpr char kCheckpointMagic[] = "LAUERL-CKPT-1";

void save_checkpoint(const std::string& path, const std::vector<TensorView<float>>& tensors);

// Loads into the given views; tensor names and shapes must match the file
// exactly (same fixed order). Throws std::runtime_error on malformed files.
void load_checkpoint(const std::string& path, const std::vector<TensorView<float>>& tensors);

// Names and shapes stored in a checkpoint, for inspection and validation.
std::vector<TensorView<float>> read_checkpoint_header(const std::string& path);

}  // namespace lauerl::nn
