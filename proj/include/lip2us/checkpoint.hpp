#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lip2us/tensor.hpp"

namespace lip2us {

// Checkpoint layout (all implementations must agree on it byte for byte):
//
//   lip2us-checkpoint 1\n
//   tensors <count>\n
//   <name> <offset> <rank> <dim0> ... <dimN-1>\n      one line per tensor
//   data <total>\n
//   <total little-endian IEEE-754 float32 values>
//
// Names contain no whitespace. <offset> counts float32 elements from the
// first byte after the "data" line. Tensors appear in the order they were
// saved and are stored row-major; f64 tensors are narrowed to f32.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace lip2us
