#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lip2us/image.hpp"
#include "lip2us/preproc.hpp"
#include "lip2us/tensor.hpp"

namespace lip2us {

// Per-pixel displacement in pixels/frame: u along x (columns), v along y (rows).
struct FlowField {
  Tensor u;  // [H,W]
  Tensor v;  // [H,W]
};

struct FlowOptions {
  // Smoothness weight, expressed in 8-bit intensity units (the data term is
  // evaluated on intensities scaled to [0,255]).
  double alpha = 10.0;
  int iterations = 100;
};

/// Horn-Schunck flow from f1 to f2: zero initial field, fixed number of Jacobi
/// sweeps, 2x2x2 cube derivative stencils and the 1/6, 1/12 neighbourhood
/// average, replicated borders.
FlowField horn_schunck(const Frame& f1, const Frame& f2, double alpha, int iterations);

/// [N-1, 2, H, W]: slot k is the flow frame k -> k+1, channel 0 = u, 1 = v.
Tensor flow_stack(const Clip& clip, double alpha, int iterations);
Tensor flow_stack(const std::vector<FlowField>& fields);

// Two-plane flow file: "L2FL", uint32 width, uint32 height (little-endian),
// then width*height float32 u values and width*height float32 v values, all
// little-endian, row-major.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

/// Color-wheel visualisation (hue = direction, saturation = magnitude /
/// max_magnitude; max_magnitude <= 0 normalises by the field maximum).
std::vector<std::uint8_t> flow_to_rgb(const FlowField& flow, double max_magnitude = 0.0);

}  // namespace lip2us
