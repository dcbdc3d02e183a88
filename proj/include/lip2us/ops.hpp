#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "lip2us/tensor.hpp"

namespace lip2us {

enum class Mode { train, infer };

struct Activation {
  enum class Kind { sigmoid, tanh, leaky_relu };
  Kind kind = Kind::sigmoid;
  double slope = 0.3;

  static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }
  static Activation tanh() { return {Kind::tanh, 0.0}; }
  static Activation leaky_relu(double slope = 0.3) { return {Kind::leaky_relu, slope}; }
};

/// Cross-correlation (no kernel flip). Accepts a batch [B,C_in,H,W] or a
/// single image [C_in,H,W]; kernels are [C_out,C_in,kH,kW], bias [C_out].
/// Output extent is floor((H + 2*padding - kH)/stride) + 1 per axis.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride = 1,
              int padding = 0);

/// Max over window x window cells; gradient goes to the first maximal cell in
/// row-major order.
Tensor maxpool2d(const Tensor& input, int window, int stride);

/// input * weight^T + bias for input [D_in] or [B,D_in], weight [D_out,D_in].
/// An undefined bias means no bias term.
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor());

Tensor activation(const Tensor& input, Activation kind);
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid()); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::tanh()); }
inline Tensor leaky_relu(const Tensor& x, double slope) {
  return activation(x, Activation::leaky_relu(slope));
}

// Per-channel affine parameters plus running statistics. momentum is the
// weight given to the current batch when updating the running values.
struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNormParams create(std::size_t channels, DType dtype = DType::f32);
};

/// Normalizes [B,C,...] per channel. Train mode uses batch statistics (B >= 2)
/// and updates the running values; infer mode reads them only.
Tensor batchnorm(const Tensor& input, BatchNormParams& params, Mode mode);

/// Inverted dropout: identity in infer mode.
Tensor dropout(const Tensor& input, double rate, Mode mode, std::mt19937_64& rng);

Tensor mse_loss(const Tensor& pred, const Tensor& target);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);

/// Multiplies row b of x [B,D] by gate[b] (gate shape [B,1]); also accepts
/// x [D] with gate [1].
Tensor scale_rows(const Tensor& x, const Tensor& gate);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace lip2us
