#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lip2us/checkpoint.hpp"
#include "lip2us/ops.hpp"
#include "lip2us/tensor.hpp"

namespace lip2us {

struct TowerLayer {
  std::size_t filters = 32;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pool = 2;  // 1 = no pooling
};

// Which parts of the network take part in a run.
//   raw_only:      grayscale tower only, no attention
//   use_flow=false: flow feature replaced by zeros
//   use_attention=false: gate forced to 1
struct Variant {
  bool use_flow = true;
  bool use_attention = true;
  bool raw_only = false;

  bool flow_tower() const { return !raw_only; }
  bool attention() const { return use_attention && !raw_only; }
};

struct ModelConfig {
  std::size_t in_h = 96;
  std::size_t in_w = 96;
  std::size_t clip_len = 7;  // N
  std::size_t seq_len = 5;   // T
  std::vector<TowerLayer> tower = {{32, 3, 1, 2}, {64, 3, 1, 2}, {64, 3, 1, 2}};
  std::size_t embed_dim = 256;
  std::size_t lstm_hidden = 256;
  std::size_t decoder_hidden = 256;
  std::size_t out_h = 64;
  std::size_t out_w = 64;
  double leaky_slope = 0.3;
  double conv_dropout = 0.25;
  double dense_dropout = 0.5;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  Variant variant;

  void validate() const;
  std::size_t gray_channels() const { return clip_len; }
  std::size_t flow_channels() const { return (clip_len - 1) * 2; }
  std::size_t out_pixels() const { return out_h * out_w; }
  /// Flattened length of one tower's output.
  std::size_t tower_features() const;
  std::size_t fuse_inputs() const;
};

struct ConvLayerParams {
  Tensor kernels;  // [C_out, C_in, k, k]
  Tensor bias;     // [C_out]
  BatchNormParams bn;
};

struct TowerParams {
  std::vector<ConvLayerParams> layers;
};

// Gate weights named after the recurrence: i, f, o sigmoid gates and the g
// candidate.
struct LstmParams {
  Tensor W_xi, W_hi, b_i;
  Tensor W_xf, W_hf, b_f;
  Tensor W_xo, W_ho, b_o;
  Tensor W_xg, W_hg, b_g;
};

struct ModelParams {
  ModelConfig config;
  TowerParams tower_a;  // grayscale clip
  TowerParams tower_b;  // flow stack; empty for raw_only
  Tensor fuse_w, fuse_b;
  LstmParams lstm;
  Tensor att_w, att_b;  // [1, lstm_hidden], [1]
  Tensor dec_w1, dec_b1, dec_w2, dec_b2;

  /// Learnable tensors in a fixed order with stable names.
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  /// Batch-norm running statistics.
  std::vector<std::pair<std::string, Tensor>> buffers() const;

  std::vector<Tensor> parameter_list() const;
  void set_requires_grad(bool on);
  void zero_grad();
  /// Deep copy, optionally converted to another dtype.
  ModelParams clone(DType dtype) const;
  ModelParams clone() const;
  DType dtype() const { return fuse_w.dtype(); }
};

/// Glorot-uniform weights, zero biases (forget gate bias 1), BN gamma 1 /
/// beta 0, running mean 0 / var 1.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed, DType dtype = DType::f32);

/// [C,H,W] -> [features] or [B,C,H,W] -> [B,features].
Tensor tower_forward(const Tensor& input, TowerParams& tower, const ModelConfig& config, Mode mode,
                     std::mt19937_64& rng);

/// Concatenates [feat_gray, feat_flow] and applies dense + leaky ReLU (+
/// dropout in train mode). feat_flow may be undefined for raw_only.
Tensor fuse(const Tensor& feat_gray, const Tensor& feat_flow, const ModelParams& params, Mode mode,
            std::mt19937_64& rng);

struct LstmState {
  Tensor h;
  Tensor c;

  static LstmState zeros(std::size_t hidden, DType dtype = DType::f32);
  static LstmState zeros(std::size_t batch, std::size_t hidden, DType dtype = DType::f32);
};

struct LstmStep {
  Tensor y;
  LstmState state;
};

/// i,f,o = sigmoid(W_x x + W_h h + b), g = tanh(W_xg x + W_hg h + b_g),
/// c' = f*c + i*g, h' = o*tanh(c'), y = h'. Accepts [D] or [B,D] rows.
LstmStep lstm_step(const Tensor& x, const LstmState& state, const LstmParams& params);

struct AttentionOutput {
  Tensor factor;  // [1] or [B,1], in (0,1)
  Tensor gated;   // factor * y
};

AttentionOutput attention_gate(const Tensor& y, const Tensor& W_att, const Tensor& b_att);

/// dense -> leaky ReLU (-> dropout) -> dense -> sigmoid. [D] -> [out_h,out_w],
/// [B,D] -> [B,out_h*out_w].
Tensor decode(const Tensor& y, const ModelParams& params, Mode mode, std::mt19937_64& rng);

struct SequenceOutput {
  Tensor images;                  // [T*B, out_h*out_w], row t*B + b
  std::vector<Tensor> attention;  // T entries of [B,1]
};

/// Runs T time steps over a batch laid out time-major: gray is
/// [T*B, N, H, W] and flow [T*B, (N-1)*2, H, W] with row t*B + b.
/// flow may be undefined when the variant does not read it.
SequenceOutput forward_sequence(const Tensor& gray, const Tensor& flow, std::size_t batch, ModelParams& params,
                                Mode mode, std::mt19937_64& rng);

/// Inference on one sequence: T clips [N,H,W] and T flow stacks
/// [N-1,2,H,W]; returns T images [out_h,out_w].
std::vector<Tensor> predict_sequence(const std::vector<Tensor>& clips, const std::vector<Tensor>& flows,
                                     ModelParams& params);

std::vector<NamedTensor> model_tensors(const ModelParams& params);
/// Copies matching tensors into params; a missing tensor or a shape mismatch
/// raises DimensionError naming it.
void load_model_tensors(ModelParams& params, const std::vector<NamedTensor>& tensors);

/// Name and L2 norm of every parameter, for diagnostics.
std::vector<std::pair<std::string, double>> parameter_norms(const ModelParams& params);

}  // namespace lip2us
