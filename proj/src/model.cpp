#include "lip2us/model.hpp"

#include <cmath>
#include <map>

#include "lip2us/error.hpp"

namespace lip2us {

namespace {

std::size_t conv_out(std::size_t in, const TowerLayer& l) {
  const std::size_t pad = l.kernel / 2;
  return (in + 2 * pad - l.kernel) / l.stride + 1;
}

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, DType dtype) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(std::move(shape), dtype);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set_value(i, u(rng));
  return t;
}

TowerParams init_tower(const ModelConfig& cfg, std::size_t in_c, std::mt19937_64& rng, DType dtype) {
  TowerParams tower;
  for (const auto& l : cfg.tower) {
    ConvLayerParams p;
    const std::size_t k2 = l.kernel * l.kernel;
    p.kernels = glorot({l.filters, in_c, l.kernel, l.kernel}, in_c * k2, l.filters * k2, rng, dtype);
    p.bias = Tensor::zeros({l.filters}, dtype);
    p.bn = BatchNormParams::create(l.filters, dtype);
    p.bn.momentum = cfg.bn_momentum;
    p.bn.epsilon = cfg.bn_epsilon;
    tower.layers.push_back(std::move(p));
    in_c = l.filters;
  }
  return tower;
}

void add_tower(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const TowerParams& t,
               bool buffers) {
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    const auto& l = t.layers[i];
    const std::string p = prefix + "." + std::to_string(i) + ".";
    if (buffers) {
      out.emplace_back(p + "bn.running_mean", l.bn.running_mean);
      out.emplace_back(p + "bn.running_var", l.bn.running_var);
    } else {
      out.emplace_back(p + "kernels", l.kernels);
      out.emplace_back(p + "bias", l.bias);
      out.emplace_back(p + "bn.gamma", l.bn.gamma);
      out.emplace_back(p + "bn.beta", l.bn.beta);
    }
  }
}

Tensor copy_as(const Tensor& t, DType dtype) { return t.defined() ? t.to(dtype) : Tensor(); }

TowerParams clone_tower(const TowerParams& t, DType dtype) {
  TowerParams out;
  for (const auto& l : t.layers) {
    ConvLayerParams p;
    p.kernels = copy_as(l.kernels, dtype);
    p.bias = copy_as(l.bias, dtype);
    p.bn = l.bn;
    p.bn.gamma = copy_as(l.bn.gamma, dtype);
    p.bn.beta = copy_as(l.bn.beta, dtype);
    p.bn.running_mean = copy_as(l.bn.running_mean, dtype);
    p.bn.running_var = copy_as(l.bn.running_var, dtype);
    out.layers.push_back(std::move(p));
  }
  return out;
}

Tensor gate(const Tensor& x, const Tensor& h, const Tensor& Wx, const Tensor& Wh, const Tensor& b, Activation act) {
  return activation(add(dense(x, Wx, b), dense(h, Wh)), act);
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(in_h, "in_h");
  positive(in_w, "in_w");
  positive(clip_len, "clip_len");
  positive(seq_len, "seq_len");
  positive(embed_dim, "embed_dim");
  positive(lstm_hidden, "lstm_hidden");
  positive(decoder_hidden, "decoder_hidden");
  positive(out_h, "out_h");
  positive(out_w, "out_w");
  if (tower.empty()) throw ConfigError("model.tower needs at least one layer");
  if (variant.flow_tower() && clip_len < 2)
    throw ConfigError("model.clip_len must be >= 2 when the flow tower is used");
  for (const auto* rate : {&conv_dropout, &dense_dropout})
    if (!(*rate >= 0.0 && *rate < 1.0)) throw ConfigError("model dropout rates must be in [0,1)");
  if (leaky_slope < 0) throw ConfigError("model.leaky_slope must be >= 0");
  std::size_t h = in_h, w = in_w;
  for (std::size_t i = 0; i < tower.size(); ++i) {
    const auto& l = tower[i];
    if (l.filters == 0 || l.kernel == 0 || l.stride == 0 || l.pool == 0)
      throw ConfigError("model.tower layer " + std::to_string(i) + " has a zero field");
    if (l.kernel % 2 == 0) throw ConfigError("model.tower layer " + std::to_string(i) + " kernel must be odd");
    h = conv_out(h, l) / l.pool;
    w = conv_out(w, l) / l.pool;
    if (h == 0 || w == 0)
      throw ConfigError("model.tower layer " + std::to_string(i) + " reduces the " + std::to_string(in_h) + "x" +
                        std::to_string(in_w) + " input to nothing");
  }
}

std::size_t ModelConfig::tower_features() const {
  std::size_t h = in_h, w = in_w;
  for (const auto& l : tower) {
    h = conv_out(h, l) / l.pool;
    w = conv_out(w, l) / l.pool;
  }
  return tower.back().filters * h * w;
}

std::size_t ModelConfig::fuse_inputs() const { return tower_features() * (variant.flow_tower() ? 2 : 1); }

std::vector<std::pair<std::string, Tensor>> ModelParams::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  add_tower(out, "tower_a", tower_a, false);
  add_tower(out, "tower_b", tower_b, false);
  out.emplace_back("fuse.weight", fuse_w);
  out.emplace_back("fuse.bias", fuse_b);
  const std::pair<const char*, const Tensor*> gates[] = {
      {"lstm.W_xi", &lstm.W_xi}, {"lstm.W_hi", &lstm.W_hi}, {"lstm.b_i", &lstm.b_i},
      {"lstm.W_xf", &lstm.W_xf}, {"lstm.W_hf", &lstm.W_hf}, {"lstm.b_f", &lstm.b_f},
      {"lstm.W_xo", &lstm.W_xo}, {"lstm.W_ho", &lstm.W_ho}, {"lstm.b_o", &lstm.b_o},
      {"lstm.W_xg", &lstm.W_xg}, {"lstm.W_hg", &lstm.W_hg}, {"lstm.b_g", &lstm.b_g}};
  for (const auto& [name, t] : gates) out.emplace_back(name, *t);
  if (config.variant.attention()) {
    out.emplace_back("attention.W_att", att_w);
    out.emplace_back("attention.b_att", att_b);
  }
  out.emplace_back("decoder.0.weight", dec_w1);
  out.emplace_back("decoder.0.bias", dec_b1);
  out.emplace_back("decoder.1.weight", dec_w2);
  out.emplace_back("decoder.1.bias", dec_b2);
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::buffers() const {
  std::vector<std::pair<std::string, Tensor>> out;
  add_tower(out, "tower_a", tower_a, true);
  add_tower(out, "tower_b", tower_b, true);
  return out;
}

std::vector<Tensor> ModelParams::parameter_list() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : parameters()) out.push_back(t);
  return out;
}

void ModelParams::set_requires_grad(bool on) {
  for (auto& t : parameter_list()) t.set_requires_grad(on);
}

void ModelParams::zero_grad() {
  for (auto& t : parameter_list()) t.zero_grad();
}

ModelParams ModelParams::clone(DType dtype) const {
  ModelParams out;
  out.config = config;
  out.tower_a = clone_tower(tower_a, dtype);
  out.tower_b = clone_tower(tower_b, dtype);
  out.fuse_w = copy_as(fuse_w, dtype);
  out.fuse_b = copy_as(fuse_b, dtype);
  const LstmParams& s = lstm;
  LstmParams& d = out.lstm;
  d = {copy_as(s.W_xi, dtype), copy_as(s.W_hi, dtype), copy_as(s.b_i, dtype),
       copy_as(s.W_xf, dtype), copy_as(s.W_hf, dtype), copy_as(s.b_f, dtype),
       copy_as(s.W_xo, dtype), copy_as(s.W_ho, dtype), copy_as(s.b_o, dtype),
       copy_as(s.W_xg, dtype), copy_as(s.W_hg, dtype), copy_as(s.b_g, dtype)};
  out.att_w = copy_as(att_w, dtype);
  out.att_b = copy_as(att_b, dtype);
  out.dec_w1 = copy_as(dec_w1, dtype);
  out.dec_b1 = copy_as(dec_b1, dtype);
  out.dec_w2 = copy_as(dec_w2, dtype);
  out.dec_b2 = copy_as(dec_b2, dtype);
  return out;
}

ModelParams ModelParams::clone() const { return clone(dtype()); }

ModelParams init_params(const ModelConfig& config, std::uint64_t seed, DType dtype) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.config = config;
  p.tower_a = init_tower(config, config.gray_channels(), rng, dtype);
  if (config.variant.flow_tower()) p.tower_b = init_tower(config, config.flow_channels(), rng, dtype);

  const std::size_t F = config.fuse_inputs(), E = config.embed_dim, H = config.lstm_hidden;
  p.fuse_w = glorot({E, F}, F, E, rng, dtype);
  p.fuse_b = Tensor::zeros({E}, dtype);

  auto& l = p.lstm;
  for (auto* w : {&l.W_xi, &l.W_xf, &l.W_xo, &l.W_xg}) *w = glorot({H, E}, E, H, rng, dtype);
  for (auto* w : {&l.W_hi, &l.W_hf, &l.W_ho, &l.W_hg}) *w = glorot({H, H}, H, H, rng, dtype);
  l.b_i = Tensor::zeros({H}, dtype);
  l.b_f = Tensor::full({H}, 1.0, dtype);
  l.b_o = Tensor::zeros({H}, dtype);
  l.b_g = Tensor::zeros({H}, dtype);

  if (config.variant.attention()) {
    p.att_w = glorot({1, H}, H, 1, rng, dtype);
    p.att_b = Tensor::zeros({1}, dtype);
  }

  const std::size_t D = config.decoder_hidden, P = config.out_pixels();
  p.dec_w1 = glorot({D, H}, H, D, rng, dtype);
  p.dec_b1 = Tensor::zeros({D}, dtype);
  p.dec_w2 = glorot({P, D}, D, P, rng, dtype);
  p.dec_b2 = Tensor::zeros({P}, dtype);
  return p;
}

Tensor tower_forward(const Tensor& input, TowerParams& tower, const ModelConfig& config, Mode mode,
                     std::mt19937_64& rng) {
  const bool batched = input.rank() == 4;
  if (input.rank() != 3 && !batched)
    throw DimensionError("tower: input shape " + to_string(input.shape()) + " must be [C,H,W] or [B,C,H,W]");
  if (tower.layers.size() != config.tower.size())
    throw DimensionError("tower: " + std::to_string(tower.layers.size()) + " parameter layers for a " +
                         std::to_string(config.tower.size()) + "-layer config");
  Tensor x = batched ? input : reshape(input, {1, input.dim(0), input.dim(1), input.dim(2)});
  if (x.dim(2) != config.in_h || x.dim(3) != config.in_w)
    throw DimensionError("tower: input spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " != configured " + std::to_string(config.in_h) + "x" + std::to_string(config.in_w));
  for (std::size_t i = 0; i < tower.layers.size(); ++i) {
    const auto& spec = config.tower[i];
    auto& layer = tower.layers[i];
    if (x.dim(1) != layer.kernels.dim(1))
      throw DimensionError("tower layer " + std::to_string(i) + ": input has " + std::to_string(x.dim(1)) +
                           " channels, kernels expect " + std::to_string(layer.kernels.dim(1)));
    x = conv2d(x, layer.kernels, layer.bias, static_cast<int>(spec.stride), static_cast<int>(spec.kernel / 2));
    x = batchnorm(x, layer.bn, mode);
    x = leaky_relu(x, config.leaky_slope);
    if (spec.pool > 1) x = maxpool2d(x, static_cast<int>(spec.pool), static_cast<int>(spec.pool));
    x = dropout(x, config.conv_dropout, mode, rng);
  }
  const std::size_t rows = x.dim(0), feat = x.numel() / rows;
  return batched ? reshape(x, {rows, feat}) : reshape(x, {feat});
}

Tensor fuse(const Tensor& feat_gray, const Tensor& feat_flow, const ModelParams& params, Mode mode,
            std::mt19937_64& rng) {
  const bool single = feat_gray.rank() == 1;
  Tensor a = single ? reshape(feat_gray, {1, feat_gray.dim(0)}) : feat_gray;
  Tensor joined = a;
  if (feat_flow.defined()) {
    Tensor b = feat_flow.rank() == 1 ? reshape(feat_flow, {1, feat_flow.dim(0)}) : feat_flow;
    joined = concat_cols({a, b});
  }
  Tensor e = leaky_relu(dense(joined, params.fuse_w, params.fuse_b), params.config.leaky_slope);
  e = dropout(e, params.config.dense_dropout, mode, rng);
  return single ? reshape(e, {e.dim(1)}) : e;
}

LstmState LstmState::zeros(std::size_t hidden, DType dtype) {
  return {Tensor::zeros({hidden}, dtype), Tensor::zeros({hidden}, dtype)};
}

LstmState LstmState::zeros(std::size_t batch, std::size_t hidden, DType dtype) {
  return {Tensor::zeros({batch, hidden}, dtype), Tensor::zeros({batch, hidden}, dtype)};
}

LstmStep lstm_step(const Tensor& x, const LstmState& state, const LstmParams& p) {
  if (state.h.shape() != state.c.shape())
    throw DimensionError("lstm_step: h " + to_string(state.h.shape()) + " and c " + to_string(state.c.shape()) +
                         " differ");
  if (x.rank() != state.h.rank() || (x.rank() == 2 && x.dim(0) != state.h.dim(0)))
    throw DimensionError("lstm_step: input " + to_string(x.shape()) + " does not match state " +
                         to_string(state.h.shape()));
  const Tensor i = gate(x, state.h, p.W_xi, p.W_hi, p.b_i, Activation::sigmoid());
  const Tensor f = gate(x, state.h, p.W_xf, p.W_hf, p.b_f, Activation::sigmoid());
  const Tensor o = gate(x, state.h, p.W_xo, p.W_ho, p.b_o, Activation::sigmoid());
  const Tensor g = gate(x, state.h, p.W_xg, p.W_hg, p.b_g, Activation::tanh());
  if (i.shape() != state.c.shape())
    throw DimensionError("lstm_step: gate shape " + to_string(i.shape()) + " != cell shape " +
                         to_string(state.c.shape()));
  Tensor c = add(mul(f, state.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, {h, c}};
}

AttentionOutput attention_gate(const Tensor& y, const Tensor& W_att, const Tensor& b_att) {
  Tensor factor = sigmoid(dense(y, W_att, b_att));
  return {factor, scale_rows(y, factor)};
}

Tensor decode(const Tensor& y, const ModelParams& params, Mode mode, std::mt19937_64& rng) {
  const auto& cfg = params.config;
  Tensor h = leaky_relu(dense(y, params.dec_w1, params.dec_b1), cfg.leaky_slope);
  h = dropout(h, cfg.dense_dropout, mode, rng);
  Tensor out = sigmoid(dense(h, params.dec_w2, params.dec_b2));
  return y.rank() == 1 ? reshape(out, {cfg.out_h, cfg.out_w}) : out;
}

SequenceOutput forward_sequence(const Tensor& gray, const Tensor& flow, std::size_t batch, ModelParams& params,
                                Mode mode, std::mt19937_64& rng) {
  const auto& cfg = params.config;
  const auto& variant = cfg.variant;
  if (batch == 0 || gray.rank() != 4 || gray.dim(0) % batch != 0)
    throw DimensionError("forward_sequence: gray input " + to_string(gray.shape()) +
                         " is not [T*B,N,H,W] for B = " + std::to_string(batch));
  if (gray.dim(1) != cfg.gray_channels())
    throw DimensionError("forward_sequence: gray input has " + std::to_string(gray.dim(1)) + " channels, expected " +
                         std::to_string(cfg.gray_channels()));
  const std::size_t T = gray.dim(0) / batch;
  const DType dtype = params.dtype();

  Tensor feat_a = tower_forward(gray, params.tower_a, cfg, mode, rng);
  Tensor feat_b;
  if (variant.flow_tower()) {
    if (variant.use_flow) {
      if (!flow.defined()) throw UsageError("forward_sequence: flow input required by this variant");
      if (flow.rank() != 4 || flow.dim(0) != gray.dim(0) || flow.dim(1) != cfg.flow_channels())
        throw DimensionError("forward_sequence: flow input " + to_string(flow.shape()) + " is not [" +
                             std::to_string(gray.dim(0)) + "," + std::to_string(cfg.flow_channels()) + ",H,W]");
      feat_b = tower_forward(flow, params.tower_b, cfg, mode, rng);
    } else {
      feat_b = Tensor::zeros({gray.dim(0), cfg.tower_features()}, dtype);
    }
  }
  const Tensor embed = fuse(feat_a, feat_b, params, mode, rng);

  SequenceOutput out;
  std::vector<Tensor> gated;
  LstmState state = LstmState::zeros(batch, cfg.lstm_hidden, dtype);
  for (std::size_t t = 0; t < T; ++t) {
    LstmStep step = lstm_step(slice_rows(embed, t * batch, (t + 1) * batch), state, params.lstm);
    state = step.state;
    if (variant.attention()) {
      AttentionOutput a = attention_gate(step.y, params.att_w, params.att_b);
      out.attention.push_back(a.factor.detach());
      gated.push_back(a.gated);
    } else {
      out.attention.push_back(Tensor::full({batch, 1}, 1.0, dtype));
      gated.push_back(step.y);
    }
  }
  out.images = decode(concat_rows(gated), params, mode, rng);
  return out;
}

std::vector<Tensor> predict_sequence(const std::vector<Tensor>& clips, const std::vector<Tensor>& flows,
                                     ModelParams& params) {
  const auto& cfg = params.config;
  if (clips.empty()) throw UsageError("predict_sequence: no clips");
  const bool need_flow = cfg.variant.flow_tower() && cfg.variant.use_flow;
  if (need_flow && flows.size() != clips.size())
    throw DimensionError("predict_sequence: " + std::to_string(clips.size()) + " clips but " +
                         std::to_string(flows.size()) + " flow stacks");
  const std::size_t T = clips.size();
  const std::size_t N = cfg.clip_len, H = cfg.in_h, W = cfg.in_w;
  const DType dtype = params.dtype();
  auto stack = [&](const std::vector<Tensor>& parts, std::size_t channels, const char* what) {
    Tensor out({T, channels, H, W}, dtype);
    const std::size_t plane = channels * H * W;
    for (std::size_t t = 0; t < T; ++t) {
      if (parts[t].numel() != plane)
        throw DimensionError(std::string("predict_sequence: ") + what + " " + std::to_string(t) + " has shape " +
                             to_string(parts[t].shape()));
      for (std::size_t i = 0; i < plane; ++i) out.set_value(t * plane + i, parts[t].value(i));
    }
    return out;
  };
  NoGradGuard no_grad;
  std::mt19937_64 rng(0);
  const Tensor gray = stack(clips, N, "clip");
  const Tensor flow = need_flow ? stack(flows, cfg.flow_channels(), "flow stack") : Tensor();
  const SequenceOutput seq = forward_sequence(gray, flow, 1, params, Mode::infer, rng);
  std::vector<Tensor> images;
  for (std::size_t t = 0; t < T; ++t) images.push_back(reshape(slice_rows(seq.images, t, t + 1), {cfg.out_h, cfg.out_w}));
  return images;
}

std::vector<NamedTensor> model_tensors(const ModelParams& params) {
  std::vector<NamedTensor> out;
  for (auto& [name, t] : params.parameters()) out.push_back({name, t});
  for (auto& [name, t] : params.buffers()) out.push_back({name, t});
  return out;
}

void load_model_tensors(ModelParams& params, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  std::vector<std::pair<std::string, Tensor>> targets = params.parameters();
  for (auto& b : params.buffers()) targets.push_back(b);
  for (auto& [name, dst] : targets) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DimensionError("checkpoint has no tensor '" + name + "'");
    const Tensor& src = *it->second;
    if (src.shape() != dst.shape())
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + to_string(src.shape()) + ", model expects " +
                           to_string(dst.shape()));
    for (std::size_t i = 0; i < dst.numel(); ++i) dst.set_value(i, src.value(i));
  }
}

std::vector<std::pair<std::string, double>> parameter_norms(const ModelParams& params) {
  std::vector<std::pair<std::string, double>> out;
  for (auto& [name, t] : params.parameters()) {
    double acc = 0;
    for (std::size_t i = 0; i < t.numel(); ++i) acc += t.value(i) * t.value(i);
    out.emplace_back(name, std::sqrt(acc));
  }
  return out;
}

}  // namespace lip2us
