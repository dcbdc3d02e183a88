#include "lip2us/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "lip2us/parallel.hpp"

namespace lip2us {

using detail::dispatch;
using detail::make_result;
using detail::Storage;
using detail::TensorImpl;

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

TensorImpl& input_of(TensorImpl& out, std::size_t i) { return *out.grad_fn->inputs[i]; }

void require_rank(const char* op, const char* what, const Tensor& t, std::size_t lo, std::size_t hi) {
  if (t.rank() < lo || t.rank() > hi)
    throw DimensionError(std::string(op) + ": " + what + " has shape " + to_string(t.shape()) +
                         ", expected rank " + std::to_string(lo) +
                         (lo == hi ? "" : "-" + std::to_string(hi)));
}

struct ConvGeometry {
  std::size_t batch, in_c, in_h, in_w;
  std::size_t out_c, k_h, k_w;
  std::size_t out_h, out_w;
  int stride, pad;

  std::size_t col_rows() const { return in_c * k_h * k_w; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose input column ox*stride - pad + kj is inside
// the image.
struct ColRange {
  std::size_t lo, hi;
};

ColRange valid_cols(const ConvGeometry& g, std::size_t kj) {
  const long off = static_cast<long>(kj) - g.pad;
  const long s = g.stride, w = static_cast<long>(g.in_w), n = static_cast<long>(g.out_w);
  const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const long hi = std::min(n, w - off <= 0 ? 0 : (w - off + s - 1) / s);
  return {static_cast<std::size_t>(std::min(lo, n)), static_cast<std::size_t>(std::max(hi, std::min(lo, n)))};
}

template <class T>
void im2col(const ConvGeometry& g, const T* src, T* col) {
  const std::size_t P = g.col_cols();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ki = 0; ki < g.k_h; ++ki)
      for (std::size_t kj = 0; kj < g.k_w; ++kj) {
        T* dst = col + ((c * g.k_h + ki) * g.k_w + kj) * P;
        const T* plane = src + c * g.in_h * g.in_w;
        const auto [lo, hi] = valid_cols(g, kj);
        const long off = static_cast<long>(kj) - g.pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ki);
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          std::fill(row, row + lo, T(0));
          std::fill(row + hi, row + g.out_w, T(0));
          const T* srow = plane + iy * g.in_w;
          const long s = g.stride;
          for (std::size_t ox = lo; ox < hi; ++ox) row[ox] = srow[static_cast<long>(ox) * s + off];
        }
      }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* dst) {
  const std::size_t P = g.col_cols();
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ki = 0; ki < g.k_h; ++ki)
      for (std::size_t kj = 0; kj < g.k_w; ++kj) {
        const T* src = col + ((c * g.k_h + ki) * g.k_w + kj) * P;
        T* plane = dst + c * g.in_h * g.in_w;
        const auto [lo, hi] = valid_cols(g, kj);
        const long off = static_cast<long>(kj) - g.pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ki);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          T* drow = plane + iy * g.in_w;
          const T* srow = src + oy * g.out_w;
          const long s = g.stride;
          for (std::size_t ox = lo; ox < hi; ++ox) drow[static_cast<long>(ox) * s + off] += srow[ox];
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride, int padding) {
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  require_rank("conv2d", "input", input, 3, 4);
  require_rank("conv2d", "kernels", kernels, 4, 4);
  require_rank("conv2d", "bias", bias, 1, 1);
  detail::check_same_dtype("conv2d", input, kernels);
  detail::check_same_dtype("conv2d", input, bias);
  const bool batched = input.rank() == 4;
  const std::size_t off = batched ? 1 : 0;

  ConvGeometry g{};
  g.batch = batched ? input.dim(0) : 1;
  g.in_c = input.dim(off);
  g.in_h = input.dim(off + 1);
  g.in_w = input.dim(off + 2);
  g.out_c = kernels.dim(0);
  g.k_h = kernels.dim(2);
  g.k_w = kernels.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (kernels.dim(1) != g.in_c)
    throw DimensionError("conv2d: input channel axis is " + std::to_string(g.in_c) +
                         " but kernels expect " + std::to_string(kernels.dim(1)) + " (kernel axis 1)");
  if (bias.dim(0) != g.out_c)
    throw DimensionError("conv2d: bias length " + std::to_string(bias.dim(0)) + " != output channels " +
                         std::to_string(g.out_c));
  const std::size_t padded_h = g.in_h + 2 * padding, padded_w = g.in_w + 2 * padding;
  if (g.k_h > padded_h || g.k_w > padded_w)
    throw DimensionError("conv2d: kernel " + std::to_string(g.k_h) + "x" + std::to_string(g.k_w) +
                         " exceeds padded input " + std::to_string(padded_h) + "x" +
                         std::to_string(padded_w) + " (axes H,W)");
  g.out_h = (padded_h - g.k_h) / stride + 1;
  g.out_w = (padded_w - g.k_w) / stride + 1;

  Shape out_shape = batched ? Shape{g.batch, g.out_c, g.out_h, g.out_w} : Shape{g.out_c, g.out_h, g.out_w};

  return dispatch(input.dtype(), [&]<class T>(T) {
    const std::size_t K = g.col_rows(), P = g.col_cols();
    const std::size_t in_stride = g.in_c * g.in_h * g.in_w, out_stride = g.out_c * P;
    std::vector<T> out(g.batch * out_stride);
    const T* x = input.data<T>().data();
    CMapR<T> w(kernels.data<T>().data(), g.out_c, K);
    const T* b = bias.data<T>().data();
    parallel_for(g.batch, [&](std::size_t n) {
      std::vector<T> col(K * P);
      im2col(g, x + n * in_stride, col.data());
      MapR<T> y(out.data() + n * out_stride, g.out_c, P);
      y.noalias() = w * CMapR<T>(col.data(), K, P);
      for (std::size_t co = 0; co < g.out_c; ++co) y.row(co).array() += b[co];
    });

    return make_result("conv2d", out_shape, std::move(out), {input, kernels, bias}, [g](TensorImpl& o) {
      TensorImpl& in = input_of(o, 0);
      TensorImpl& ker = input_of(o, 1);
      TensorImpl& bi = input_of(o, 2);
      const std::size_t K = g.col_rows(), P = g.col_cols();
      const std::size_t in_stride = g.in_c * g.in_h * g.in_w, out_stride = g.out_c * P;
      const auto& gy = o.grad_values<T>();
      const auto& xv = in.values<T>();
      CMapR<T> w(ker.values<T>().data(), g.out_c, K);
      T* dx = in.requires_grad ? in.grad_values<T>().data() : nullptr;
      const bool need_w = ker.requires_grad;
      std::vector<T> partial_w(need_w ? g.batch * g.out_c * K : 0);
      parallel_for(g.batch, [&](std::size_t n) {
        CMapR<T> gyn(gy.data() + n * out_stride, g.out_c, P);
        std::vector<T> col(K * P);
        if (need_w) {
          im2col(g, xv.data() + n * in_stride, col.data());
          MapR<T>(partial_w.data() + n * g.out_c * K, g.out_c, K).noalias() =
              gyn * CMapR<T>(col.data(), K, P).transpose();
        }
        if (dx) {
          MapR<T>(col.data(), K, P).noalias() = w.transpose() * gyn;
          col2im_add(g, col.data(), dx + n * in_stride);
        }
      });
      if (need_w) {
        auto& dw = ker.grad_values<T>();
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* p = partial_w.data() + n * g.out_c * K;
          for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += p[i];
        }
      }
      if (bi.requires_grad) {
        auto& db = bi.grad_values<T>();
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t co = 0; co < g.out_c; ++co) {
            const T* row = gy.data() + n * out_stride + co * P;
            T acc = 0;
            for (std::size_t p = 0; p < P; ++p) acc += row[p];
            db[co] += acc;
          }
      }
    });
  });
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
  if (window < 1 || stride < 1) throw ConfigError("maxpool2d: window and stride must be >= 1");
  require_rank("maxpool2d", "input", input, 3, 4);
  const bool batched = input.rank() == 4;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t planes = (batched ? input.dim(0) : 1) * input.dim(off);
  const std::size_t h = input.dim(off + 1), w = input.dim(off + 2);
  const auto win = static_cast<std::size_t>(window);
  if (win > h || win > w)
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " exceeds input " +
                         std::to_string(h) + "x" + std::to_string(w) + " (axes H,W)");
  const std::size_t oh = (h - win) / stride + 1, ow = (w - win) / stride + 1;
  Shape out_shape = input.shape();
  out_shape[off + 1] = oh;
  out_shape[off + 2] = ow;

  return dispatch(input.dtype(), [&]<class T>(T) {
    const auto& x = input.data<T>();
    std::vector<T> out(planes * oh * ow);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = p * h * w + oy * stride * w + ox * stride;
          for (std::size_t i = 0; i < win; ++i)
            for (std::size_t j = 0; j < win; ++j) {
              const std::size_t idx = p * h * w + (oy * stride + i) * w + ox * stride + j;
              if (x[idx] > x[best]) best = idx;
            }
          const std::size_t o = (p * oh + oy) * ow + ox;
          out[o] = x[best];
          argmax[o] = best;
        }
    return make_result("maxpool2d", out_shape, std::move(out), {input},
                       [argmax = std::move(argmax)](TensorImpl& o) {
                         TensorImpl& in = input_of(o, 0);
                         const auto& gy = o.grad_values<T>();
                         auto& dx = in.grad_values<T>();
                         for (std::size_t i = 0; i < gy.size(); ++i) dx[argmax[i]] += gy[i];
                       });
  });
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank("dense", "input", input, 1, 2);
  require_rank("dense", "weight", weight, 2, 2);
  detail::check_same_dtype("dense", input, weight);
  const bool batched = input.rank() == 2;
  const std::size_t rows = batched ? input.dim(0) : 1;
  const std::size_t d_in = input.dim(batched ? 1 : 0);
  const std::size_t d_out = weight.dim(0);
  if (weight.dim(1) != d_in)
    throw DimensionError("dense: input width " + std::to_string(d_in) + " != weight axis 1 (" +
                         std::to_string(weight.dim(1)) + ")");
  const bool has_bias = bias.defined();
  if (has_bias) {
    require_rank("dense", "bias", bias, 1, 1);
    detail::check_same_dtype("dense", input, bias);
    if (bias.dim(0) != d_out)
      throw DimensionError("dense: bias length " + std::to_string(bias.dim(0)) + " != output width " +
                           std::to_string(d_out));
  }
  Shape out_shape = batched ? Shape{rows, d_out} : Shape{d_out};
  std::vector<Tensor> inputs{input, weight};
  if (has_bias) inputs.push_back(bias);

  return dispatch(input.dtype(), [&]<class T>(T) {
    std::vector<T> out(rows * d_out);
    MapR<T> y(out.data(), rows, d_out);
    y.noalias() = CMapR<T>(input.data<T>().data(), rows, d_in) *
                  CMapR<T>(weight.data<T>().data(), d_out, d_in).transpose();
    if (has_bias) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data<T>().data(), d_out);
      y.rowwise() += b;
    }
    return make_result("dense", out_shape, std::move(out), std::move(inputs),
                       [rows, d_in, d_out, has_bias](TensorImpl& o) {
                         TensorImpl& in = input_of(o, 0);
                         TensorImpl& wt = input_of(o, 1);
                         CMapR<T> gy(o.grad_values<T>().data(), rows, d_out);
                         if (in.requires_grad)
                           MapR<T>(in.grad_values<T>().data(), rows, d_in).noalias() +=
                               gy * CMapR<T>(wt.values<T>().data(), d_out, d_in);
                         if (wt.requires_grad)
                           MapR<T>(wt.grad_values<T>().data(), d_out, d_in).noalias() +=
                               gy.transpose() * CMapR<T>(in.values<T>().data(), rows, d_in);
                         if (has_bias) {
                           TensorImpl& bi = input_of(o, 2);
                           if (bi.requires_grad) {
                             auto& db = bi.grad_values<T>();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < d_out; ++j) db[j] += gy(r, j);
                           }
                         }
                       });
  });
}

Tensor activation(const Tensor& input, Activation kind) {
  return dispatch(input.dtype(), [&]<class T>(T) {
    const auto& x = input.data<T>();
    std::vector<T> out(x.size());
    const T slope = static_cast<T>(kind.slope);
    switch (kind.kind) {
      case Activation::Kind::sigmoid:
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-x[i]));
          } else {
            const T e = std::exp(x[i]);
            out[i] = e / (T(1) + e);
          }
        }
        break;
      case Activation::Kind::tanh:
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
        break;
      case Activation::Kind::leaky_relu:
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T(0) ? x[i] : slope * x[i];
        break;
    }
    const char* name = kind.kind == Activation::Kind::sigmoid ? "sigmoid"
                       : kind.kind == Activation::Kind::tanh  ? "tanh"
                                                              : "leaky_relu";
    return make_result(name, input.shape(), std::move(out), {input}, [kind, slope](TensorImpl& o) {
      TensorImpl& in = input_of(o, 0);
      const auto& gy = o.grad_values<T>();
      const auto& y = o.values<T>();
      const auto& xv = in.values<T>();
      auto& dx = in.grad_values<T>();
      switch (kind.kind) {
        case Activation::Kind::sigmoid:
          for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * y[i] * (T(1) - y[i]);
          break;
        case Activation::Kind::tanh:
          for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * (T(1) - y[i] * y[i]);
          break;
        case Activation::Kind::leaky_relu:
          for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += xv[i] >= T(0) ? gy[i] : slope * gy[i];
          break;
      }
    });
  });
}

BatchNormParams BatchNormParams::create(std::size_t channels, DType dtype) {
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0, dtype);
  p.beta = Tensor::zeros({channels}, dtype);
  p.running_mean = Tensor::zeros({channels}, dtype);
  p.running_var = Tensor::full({channels}, 1.0, dtype);
  p.gamma.set_requires_grad();
  p.beta.set_requires_grad();
  return p;
}

Tensor batchnorm(const Tensor& input, BatchNormParams& params, Mode mode) {
  require_rank("batchnorm", "input", input, 2, 8);
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t spatial = input.numel() / (batch * channels);
  for (const Tensor* t : {&params.gamma, &params.beta, &params.running_mean, &params.running_var}) {
    if (t->rank() != 1 || t->dim(0) != channels)
      throw DimensionError("batchnorm: parameter shape " + to_string(t->shape()) +
                           " does not match channel axis " + std::to_string(channels));
    detail::check_same_dtype("batchnorm", input, *t);
  }
  if (mode == Mode::train && batch < 2)
    throw ConfigError("batchnorm: train mode needs a batch of at least 2, got " + std::to_string(batch));
  if (params.epsilon <= 0) throw ConfigError("batchnorm: epsilon must be positive");

  return dispatch(input.dtype(), [&]<class T>(T) {
    const auto& x = input.data<T>();
    const auto& gamma = params.gamma.data<T>();
    const auto& beta = params.beta.data<T>();
    auto rmean = params.running_mean.mutable_data<T>();
    auto rvar = params.running_var.mutable_data<T>();
    const double count = static_cast<double>(batch * spatial);

    std::vector<T> xhat(x.size()), out(x.size());
    std::vector<T> inv_std(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      double mean, var;
      if (mode == Mode::train) {
        double s = 0;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* p = x.data() + (n * channels + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) s += p[i];
        }
        mean = s / count;
        double ss = 0;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* p = x.data() + (n * channels + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            const double d = p[i] - mean;
            ss += d * d;
          }
        }
        var = ss / count;
        rmean[c] = static_cast<T>((1.0 - params.momentum) * rmean[c] + params.momentum * mean);
        rvar[c] = static_cast<T>((1.0 - params.momentum) * rvar[c] +
                                 params.momentum * var * count / (count - 1.0));
      } else {
        mean = rmean[c];
        var = rvar[c];
      }
      const double is = 1.0 / std::sqrt(var + params.epsilon);
      inv_std[c] = static_cast<T>(is);
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t base = (n * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const T h = static_cast<T>((x[base + i] - mean) * is);
          xhat[base + i] = h;
          out[base + i] = gamma[c] * h + beta[c];
        }
      }
    }

    return make_result(
        "batchnorm", input.shape(), std::move(out), {input, params.gamma, params.beta},
        [mode, batch, channels, spatial, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& o) {
          TensorImpl& in = input_of(o, 0);
          TensorImpl& ga = input_of(o, 1);
          TensorImpl& be = input_of(o, 2);
          const auto& gy = o.grad_values<T>();
          const auto& gamma = ga.values<T>();
          const double count = static_cast<double>(batch * spatial);
          for (std::size_t c = 0; c < channels; ++c) {
            double sum_dy = 0, sum_dy_xhat = 0;
            for (std::size_t n = 0; n < batch; ++n) {
              const std::size_t base = (n * channels + c) * spatial;
              for (std::size_t i = 0; i < spatial; ++i) {
                sum_dy += gy[base + i];
                sum_dy_xhat += static_cast<double>(gy[base + i]) * xhat[base + i];
              }
            }
            if (ga.requires_grad) ga.grad_values<T>()[c] += static_cast<T>(sum_dy_xhat);
            if (be.requires_grad) be.grad_values<T>()[c] += static_cast<T>(sum_dy);
            if (!in.requires_grad) continue;
            auto& dx = in.grad_values<T>();
            const double scale = static_cast<double>(gamma[c]) * inv_std[c];
            for (std::size_t n = 0; n < batch; ++n) {
              const std::size_t base = (n * channels + c) * spatial;
              for (std::size_t i = 0; i < spatial; ++i) {
                if (mode == Mode::train)
                  dx[base + i] += static_cast<T>(scale / count *
                                                 (count * gy[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat));
                else
                  dx[base + i] += static_cast<T>(scale * gy[base + i]);
              }
            }
          }
        });
  });
}

Tensor dropout(const Tensor& input, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::infer || rate == 0.0) return input;
  return dispatch(input.dtype(), [&]<class T>(T) {
    const auto& x = input.data<T>();
    std::vector<T> mask(x.size()), out(x.size());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    // An element is dropped when a raw 64-bit draw falls below rate * 2^64.
    const auto threshold = static_cast<std::uint64_t>(std::ldexp(rate, 64));
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = rng() < threshold ? T(0) : keep_scale;
      out[i] = x[i] * mask[i];
    }
    return make_result("dropout", input.shape(), std::move(out), {input}, [mask = std::move(mask)](TensorImpl& o) {
      TensorImpl& in = input_of(o, 0);
      const auto& gy = o.grad_values<T>();
      auto& dx = in.grad_values<T>();
      for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * mask[i];
    });
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("mse_loss: prediction shape " + to_string(pred.shape()) + " != target shape " +
                         to_string(target.shape()));
  detail::check_same_dtype("mse_loss", pred, target);
  return dispatch(pred.dtype(), [&]<class T>(T) {
    const auto& p = pred.data<T>();
    const auto& t = target.data<T>();
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - t[i];
      acc += d * d;
    }
    const double n = static_cast<double>(p.size());
    std::vector<T> out{static_cast<T>(acc / n)};
    return make_result("mse_loss", {1}, std::move(out), {pred, target}, [n](TensorImpl& o) {
      TensorImpl& pi = input_of(o, 0);
      TensorImpl& ti = input_of(o, 1);
      const T g = o.grad_values<T>()[0];
      const auto& pv = pi.values<T>();
      const auto& tv = ti.values<T>();
      const T scale = static_cast<T>(2.0 / n) * g;
      if (pi.requires_grad) {
        auto& dp = pi.grad_values<T>();
        for (std::size_t i = 0; i < pv.size(); ++i) dp[i] += scale * (pv[i] - tv[i]);
      }
      if (ti.requires_grad) {
        auto& dt = ti.grad_values<T>();
        for (std::size_t i = 0; i < pv.size(); ++i) dt[i] -= scale * (pv[i] - tv[i]);
      }
    });
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  detail::check_same_dtype("add", a, b);
  return dispatch(a.dtype(), [&]<class T>(T) {
    const auto& x = a.data<T>();
    const auto& y = b.data<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return make_result("add", a.shape(), std::move(out), {a, b}, [](TensorImpl& o) {
      const auto& gy = o.grad_values<T>();
      for (std::size_t k = 0; k < 2; ++k) {
        TensorImpl& in = input_of(o, k);
        if (!in.requires_grad) continue;
        auto& d = in.grad_values<T>();
        for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
      }
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  detail::check_same_dtype("mul", a, b);
  return dispatch(a.dtype(), [&]<class T>(T) {
    const auto& x = a.data<T>();
    const auto& y = b.data<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return make_result("mul", a.shape(), std::move(out), {a, b}, [](TensorImpl& o) {
      TensorImpl& ai = input_of(o, 0);
      TensorImpl& bi = input_of(o, 1);
      const auto& gy = o.grad_values<T>();
      const auto& av = ai.values<T>();
      const auto& bv = bi.values<T>();
      if (ai.requires_grad) {
        auto& d = ai.grad_values<T>();
        for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * bv[i];
      }
      if (bi.requires_grad) {
        auto& d = bi.grad_values<T>();
        for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * av[i];
      }
    });
  });
}

Tensor sum(const Tensor& x) {
  return dispatch(x.dtype(), [&]<class T>(T) {
    double acc = 0;
    for (auto v : x.data<T>()) acc += v;
    std::vector<T> out{static_cast<T>(acc)};
    return make_result("sum", {1}, std::move(out), {x}, [](TensorImpl& o) {
      TensorImpl& in = input_of(o, 0);
      const T g = o.grad_values<T>()[0];
      for (auto& d : in.grad_values<T>()) d += g;
    });
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& gate) {
  require_rank("scale_rows", "input", x, 1, 2);
  detail::check_same_dtype("scale_rows", x, gate);
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
  const bool gate_ok = x.rank() == 2 ? (gate.rank() == 2 && gate.dim(0) == rows && gate.dim(1) == 1)
                                     : (gate.numel() == 1);
  if (!gate_ok)
    throw DimensionError("scale_rows: gate shape " + to_string(gate.shape()) + " does not match input " +
                         to_string(x.shape()));
  return dispatch(x.dtype(), [&]<class T>(T) {
    const auto& xv = x.data<T>();
    const auto& gv = gate.data<T>();
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * gv[r];
    return make_result("scale_rows", x.shape(), std::move(out), {x, gate}, [rows, cols](TensorImpl& o) {
      TensorImpl& xi = input_of(o, 0);
      TensorImpl& gi = input_of(o, 1);
      const auto& gy = o.grad_values<T>();
      const auto& xv = xi.values<T>();
      const auto& gv = gi.values<T>();
      if (xi.requires_grad) {
        auto& dx = xi.grad_values<T>();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += gy[r * cols + c] * gv[r];
      }
      if (gi.requires_grad) {
        auto& dg = gi.grad_values<T>();
        for (std::size_t r = 0; r < rows; ++r) {
          T acc = 0;
          for (std::size_t c = 0; c < cols; ++c) acc += gy[r * cols + c] * xv[r * cols + c];
          dg[r] += acc;
        }
      }
    });
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", "input", p, 2, 2);
    detail::check_same_dtype("concat_cols", parts[0], p);
    if (p.dim(0) != rows)
      throw DimensionError("concat_cols: row counts differ (" + std::to_string(rows) + " vs " +
                           std::to_string(p.dim(0)) + ")");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  return dispatch(parts[0].dtype(), [&]<class T>(T) {
    std::vector<T> out(rows * total);
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& v = parts[k].data<T>();
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + col);
      col += widths[k];
    }
    return make_result("concat_cols", {rows, total}, std::move(out), parts, [rows, total, widths](TensorImpl& o) {
      const auto& gy = o.grad_values<T>();
      std::size_t col = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        TensorImpl& in = input_of(o, k);
        if (in.requires_grad) {
          auto& d = in.grad_values<T>();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c) d[r * widths[k] + c] += gy[r * total + col + c];
        }
        col += widths[k];
      }
    });
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  const std::size_t cols = parts[0].dim(1);
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank("concat_rows", "input", p, 2, 2);
    detail::check_same_dtype("concat_rows", parts[0], p);
    if (p.dim(1) != cols)
      throw DimensionError("concat_rows: column counts differ (" + std::to_string(cols) + " vs " +
                           std::to_string(p.dim(1)) + ")");
    counts.push_back(p.numel());
    total += p.dim(0);
  }
  return dispatch(parts[0].dtype(), [&]<class T>(T) {
    std::vector<T> out;
    out.reserve(total * cols);
    for (const auto& p : parts) {
      const auto& v = p.data<T>();
      out.insert(out.end(), v.begin(), v.end());
    }
    return make_result("concat_rows", {total, cols}, std::move(out), parts, [counts](TensorImpl& o) {
      const auto& gy = o.grad_values<T>();
      std::size_t off = 0;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        TensorImpl& in = input_of(o, k);
        if (in.requires_grad) {
          auto& d = in.grad_values<T>();
          for (std::size_t i = 0; i < counts[k]; ++i) d[i] += gy[off + i];
        }
        off += counts[k];
      }
    });
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank("slice_rows", "input", x, 2, 2);
  if (begin >= end || end > x.dim(0))
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + std::to_string(x.dim(0)) + " rows");
  const std::size_t cols = x.dim(1);
  return dispatch(x.dtype(), [&]<class T>(T) {
    const auto& v = x.data<T>();
    std::vector<T> out(v.begin() + begin * cols, v.begin() + end * cols);
    return make_result("slice_rows", {end - begin, cols}, std::move(out), {x}, [begin, cols](TensorImpl& o) {
      TensorImpl& in = input_of(o, 0);
      const auto& gy = o.grad_values<T>();
      auto& d = in.grad_values<T>();
      for (std::size_t i = 0; i < gy.size(); ++i) d[begin * cols + i] += gy[i];
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  return dispatch(x.dtype(), [&]<class T>(T) {
    std::vector<T> out(x.data<T>().begin(), x.data<T>().end());
    return make_result("reshape", std::move(shape), std::move(out), {x}, [](TensorImpl& o) {
      TensorImpl& in = input_of(o, 0);
      const auto& gy = o.grad_values<T>();
      auto& d = in.grad_values<T>();
      for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
    });
  });
}

}  // namespace lip2us
