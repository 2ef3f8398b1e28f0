#include "repsim/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "repsim/error.hpp"

namespace repsim::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMatrix>;
using ConstMapRow = Eigen::Map<const RowMatrix>;
using StridedConstMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

constexpr std::size_t kKernel = 3;

// Vectorized reductions; the summation order is fixed for a given length.
double span_sum(const double* p, std::size_t len) {
  return Eigen::Map<const Eigen::VectorXd>(p, static_cast<Eigen::Index>(len)).sum();
}

double span_dot(const double* a, const double* b, std::size_t len) {
  const auto n = static_cast<Eigen::Index>(len);
  return Eigen::Map<const Eigen::VectorXd>(a, n).dot(Eigen::Map<const Eigen::VectorXd>(b, n));
}

void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

void im2col(const Tensor& input, Buffer& columns) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t plane = h * w;
  const std::size_t positions = n * plane;
  columns.assign(c * kKernel * kKernel * positions, 0.0);
  const double* in = input.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < kKernel; ++u) {
      for (std::size_t v = 0; v < kKernel; ++v) {
        double* row = columns.data() + ((ch * kKernel + u) * kKernel + v) * positions;
        for (std::size_t s = 0; s < n; ++s) {
          const double* src = in + (s * c + ch) * plane;
          double* dst = row + s * plane;
          for (std::size_t i = 0; i < h; ++i) {
            const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + u) - 1;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* src_row = src + static_cast<std::size_t>(si) * w;
            double* dst_row = dst + i * w;
            // output column j reads input column j + v - 1
            const std::size_t j_begin = v == 0 ? 1 : 0;
            const std::size_t j_end = v == 2 ? w - 1 : w;
            for (std::size_t j = j_begin; j < j_end; ++j) dst_row[j] = src_row[j + v - 1];
          }
        }
      }
    }
  }
}

void col2im(const Buffer& columns, const Shape& shape, Tensor& grad_input) {
  const std::size_t n = shape[0], c = shape[1], h = shape[2], w = shape[3];
  const std::size_t plane = h * w;
  const std::size_t positions = n * plane;
  double* out = grad_input.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < kKernel; ++u) {
      for (std::size_t v = 0; v < kKernel; ++v) {
        const double* row = columns.data() + ((ch * kKernel + u) * kKernel + v) * positions;
        for (std::size_t s = 0; s < n; ++s) {
          const double* src = row + s * plane;
          double* dst = out + (s * c + ch) * plane;
          for (std::size_t i = 0; i < h; ++i) {
            const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + u) - 1;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
            double* dst_row = dst + static_cast<std::size_t>(si) * w;
            const double* src_row = src + i * w;
            const std::size_t j_begin = v == 0 ? 1 : 0;
            const std::size_t j_end = v == 2 ? w - 1 : w;
            for (std::size_t j = j_begin; j < j_end; ++j) dst_row[j + v - 1] += src_row[j];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dCache* cache) {
  expect_rank(input, 4, "conv2d input");
  expect_rank(weight, 4, "conv2d weight");
  const std::size_t n = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t c_out = weight.dim(0);
  if (weight.dim(1) != c_in) {
    throw ShapeError("conv2d: weight in-channel dimension " + std::to_string(weight.dim(1)) +
                     " does not match input channel dimension " + std::to_string(c_in));
  }
  if (weight.dim(2) != kKernel || weight.dim(3) != kKernel) {
    throw ShapeError("conv2d: kernel spatial dimensions must be 3x3, got " + to_string(weight.shape()));
  }
  expect_shape(bias, {c_out}, "conv2d bias (output channel dimension)");

  Buffer local;
  Buffer& columns = cache ? cache->columns : local;
  im2col(input, columns);

  const std::size_t k = c_in * kKernel * kKernel;
  const std::size_t plane = h * w;
  const std::size_t positions = n * plane;
  Tensor output({n, c_out, h, w});
  ConstMapRow weights(weight.data(), c_out, k);
  for (std::size_t s = 0; s < n; ++s) {
    // Columns of sample s form a k x plane block with row stride `positions`.
    StridedConstMap cols(columns.data() + s * plane, k, plane, Eigen::OuterStride<>(positions));
    MapRow out(output.data() + s * c_out * plane, c_out, plane);
    out.noalias() = weights * cols;
    out.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), c_out);
  }
  if (cache) cache->input_shape = input.shape();
  return output;
}

Conv2dGrads conv2d_backward(const Tensor& grad_output, const Tensor& weight, const Conv2dCache& cache,
                            bool input_grad) {
  const Shape& in_shape = cache.input_shape;
  if (in_shape.size() != 4) throw ShapeError("conv2d backward: cache is empty");
  const std::size_t n = in_shape[0], c_in = in_shape[1], h = in_shape[2], w = in_shape[3];
  const std::size_t c_out = weight.dim(0);
  expect_shape(grad_output, {n, c_out, h, w}, "conv2d backward grad_output");

  const std::size_t k = c_in * kKernel * kKernel;
  const std::size_t plane = h * w;
  const std::size_t positions = n * plane;

  // Gather the upstream gradient into C_out x (N*H*W), matching the column layout.
  RowMatrix grad(c_out, positions);
  const double* g = grad_output.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < c_out; ++o) {
      std::copy_n(g + (s * c_out + o) * plane, plane, grad.data() + o * positions + s * plane);
    }
  }

  Conv2dGrads grads{input_grad ? Tensor(in_shape) : Tensor(), Tensor(weight.shape()), Tensor({c_out})};
  MapRow(grads.weight.data(), c_out, k).noalias() = grad * ConstMapRow(cache.columns.data(), k, positions).transpose();
  for (std::size_t o = 0; o < c_out; ++o) {
    grads.bias[o] = span_sum(grad.data() + o * positions, positions);
  }

  if (!input_grad) return grads;
  Buffer grad_columns(k * positions);
  MapRow(grad_columns.data(), k, positions).noalias() = ConstMapRow(weight.data(), c_out, k).transpose() * grad;
  col2im(grad_columns, in_shape, grads.input);
  return grads;
}

Tensor batchnorm2d_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                           Tensor& running_var, Mode mode, const BatchNormOptions& options, BatchNormCache* cache) {
  expect_rank(input, 4, "batchnorm2d input");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  expect_shape(gamma, {c}, "batchnorm2d gamma");
  expect_shape(beta, {c}, "batchnorm2d beta");
  expect_shape(running_mean, {c}, "batchnorm2d running_mean");
  expect_shape(running_var, {c}, "batchnorm2d running_var");
  const std::size_t count = n * plane;
  if (mode == Mode::train && count < 2) {
    throw ShapeError("batchnorm2d: train mode needs at least 2 values per channel, got " + std::to_string(count));
  }

  Tensor output(input.shape());
  Tensor normalized = cache ? Tensor(input.shape()) : Tensor();
  Buffer inv_std(c);
  const double* in = input.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t s = 0; s < n; ++s) sum += span_sum(in + (s * c + ch) * plane, plane);
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const auto centered =
            Eigen::Map<const Eigen::ArrayXd>(in + (s * c + ch) * plane, static_cast<Eigen::Index>(plane)) - mean;
        sq += centered.square().sum();
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      running_mean[ch] = (1.0 - options.momentum) * running_mean[ch] + options.momentum * mean;
      running_var[ch] = (1.0 - options.momentum) * running_var[ch] + options.momentum * unbiased;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double istd = 1.0 / std::sqrt(var + options.eps);
    inv_std[ch] = istd;
    const double g = gamma[ch], b = beta[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * plane;
      const double* src = in + base;
      double* dst = output.data() + base;
      if (cache) {
        double* xh = normalized.data() + base;
        for (std::size_t p = 0; p < plane; ++p) {
          xh[p] = (src[p] - mean) * istd;
          dst[p] = g * xh[p] + b;
        }
      } else {
        for (std::size_t p = 0; p < plane; ++p) dst[p] = g * ((src[p] - mean) * istd) + b;
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return output;
}

BatchNormGrads batchnorm2d_backward(const Tensor& grad_output, const Tensor& gamma, const BatchNormCache& cache) {
  const Tensor& xhat = cache.normalized;
  expect_shape(grad_output, xhat.shape(), "batchnorm2d backward grad_output");
  const std::size_t n = xhat.dim(0), c = xhat.dim(1), plane = xhat.dim(2) * xhat.dim(3);
  const double count = static_cast<double>(n * plane);

  BatchNormGrads grads{Tensor(xhat.shape()), Tensor({c}), Tensor({c})};
  const double* g = grad_output.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * plane;
      sum_g += span_sum(g + base, plane);
      sum_gx += span_dot(g + base, xhat.data() + base, plane);
    }
    grads.beta[ch] = sum_g;
    grads.gamma[ch] = sum_gx;
    const double scale = gamma[ch] * cache.inv_std[ch];
    const bool train = cache.mode == Mode::train;
    const double mean_g = train ? sum_g / count : 0.0;
    const double mean_gx = train ? sum_gx / count : 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * plane;
      double* dst = grads.input.data() + base;
      const double* xh = xhat.data() + base;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = scale * (g[base + p] - mean_g - xh[p] * mean_gx);
    }
  }
  return grads;
}

Tensor relu_forward(const Tensor& input, ReluCache* cache) {
  Tensor output(input.shape());
  if (cache) cache->positive.resize(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool pos = input[i] > 0.0;
    output[i] = pos || std::isnan(input[i]) ? input[i] : 0.0;  // NaN propagates
    if (cache) cache->positive[i] = pos;
  }
  return output;
}

Tensor relu_backward(const Tensor& grad_output, const ReluCache& cache) {
  if (grad_output.size() != cache.positive.size()) {
    throw ShapeError("relu backward: grad_output has " + std::to_string(grad_output.size()) +
                     " elements, cache has " + std::to_string(cache.positive.size()));
  }
  Tensor grad(grad_output.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = cache.positive[i] ? grad_output[i] : 0.0;
  return grad;
}

Tensor maxpool2x2_forward(const Tensor& input, MaxPoolCache* cache) {
  expect_rank(input, 4, "maxpool2x2 input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0) throw ShapeError("maxpool2x2: height " + std::to_string(h) + " is odd");
  if (w % 2 != 0) throw ShapeError("maxpool2x2: width " + std::to_string(w) + " is odd");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor output({n, c, oh, ow});
  if (cache) {
    cache->input_shape = input.shape();
    cache->argmax.resize(output.size());
  }
  const double* in = input.data();
  std::size_t out_index = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++out_index) {
        std::size_t best = base + 2 * i * w + 2 * j;
        const std::size_t candidates[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t cand : candidates) {
          if (in[cand] > in[best] || (std::isnan(in[cand]) && !std::isnan(in[best]))) best = cand;
        }
        output[out_index] = in[best];
        if (cache) cache->argmax[out_index] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return output;
}

Tensor maxpool2x2_backward(const Tensor& grad_output, const MaxPoolCache& cache) {
  if (grad_output.size() != cache.argmax.size()) {
    throw ShapeError("maxpool2x2 backward: grad_output " + to_string(grad_output.shape()) +
                     " does not match the cached forward output");
  }
  Tensor grad(cache.input_shape);
  for (std::size_t i = 0; i < grad_output.size(); ++i) grad[cache.argmax[i]] += grad_output[i];
  return grad;
}

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, LinearCache* cache) {
  expect_rank(input, 2, "linear input");
  expect_rank(weight, 2, "linear weight");
  const std::size_t n = input.dim(0), f = input.dim(1), d = weight.dim(1);
  if (weight.dim(0) != f) {
    throw ShapeError("linear: weight input dimension " + std::to_string(weight.dim(0)) +
                     " does not match input feature dimension " + std::to_string(f));
  }
  expect_shape(bias, {d}, "linear bias (output dimension)");
  Tensor output({n, d});
  MapRow out(output.data(), n, d);
  out.noalias() = ConstMapRow(input.data(), n, f) * ConstMapRow(weight.data(), f, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < d; ++k) out(r, k) += bias[k];
  }
  if (cache) cache->input = input;
  return output;
}

LinearGrads linear_backward(const Tensor& grad_output, const Tensor& weight, const LinearCache& cache) {
  const Tensor& input = cache.input;
  const std::size_t n = input.dim(0), f = input.dim(1), d = weight.dim(1);
  expect_shape(grad_output, {n, d}, "linear backward grad_output");
  LinearGrads grads{Tensor(input.shape()), Tensor(weight.shape()), Tensor({d})};
  ConstMapRow g(grad_output.data(), n, d);
  MapRow(grads.weight.data(), f, d).noalias() = ConstMapRow(input.data(), n, f).transpose() * g;
  MapRow(grads.input.data(), n, f).noalias() = g * ConstMapRow(weight.data(), f, d).transpose();
  for (std::size_t k = 0; k < d; ++k) {
    double sum = 0.0;
    for (std::size_t r = 0; r < n; ++r) sum += g(r, k);
    grads.bias[k] = sum;
  }
  return grads;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  expect_rank(logits, 2, "softmax_cross_entropy logits");
  const std::size_t n = logits.dim(0), d = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  LossResult result{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::int32_t label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= d) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) + " at row " + std::to_string(r) +
                       " outside [0, " + std::to_string(d) + ")");
    }
    const double* row = logits.data() + r * d;
    const double max = *std::max_element(row, row + d);
    double sum = 0.0;
    for (std::size_t k = 0; k < d; ++k) sum += std::exp(row[k] - max);
    const double log_sum = std::log(sum);
    result.loss += -(row[label] - max - log_sum);
    double* grad = result.grad_logits.data() + r * d;
    for (std::size_t k = 0; k < d; ++k) {
      const double p = std::exp(row[k] - max - log_sum);
      grad[k] = (p - (static_cast<std::size_t>(label) == k ? 1.0 : 0.0)) * inv_n;
    }
  }
  result.loss *= inv_n;
  return result;
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  expect_rank(logits, 2, "argmax_rows logits");
  const std::size_t n = logits.dim(0), d = logits.dim(1);
  std::vector<std::int32_t> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.data() + r * d;
    out[r] = static_cast<std::int32_t>(std::max_element(row, row + d) - row);
  }
  return out;
}

void sgd_momentum_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimizerState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd_momentum_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  }
  if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd_momentum_step: optimizer state tracks " + std::to_string(state.velocity.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& v = state.velocity[i];
    expect_shape(g, p.shape(), "sgd_momentum_step gradient " + std::to_string(i));
    expect_shape(v, p.shape(), "sgd_momentum_step velocity " + std::to_string(i));
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = state.momentum * v[k] + g[k];
      p[k] -= state.lr * v[k];
    }
  }
}

}  // namespace repsim::nn
