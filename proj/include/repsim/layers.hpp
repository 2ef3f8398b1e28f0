#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "repsim/tensor.hpp"

// Forward and hand-derived backward passes for the layer primitives of the
// four-block convolutional network. Every forward takes an optional cache;
// backward requires the cache filled by the matching forward call.
namespace repsim::nn {

enum class Mode { train, eval };

using Labels = std::vector<std::int32_t>;

// --- conv2d: 3x3 kernel, stride 1, zero padding 1, cross-correlation ---

struct Conv2dCache {
  Shape input_shape;
  // im2col buffer, (C_in*9) x (N*H*W) row-major.
  Buffer columns;
};

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

/// input N x C_in x H x W, weight C_out x C_in x 3 x 3, bias C_out.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dCache* cache = nullptr);
/// With `input_grad` false the (empty) input gradient is skipped, e.g. for the first layer.
Conv2dGrads conv2d_backward(const Tensor& grad_output, const Tensor& weight, const Conv2dCache& cache,
                            bool input_grad = true);

// --- batchnorm2d ---

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;  // running = (1 - momentum) * running + momentum * batch
};

struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor normalized;            // x_hat, same shape as input
  Buffer inv_std;  // per channel
};

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

/// Train mode normalizes with biased batch statistics over (N, H, W) and
/// folds the unbiased batch variance into the running estimate. Eval mode
/// reads the running statistics and mutates nothing; before any update those
/// are the initial (0, 1).
Tensor batchnorm2d_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                           Tensor& running_var, Mode mode, const BatchNormOptions& options = {},
                           BatchNormCache* cache = nullptr);
BatchNormGrads batchnorm2d_backward(const Tensor& grad_output, const Tensor& gamma, const BatchNormCache& cache);

// --- relu ---

struct ReluCache {
  std::vector<std::uint8_t> positive;
};

Tensor relu_forward(const Tensor& input, ReluCache* cache = nullptr);
/// Gradient at exactly zero is zero.
Tensor relu_backward(const Tensor& grad_output, const ReluCache& cache);

// --- maxpool 2x2, stride 2 ---

struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // flat input offset per output element
};

/// Ties resolve to the first maximum in row-major window order.
Tensor maxpool2x2_forward(const Tensor& input, MaxPoolCache* cache = nullptr);
Tensor maxpool2x2_backward(const Tensor& grad_output, const MaxPoolCache& cache);

// --- linear: input N x F, weight F x D, bias D ---

struct LinearCache {
  Tensor input;
};

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, LinearCache* cache = nullptr);
LinearGrads linear_backward(const Tensor& grad_output, const Tensor& weight, const LinearCache& cache);

// --- loss ---

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean over rows of -log softmax(logits)[label]; gradient is (softmax - onehot) / N.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

/// Row-wise argmax, first maximum wins.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

// --- optimizer ---

struct OptimizerState {
  double lr = 0.001;
  double momentum = 0.9;
  std::vector<Tensor> velocity;  // empty until the first step
};

/// Heavy-ball momentum: v <- momentum * v + g; p <- p - lr * v.
void sgd_momentum_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimizerState& state);

}  // namespace repsim::nn
