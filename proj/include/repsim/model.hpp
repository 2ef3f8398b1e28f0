#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "repsim/layers.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

/// Geometry of the four-block convolutional network: `blocks` repeats of
/// conv3x3(filters) -> batchnorm -> relu -> maxpool2x2, then one linear layer.
struct FourBlockConvConfig {
  std::size_t in_channels = 3;
  std::size_t image_side = 32;
  std::size_t filters = 64;
  std::size_t blocks = 4;
  std::size_t num_classes = 10;

  void validate() const;
  /// Spatial side after block k (1-based).
  std::size_t side_after(std::size_t block) const;
  /// Flattened width of the tap after block k (1-based).
  std::size_t tap_width(std::size_t block) const;
  std::size_t fc_inputs() const { return tap_width(blocks); }

  friend bool operator==(const FourBlockConvConfig&, const FourBlockConvConfig&) = default;
};

enum class Stage { init, pretrained, finetuned };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct ConvBlock {
  Tensor conv_weight;  // filters x in x 3 x 3
  Tensor conv_bias;    // filters
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

/// Parameters plus batch-norm running statistics at a named stage.
struct ModelCheckpoint {
  FourBlockConvConfig config;
  Stage stage = Stage::init;
  std::uint64_t seed = 0;
  std::vector<ConvBlock> blocks;
  Tensor fc_weight;  // fc_inputs x num_classes
  Tensor fc_bias;

  /// Trainable tensors in canonical order: per block conv weight, conv bias,
  /// gamma, beta; then fc weight, fc bias.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

/// Kaiming-uniform fan-in weights (bound sqrt(6 / fan_in)), zero biases,
/// gamma 1, beta 0, running statistics (0, 1). Fully determined by `seed`.
ModelCheckpoint build_model(const FourBlockConvConfig& config, std::uint64_t seed);

/// Per-tap activations, rows are samples. Names: block1..blockK, logits.
struct TapSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  const Tensor& operator[](const std::string& name) const;
};

std::vector<std::string> tap_names(const FourBlockConvConfig& config);

struct BlockCaches {
  nn::Conv2dCache conv;
  nn::BatchNormCache bn;
  nn::ReluCache relu;
  nn::MaxPoolCache pool;
};

struct ForwardCaches {
  std::vector<BlockCaches> blocks;
  Shape block_output_shape;
  nn::LinearCache fc;
};

struct ForwardResult {
  Tensor logits;
  TapSet taps;
  ForwardCaches caches;
};

/// Train mode updates running statistics and fills caches for backward.
ForwardResult forward_train(ModelCheckpoint& model, const Tensor& batch, bool with_taps = false);
/// Eval mode reads running statistics and mutates nothing.
ForwardResult forward_eval(const ModelCheckpoint& model, const Tensor& batch, bool with_taps = true);
/// forward_train or forward_eval depending on `mode`.
ForwardResult forward_with_taps(ModelCheckpoint& model, const Tensor& batch, nn::Mode mode);

/// Gradients of the loss with respect to parameters(), same order.
std::vector<Tensor> backward(const ModelCheckpoint& model, const ForwardCaches& caches, const Tensor& grad_logits);

struct StepResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

/// One train-mode forward/backward and SGD update on a single batch.
StepResult train_step(ModelCheckpoint& model, nn::OptimizerState& optimizer, const Tensor& batch,
                      std::span<const std::int32_t> labels);

/// Writes a checkpoint container (JSON header, then little-endian f64 payloads).
void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace repsim
