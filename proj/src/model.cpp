#include "repsim/model.hpp"

#include <cmath>

#include "repsim/container.hpp"
#include "repsim/error.hpp"
#include "repsim/rng.hpp"

namespace repsim {

void FourBlockConvConfig::validate() const {
  if (in_channels == 0 || image_side == 0 || filters == 0 || blocks == 0 || num_classes < 2) {
    throw ConfigError("model config: extents must be positive and num_classes >= 2");
  }
  if (blocks >= 31 || image_side % (std::size_t{1} << blocks) != 0) {
    throw ConfigError("model config: image side " + std::to_string(image_side) + " is not divisible by 2^" +
                      std::to_string(blocks));
  }
}

std::size_t FourBlockConvConfig::side_after(std::size_t block) const { return image_side >> block; }

std::size_t FourBlockConvConfig::tap_width(std::size_t block) const {
  const std::size_t side = side_after(block);
  return filters * side * side;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::init: return "init";
    case Stage::pretrained: return "pretrained";
    case Stage::finetuned: return "finetuned";
  }
  return "unknown";
}

Stage parse_stage(const std::string& text) {
  if (text == "init") return Stage::init;
  if (text == "pretrained") return Stage::pretrained;
  if (text == "finetuned") return Stage::finetuned;
  throw FormatError("unknown checkpoint stage '" + text + "'");
}

std::vector<Tensor*> ModelCheckpoint::parameters() {
  std::vector<Tensor*> out;
  for (ConvBlock& b : blocks) {
    out.insert(out.end(), {&b.conv_weight, &b.conv_bias, &b.gamma, &b.beta});
  }
  out.insert(out.end(), {&fc_weight, &fc_bias});
  return out;
}

std::vector<const Tensor*> ModelCheckpoint::parameters() const {
  std::vector<const Tensor*> out;
  for (const ConvBlock& b : blocks) {
    out.insert(out.end(), {&b.conv_weight, &b.conv_bias, &b.gamma, &b.beta});
  }
  out.insert(out.end(), {&fc_weight, &fc_bias});
  return out;
}

std::vector<std::string> ModelCheckpoint::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t k = 1; k <= blocks.size(); ++k) {
    const std::string b = std::to_string(k);
    names.insert(names.end(), {"conv" + b + ".weight", "conv" + b + ".bias", "bn" + b + ".gamma", "bn" + b + ".beta"});
  }
  names.insert(names.end(), {"fc.weight", "fc.bias"});
  return names;
}

std::size_t ModelCheckpoint::parameter_count() const {
  std::size_t total = 0;
  for (const Tensor* p : parameters()) total += p->size();
  return total;
}

ModelCheckpoint build_model(const FourBlockConvConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "init"));
  auto kaiming = [&rng](Tensor& t, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
  };

  ModelCheckpoint model;
  model.config = config;
  model.stage = Stage::init;
  model.seed = seed;
  std::size_t channels = config.in_channels;
  for (std::size_t k = 0; k < config.blocks; ++k) {
    ConvBlock block{Tensor({config.filters, channels, 3, 3}), Tensor({config.filters}), Tensor({config.filters}, 1.0),
                    Tensor({config.filters}),                  Tensor({config.filters}), Tensor({config.filters}, 1.0)};
    kaiming(block.conv_weight, channels * 9);
    model.blocks.push_back(std::move(block));
    channels = config.filters;
  }
  model.fc_weight = Tensor({config.fc_inputs(), config.num_classes});
  model.fc_bias = Tensor({config.num_classes});
  kaiming(model.fc_weight, config.fc_inputs());
  return model;
}

const Tensor& TapSet::operator[](const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values[i];
  }
  throw ShapeError("no tap named '" + name + "'");
}

std::vector<std::string> tap_names(const FourBlockConvConfig& config) {
  std::vector<std::string> names;
  for (std::size_t k = 1; k <= config.blocks; ++k) names.push_back("block" + std::to_string(k));
  names.push_back("logits");
  return names;
}

namespace {

void check_geometry(const FourBlockConvConfig& config, const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != config.in_channels || batch.dim(2) != config.image_side ||
      batch.dim(3) != config.image_side) {
    throw ShapeError("model input: expected N x " + std::to_string(config.in_channels) + " x " +
                     std::to_string(config.image_side) + " x " + std::to_string(config.image_side) + ", got " +
                     to_string(batch.shape()));
  }
}

Tensor flatten(const Tensor& t) { return t.reshaped({t.dim(0), t.size() / t.dim(0)}); }

ForwardResult run_forward(std::vector<ConvBlock>& blocks, const Tensor& fc_weight, const Tensor& fc_bias,
                          const FourBlockConvConfig& config, const Tensor& batch, nn::Mode mode, bool keep_caches,
                          bool with_taps) {
  check_geometry(config, batch);
  ForwardResult result;
  if (keep_caches) result.caches.blocks.resize(blocks.size());
  Tensor x = batch;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    ConvBlock& b = blocks[k];
    BlockCaches* c = keep_caches ? &result.caches.blocks[k] : nullptr;
    x = nn::conv2d_forward(x, b.conv_weight, b.conv_bias, c ? &c->conv : nullptr);
    x = nn::batchnorm2d_forward(x, b.gamma, b.beta, b.running_mean, b.running_var, mode, {}, c ? &c->bn : nullptr);
    x = nn::relu_forward(x, c ? &c->relu : nullptr);
    x = nn::maxpool2x2_forward(x, c ? &c->pool : nullptr);
    if (with_taps) {
      result.taps.names.push_back("block" + std::to_string(k + 1));
      result.taps.values.push_back(flatten(x));
    }
  }
  result.caches.block_output_shape = x.shape();
  result.logits = nn::linear_forward(flatten(x), fc_weight, fc_bias, keep_caches ? &result.caches.fc : nullptr);
  if (with_taps) {
    result.taps.names.push_back("logits");
    result.taps.values.push_back(result.logits);
  }
  return result;
}

}  // namespace

ForwardResult forward_train(ModelCheckpoint& model, const Tensor& batch, bool with_taps) {
  return run_forward(model.blocks, model.fc_weight, model.fc_bias, model.config, batch, nn::Mode::train, true,
                     with_taps);
}

ForwardResult forward_eval(const ModelCheckpoint& model, const Tensor& batch, bool with_taps) {
  // Eval mode never writes running statistics; a local copy keeps the model const.
  std::vector<ConvBlock> blocks = model.blocks;
  return run_forward(blocks, model.fc_weight, model.fc_bias, model.config, batch, nn::Mode::eval, false, with_taps);
}

ForwardResult forward_with_taps(ModelCheckpoint& model, const Tensor& batch, nn::Mode mode) {
  if (mode == nn::Mode::train) return forward_train(model, batch, true);
  return forward_eval(model, batch, true);
}

std::vector<Tensor> backward(const ModelCheckpoint& model, const ForwardCaches& caches, const Tensor& grad_logits) {
  if (caches.blocks.size() != model.blocks.size()) throw ShapeError("backward: caches do not match the model");
  std::vector<Tensor> grads(4 * model.blocks.size() + 2);
  nn::LinearGrads fc = nn::linear_backward(grad_logits, model.fc_weight, caches.fc);
  grads[grads.size() - 2] = std::move(fc.weight);
  grads[grads.size() - 1] = std::move(fc.bias);
  Tensor g = fc.input.reshaped(caches.block_output_shape);
  for (std::size_t k = model.blocks.size(); k-- > 0;) {
    const BlockCaches& c = caches.blocks[k];
    const ConvBlock& b = model.blocks[k];
    g = nn::maxpool2x2_backward(g, c.pool);
    g = nn::relu_backward(g, c.relu);
    nn::BatchNormGrads bn = nn::batchnorm2d_backward(g, b.gamma, c.bn);
    nn::Conv2dGrads conv = nn::conv2d_backward(bn.input, b.conv_weight, c.conv, k > 0);
    grads[4 * k + 0] = std::move(conv.weight);
    grads[4 * k + 1] = std::move(conv.bias);
    grads[4 * k + 2] = std::move(bn.gamma);
    grads[4 * k + 3] = std::move(bn.beta);
    g = std::move(conv.input);
  }
  return grads;
}

StepResult train_step(ModelCheckpoint& model, nn::OptimizerState& optimizer, const Tensor& batch,
                      std::span<const std::int32_t> labels) {
  ForwardResult fwd = forward_train(model, batch, false);
  nn::LossResult loss = nn::softmax_cross_entropy(fwd.logits, labels);
  StepResult step{loss.loss, 0};
  const auto predicted = nn::argmax_rows(fwd.logits);
  for (std::size_t i = 0; i < labels.size(); ++i) step.correct += predicted[i] == labels[i];

  std::vector<Tensor> grads = backward(model, fwd.caches, loss.grad_logits);
  std::vector<const Tensor*> grad_ptrs;
  for (const Tensor& g : grads) grad_ptrs.push_back(&g);
  const std::vector<Tensor*> params = model.parameters();
  nn::sgd_momentum_step(params, grad_ptrs, optimizer);
  return step;
}

void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path) {
  TensorContainer container;
  const FourBlockConvConfig& c = model.config;
  container.meta = {{"kind", "checkpoint"},
                    {"stage", to_string(model.stage)},
                    {"seed", model.seed},
                    {"config",
                     {{"in_channels", c.in_channels},
                      {"image_side", c.image_side},
                      {"filters", c.filters},
                      {"blocks", c.blocks},
                      {"num_classes", c.num_classes}}}};
  for (std::size_t k = 0; k < model.blocks.size(); ++k) {
    const ConvBlock& b = model.blocks[k];
    const std::string n = std::to_string(k + 1);
    container.tensors.emplace_back("conv" + n + ".weight", b.conv_weight);
    container.tensors.emplace_back("conv" + n + ".bias", b.conv_bias);
    container.tensors.emplace_back("bn" + n + ".gamma", b.gamma);
    container.tensors.emplace_back("bn" + n + ".beta", b.beta);
    container.tensors.emplace_back("bn" + n + ".running_mean", b.running_mean);
    container.tensors.emplace_back("bn" + n + ".running_var", b.running_var);
  }
  container.tensors.emplace_back("fc.weight", model.fc_weight);
  container.tensors.emplace_back("fc.bias", model.fc_bias);
  write_container(container, path);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorContainer container = read_container(path);
  if (container.meta.value("kind", "") != "checkpoint") {
    throw FormatError(path.string() + " is not a model checkpoint");
  }
  ModelCheckpoint model;
  const auto& c = container.meta.at("config");
  model.config = {c.at("in_channels").get<std::size_t>(), c.at("image_side").get<std::size_t>(),
                  c.at("filters").get<std::size_t>(), c.at("blocks").get<std::size_t>(),
                  c.at("num_classes").get<std::size_t>()};
  model.config.validate();
  model.stage = parse_stage(container.meta.at("stage").get<std::string>());
  model.seed = container.meta.at("seed").get<std::uint64_t>();

  // Shapes are checked against a freshly built model of the same geometry.
  const ModelCheckpoint reference = build_model(model.config, 0);
  for (std::size_t k = 0; k < model.config.blocks; ++k) {
    const std::string n = std::to_string(k + 1);
    ConvBlock b{container.get("conv" + n + ".weight"),      container.get("conv" + n + ".bias"),
                container.get("bn" + n + ".gamma"),         container.get("bn" + n + ".beta"),
                container.get("bn" + n + ".running_mean"), container.get("bn" + n + ".running_var")};
    const ConvBlock& r = reference.blocks[k];
    expect_shape(b.conv_weight, r.conv_weight.shape(), "checkpoint conv" + n + ".weight");
    expect_shape(b.conv_bias, r.conv_bias.shape(), "checkpoint conv" + n + ".bias");
    expect_shape(b.gamma, r.gamma.shape(), "checkpoint bn" + n + ".gamma");
    expect_shape(b.beta, r.beta.shape(), "checkpoint bn" + n + ".beta");
    expect_shape(b.running_mean, r.running_mean.shape(), "checkpoint bn" + n + ".running_mean");
    expect_shape(b.running_var, r.running_var.shape(), "checkpoint bn" + n + ".running_var");
    model.blocks.push_back(std::move(b));
  }
  model.fc_weight = container.get("fc.weight");
  model.fc_bias = container.get("fc.bias");
  expect_shape(model.fc_weight, reference.fc_weight.shape(), "checkpoint fc.weight");
  expect_shape(model.fc_bias, reference.fc_bias.shape(), "checkpoint fc.bias");
  return model;
}

}  // namespace repsim
