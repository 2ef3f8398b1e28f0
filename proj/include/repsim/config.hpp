#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace repsim::experiments {

/// One training phase: which data, which label transform, how long.
struct RunSpec {
  std::string dataset = "cifar10";  // cifar10 | svhn
  // Record pool: "train" trains on the train file and evaluates on the test
  // file; "test" and "train+test" split that pool into disjoint train/test parts.
  std::string source = "train";
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;  // with source "train", 0 means the whole test file
  std::string transform = "identity";  // identity | random:<d> | shift:<s>
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 0.001;
  double momentum = 0.9;

  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

/// Declarative description of one experiment cell.
struct ExperimentConfig {
  std::string pipeline = "custom";
  std::string cell = "default";
  std::string start = "scratch";  // scratch | pretrained
  RunSpec run;
  RunSpec pretrain;  // only read when start == "pretrained"
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t n_probe = 512;
  std::vector<std::string> compare = {"init"};  // init | pretrained | epochs

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Scale settings from which the reproduction pipelines derive their cells.
struct Profile {
  std::string name = "reduced";
  std::size_t seeds = 3;
  std::size_t n_probe = 512;
  std::size_t batch_size = 64;
  double lr = 0.001;
  double momentum = 0.9;

  // Records of the cifar10 test file that evaluate scratch runs and supply
  // their probe inputs (0 = the whole file).
  std::size_t eval_n_test = 1000;

  // Pre-training on cifar10 (train file); also the F4/F5 starting point.
  std::size_t pretrain_n_train = 2000;
  std::size_t pretrain_epochs = 20;

  // F1: per-epoch similarity to init on structured data.
  std::size_t f1_n_train = 2000;
  std::size_t f1_epochs = 20;

  // F2 / F3a: scratch training with partially random labels.
  std::vector<int> scratch_d = {0, 1, 3, 9};
  std::size_t scratch_n_train = 500;
  std::size_t scratch_epochs = 60;

  // F3b: fully random labels, training-set size sweep.
  std::vector<std::size_t> f3b_sizes = {100, 250, 500, 1000};
  std::size_t f3b_epochs = 60;

  // F4 / F5: fine-tuning tasks.
  std::vector<int> finetune_d = {0, 1, 3, 9};
  std::size_t finetune_n_train = 5000;
  std::size_t finetune_n_test = 5000;
  std::size_t finetune_epochs = 10;
  int shift = 1;

  friend bool operator==(const Profile&, const Profile&) = default;
};

Profile reduced_profile();
Profile full_profile();
Profile profile_by_name(const std::string& name);

nlohmann::json to_json(const RunSpec& spec);
nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const Profile& profile);

/// Strict readers: unknown keys and type mismatches raise ConfigError; missing
/// keys keep their defaults.
RunSpec run_spec_from_json(const nlohmann::json& j);
ExperimentConfig config_from_json(const nlohmann::json& j);
Profile profile_from_json(const nlohmann::json& j);

/// Value checks beyond types: known datasets, transform syntax and range, ...
void validate(const RunSpec& spec);
void validate(const ExperimentConfig& config);
void validate(const Profile& profile);

/// TOML document as JSON (tables become objects).
nlohmann::json read_toml(const std::filesystem::path& path);
nlohmann::json parse_toml(std::string_view text);

/// Applies "dotted.key=value" overrides onto `document`. The key must already
/// exist; the value is parsed to the existing value's type.
void apply_overrides(nlohmann::json& document, const std::vector<std::string>& overrides);

/// Merges `patch` onto `base`, rejecting keys that `base` does not have.
void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "");

}  // namespace repsim::experiments
