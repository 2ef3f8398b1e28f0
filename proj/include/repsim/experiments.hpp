#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repsim/config.hpp"
#include "repsim/data.hpp"
#include "repsim/model.hpp"
#include "repsim/similarity.hpp"

namespace repsim::experiments {

/// Environment variable naming the directory that holds <name>_{train,test}.rsds.
inline constexpr const char* kDataRootEnv = "REPSIM_DATA";

/// Loads canonical dataset files on first use and shares them between threads.
class DatasetStore {
 public:
  explicit DatasetStore(std::filesystem::path root);
  /// Root from $REPSIM_DATA, falling back to ./data.
  static DatasetStore from_environment();

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path_of(const std::string& name, const std::string& split) const;

  /// Throws Error naming the conversion command when the file is missing.
  std::shared_ptr<const Dataset> get(const std::string& name, const std::string& split);

 private:
  std::filesystem::path root_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const Dataset>> loaded_;
};

/// Training and evaluation data for one run, labels already transformed.
struct Task {
  Dataset train;
  Dataset test;
  std::string transform;
  std::vector<std::string> header_hashes;  // of every file the task draws from

  nlohmann::json describe() const;
};

/// Resolves the record pool named by `spec.source`, samples the train/test
/// parts and applies the label transform to both (independent draws). All
/// randomness derives from `seed`.
Task resolve_task(DatasetStore& store, const RunSpec& spec, std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean train-mode loss over the epoch
  double train_acc = 0.0;  // running train-mode accuracy over the epoch
  double test_acc = 0.0;   // eval mode, after the epoch

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct RunArtifacts {
  ModelCheckpoint init;
  ModelCheckpoint final;
  std::vector<ModelCheckpoint> epoch_checkpoints;  // after epochs 1..E, when requested
  std::vector<EpochMetrics> metrics;
  bool diverged = false;
  std::string divergence;  // where the loss became non-finite
  bool stopped = false;     // stop_when ended the run before spec.epochs
  nlohmann::json manifest;
};

struct RunOptions {
  bool keep_epoch_checkpoints = false;
  /// Called after every epoch; receives the model in its current state.
  std::function<void(const EpochMetrics&, const ModelCheckpoint&)> on_epoch;
  /// Ends the run after an epoch for which this returns true.
  std::function<bool(const EpochMetrics&)> stop_when;
};

/// Trains from the seeded initialization.
RunArtifacts train(const RunSpec& spec, const Task& task, std::uint64_t seed, const RunOptions& options = {});
RunArtifacts train(DatasetStore& store, const RunSpec& spec, std::uint64_t seed, const RunOptions& options = {});

/// Continues training from a pretrained checkpoint; every layer is updated and
/// the classifier head is kept.
RunArtifacts finetune(const ModelCheckpoint& pretrained, const RunSpec& spec, const Task& task, std::uint64_t seed,
                      const RunOptions& options = {});

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Eval-mode loss and accuracy, processed in chunks.
Evaluation evaluate(const ModelCheckpoint& model, const Tensor& images, std::span<const std::int32_t> labels);

/// Per-tap activation matrices of one checkpoint on one probe set.
struct LayerRepresentations {
  std::string probe_identity;
  std::vector<std::string> taps;
  std::vector<similarity::Matrix> values;
};

LayerRepresentations extract_representations(const ModelCheckpoint& model, const ProbeSet& probe);

/// Centered Gram matrices for repeated comparisons against one side.
struct PreparedRepresentations {
  std::string probe_identity;
  std::vector<std::string> taps;
  std::vector<similarity::CenteredGram> grams;
};

PreparedRepresentations prepare(const LayerRepresentations& reps);

/// Linear CKA per tap, matched by name. Rejects different probe sets.
std::vector<std::optional<double>> layerwise_cka(const LayerRepresentations& a, const LayerRepresentations& b);
std::vector<std::optional<double>> layerwise_cka(const PreparedRepresentations& a, const PreparedRepresentations& b);

/// One comparison result. `epoch` is set for per-epoch comparisons.
struct SimilarityRow {
  std::string pipeline;
  std::string cell;
  std::optional<std::size_t> epoch;
  std::string tap;
  std::string pair;
  std::uint64_t seed = 0;
  std::optional<double> cka;  // empty when undefined
};

struct AggregateEntry {
  std::string cell;
  std::optional<std::size_t> epoch;
  std::string tap;
  std::string pair;
  std::size_t seeds = 0;      // defined values
  std::size_t undefined = 0;  // seeds whose CKA was undefined
  std::optional<double> mean;
  std::optional<double> stderr_mean;  // sample sd / sqrt(seeds); needs >= 2 seeds
};

/// Mean and standard error per (cell, epoch, tap, pair) across seeds. Every
/// seed must report the same set of keys.
std::vector<AggregateEntry> aggregate(std::span<const SimilarityRow> rows);

/// Mean and standard error of plain values, independent of their order.
AggregateEntry summarize(std::vector<double> values);

}  // namespace repsim::experiments
