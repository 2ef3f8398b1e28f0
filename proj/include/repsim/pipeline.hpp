#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repsim/config.hpp"
#include "repsim/experiments.hpp"

namespace repsim::experiments {

std::string code_version();

/// Pipeline ids in run order for "all".
const std::vector<std::string>& pipeline_ids();
/// Canonical spelling of a pipeline id (case-insensitive); throws ConfigError.
std::string canonical_pipeline(const std::string& id);

/// Seeds 0..count-1.
std::vector<std::uint64_t> default_seeds(std::size_t count);

/// The cells a pipeline runs at the scale described by `profile`.
std::vector<ExperimentConfig> pipeline_cells(const std::string& id, const Profile& profile,
                                             const std::vector<std::uint64_t>& seeds);

/// Trained runs keyed by their full specification, stored under
/// <root>/<key>/seed<k>/. Reuses pretrained checkpoints and runs shared
/// between pipelines. Different seeds may be used from different threads.
class RunCache {
 public:
  explicit RunCache(std::optional<std::filesystem::path> root) : root_(std::move(root)) {}

  struct Entry {
    ModelCheckpoint final;
    std::vector<ModelCheckpoint> epoch_checkpoints;
    std::vector<EpochMetrics> metrics;
    bool diverged = false;
    nlohmann::json manifest;
    std::string key;
  };

  static std::string key(const RunSpec& run, const std::optional<RunSpec>& pretrain, bool keep_epochs);

  /// Scratch run of `spec`.
  Entry trained(DatasetStore& store, const RunSpec& spec, std::uint64_t seed, bool keep_epochs,
                const std::function<void(const std::string&)>& log);
  /// Fine-tuning run of `spec` from the pretrained run of `pretrain`.
  Entry finetuned(DatasetStore& store, const RunSpec& pretrain, const RunSpec& spec, std::uint64_t seed,
                  bool keep_epochs, const std::function<void(const std::string&)>& log);

 private:
  std::optional<Entry> load(const std::string& key, std::uint64_t seed) const;
  void store(const Entry& entry, std::uint64_t seed) const;

  std::optional<std::filesystem::path> root_;
};

struct PipelineOptions {
  std::filesystem::path out_dir = "out";
  std::size_t workers = 1;
  bool use_cache = true;  // keep runs under <out_dir>/runs and reuse them
  std::function<void(const std::string&)> log;
  std::optional<Profile> profile;  // echoed into manifests
};

struct CellOutcome {
  ExperimentConfig config;
  std::vector<SimilarityRow> rows;
  std::vector<std::pair<std::uint64_t, std::vector<EpochMetrics>>> metrics;  // per seed
  std::vector<AggregateEntry> aggregate;
  std::filesystem::path dir;
};

struct PipelineOutcome {
  std::string pipeline;
  std::vector<CellOutcome> cells;
  std::vector<std::filesystem::path> files;
};

/// Runs every cell for every seed (seeds in parallel, up to `workers`) and
/// writes <out>/<pipeline>/<cell>/{metrics.csv, similarity.csv,
/// aggregate.json, figure.svg, manifest.json} plus pipeline-level
/// aggregate.json and figure.svg.
PipelineOutcome run_cells(const std::string& pipeline, const std::vector<ExperimentConfig>& cells, DatasetStore& store,
                          const PipelineOptions& options);

PipelineOutcome run_pipeline(const std::string& id, const Profile& profile, const std::vector<std::uint64_t>& seeds,
                             DatasetStore& store, const PipelineOptions& options);

/// Mean CKA per tap for one cell and pair (final-epoch rows only).
std::vector<std::pair<std::string, std::optional<double>>> mean_by_tap(const CellOutcome& cell,
                                                                       const std::string& pair);

}  // namespace repsim::experiments
