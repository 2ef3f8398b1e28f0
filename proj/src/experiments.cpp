#include "repsim/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "repsim/error.hpp"
#include "repsim/labels.hpp"
#include "repsim/rng.hpp"

namespace repsim::experiments {
namespace {

constexpr std::size_t kEvalChunk = 250;

Tensor slice_rows(const Tensor& images, std::size_t start, std::size_t count) {
  Shape shape = images.shape();
  const std::size_t per_row = images.size() / shape[0];
  shape[0] = count;
  Tensor out(shape);
  std::copy_n(images.data() + start * per_row, count * per_row, out.data());
  return out;
}

// Records drawn from the concatenation of `parts` without materializing it.
// With one part this selects exactly what take_split would.
std::pair<Dataset, Dataset> sample_pool(const std::vector<std::shared_ptr<const Dataset>>& parts,
                                        std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                                        const std::string& tag) {
  std::size_t total = 0;
  for (const auto& part : parts) total += part->size();
  if (n_train == 0) throw ConfigError("n_train must be positive");
  if (n_train + n_test > total) {
    throw ConfigError("requested " + std::to_string(n_train) + " + " + std::to_string(n_test) + " records but '" +
                      parts.front()->name + "/" + tag + "' has " + std::to_string(total));
  }
  Rng rng(derive_seed(seed, "split"));
  const std::vector<std::size_t> perm = rng.permutation(total);

  const auto build = [&](std::size_t begin, std::size_t count, const std::string& split) {
    const Dataset& first = *parts.front();
    const std::size_t per_record = first.images.size() / first.size();
    Dataset out;
    out.name = first.name;
    out.split = split;
    out.num_classes = first.num_classes;
    Shape shape = first.images.shape();
    shape[0] = count;
    out.images = Tensor(shape);
    out.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t index = perm[begin + i];
      std::size_t p = 0;
      while (index >= parts[p]->size()) index -= parts[p++]->size();
      std::copy_n(parts[p]->images.data() + index * per_record, per_record, out.images.data() + i * per_record);
      out.labels[i] = parts[p]->labels[index];
    }
    for (const auto& part : parts) {
      out.header_sha256 += (out.header_sha256.empty() ? "" : "+") + part->header_sha256;
    }
    return out;
  };
  return {build(0, n_train, tag + ":train"), n_test > 0 ? build(n_train, n_test, tag + ":test") : Dataset{}};
}

nlohmann::json metrics_json(const std::vector<EpochMetrics>& metrics) {
  nlohmann::json out = nlohmann::json::array();
  for (const EpochMetrics& m : metrics) {
    out.push_back({{"epoch", m.epoch}, {"loss", m.loss}, {"train_acc", m.train_acc}, {"test_acc", m.test_acc}});
  }
  return out;
}

RunArtifacts run_loop(ModelCheckpoint start, Stage final_stage, const RunSpec& spec, const Task& task,
                      std::uint64_t order_seed, const RunOptions& options) {
  if (task.train.size() == 0) throw ConfigError("training set is empty");
  RunArtifacts out;
  out.init = start;
  ModelCheckpoint model = std::move(start);
  model.stage = final_stage;

  nn::OptimizerState optimizer;
  optimizer.lr = spec.lr;
  optimizer.momentum = spec.momentum;

  for (std::size_t epoch = 0; epoch < spec.epochs && !out.diverged; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (const BatchIndices& batch : batches(task.train.size(), spec.batch_size, order_seed, epoch)) {
      const Tensor images = task.train.gather(batch);
      const nn::Labels labels = task.train.gather_labels(batch);
      const StepResult step = train_step(model, optimizer, images, labels);
      if (!std::isfinite(step.loss)) {
        out.diverged = true;
        out.divergence = "non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                         std::to_string(seen / spec.batch_size + 1);
        break;
      }
      loss_sum += step.loss * static_cast<double>(batch.size());
      correct += step.correct;
      seen += batch.size();
    }
    if (out.diverged) break;

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    m.test_acc = task.test.size() > 0 ? evaluate(model, task.test.images, task.test.labels).accuracy
                                       : std::nan("");
    out.metrics.push_back(m);
    if (options.keep_epoch_checkpoints) out.epoch_checkpoints.push_back(model);
    if (options.on_epoch) options.on_epoch(m, model);
    if (options.stop_when && options.stop_when(m) && epoch + 1 < spec.epochs) {
      out.stopped = true;
      break;
    }
  }
  out.final = std::move(model);
  if (spec.epochs == 0) out.final.stage = out.init.stage;

  out.manifest = {
      {"run", to_json(spec)},
      {"task", task.describe()},
      {"epochs_completed", out.metrics.size()},
      {"diverged", out.diverged},
      {"metrics", metrics_json(out.metrics)},
  };
  if (out.diverged) out.manifest["divergence"] = out.divergence;
  if (out.stopped) out.manifest["stopped_after_epoch"] = out.metrics.size();
  return out;
}

}  // namespace

DatasetStore::DatasetStore(std::filesystem::path root) : root_(std::move(root)) {}

DatasetStore DatasetStore::from_environment() {
  const char* root = std::getenv(kDataRootEnv);
  return DatasetStore(root != nullptr && *root != '\0' ? std::filesystem::path(root) : std::filesystem::path("data"));
}

std::filesystem::path DatasetStore::path_of(const std::string& name, const std::string& split) const {
  return root_ / (name + "_" + split + ".rsds");
}

std::shared_ptr<const Dataset> DatasetStore::get(const std::string& name, const std::string& split) {
  const std::string key = name + "_" + split;
  std::lock_guard lock(mutex_);
  if (auto it = loaded_.find(key); it != loaded_.end()) return it->second;
  const std::filesystem::path path = path_of(name, split);
  if (!std::filesystem::exists(path)) {
    throw Error("dataset file " + path.string() + " not found; convert it with `dataprep " + name + " --out " +
                root_.string() + "` or write synthetic stand-ins with `repsim-synth --out " + root_.string() +
                "` (set " + kDataRootEnv + " to use another directory)");
  }
  auto dataset = std::make_shared<const Dataset>(load_dataset(path, name, split));
  loaded_.emplace(key, dataset);
  return dataset;
}

nlohmann::json Task::describe() const {
  return {{"train", {{"name", train.name}, {"split", train.split}, {"size", train.size()}}},
          {"test", {{"name", test.name}, {"split", test.split}, {"size", test.size()}}},
          {"transform", transform},
          {"header_sha256", header_hashes}};
}

Task resolve_task(DatasetStore& store, const RunSpec& spec, std::uint64_t seed) {
  validate(spec);
  const labels::LabelTransform transform = labels::parse_transform(spec.transform);
  Task task;
  task.transform = labels::to_string(transform);

  if (spec.source == "train") {
    auto train_file = store.get(spec.dataset, "train");
    auto test_file = store.get(spec.dataset, "test");
    task.train = sample_pool({train_file}, spec.n_train, 0, seed, "train").first;
    if (spec.n_test == 0) {
      task.test = *test_file;
    } else {
      task.test = sample_pool({test_file}, spec.n_test, 0, derive_seed(seed, "test-subset"), "test").first;
    }
    task.header_hashes = {train_file->header_sha256, test_file->header_sha256};
  } else if (spec.source == "test") {
    auto test_file = store.get(spec.dataset, "test");
    std::tie(task.train, task.test) = sample_pool({test_file}, spec.n_train, spec.n_test, seed, "test");
    task.header_hashes = {test_file->header_sha256};
  } else {
    auto train_file = store.get(spec.dataset, "train");
    auto test_file = store.get(spec.dataset, "test");
    std::tie(task.train, task.test) = sample_pool({train_file, test_file}, spec.n_train, spec.n_test, seed, "train+test");
    task.header_hashes = {train_file->header_sha256, test_file->header_sha256};
  }

  const int classes = static_cast<int>(task.train.num_classes);
  task.train.labels = labels::apply(transform, task.train.labels, classes, derive_seed(seed, "labels"));
  task.test.labels = labels::apply(transform, task.test.labels, classes, derive_seed(seed, "labels-test"));
  return task;
}

RunArtifacts train(const RunSpec& spec, const Task& task, std::uint64_t seed, const RunOptions& options) {
  FourBlockConvConfig config;
  config.num_classes = task.train.num_classes;
  RunArtifacts out = run_loop(build_model(config, seed), Stage::pretrained, spec, task, seed, options);
  out.manifest["kind"] = "train";
  out.manifest["seed"] = seed;
  return out;
}

RunArtifacts train(DatasetStore& store, const RunSpec& spec, std::uint64_t seed, const RunOptions& options) {
  return train(spec, resolve_task(store, spec, seed), seed, options);
}

RunArtifacts finetune(const ModelCheckpoint& pretrained, const RunSpec& spec, const Task& task, std::uint64_t seed,
                      const RunOptions& options) {
  if (pretrained.stage != Stage::pretrained) {
    throw ConfigError("finetune: starting checkpoint has stage '" + to_string(pretrained.stage) +
                      "', expected 'pretrained'");
  }
  if (pretrained.config.num_classes != task.train.num_classes) {
    throw ConfigError("finetune: checkpoint has " + std::to_string(pretrained.config.num_classes) +
                      " classes, task has " + std::to_string(task.train.num_classes));
  }
  RunArtifacts out = run_loop(pretrained, Stage::finetuned, spec, task, derive_seed(seed, "finetune"), options);
  out.manifest["kind"] = "finetune";
  out.manifest["seed"] = seed;
  out.manifest["pretrained_seed"] = pretrained.seed;
  return out;
}

Evaluation evaluate(const ModelCheckpoint& model, const Tensor& images, std::span<const std::int32_t> labels) {
  const std::size_t n = labels.size();
  if (n == 0 || images.rank() == 0 || images.dim(0) != n) {
    throw ShapeError("evaluate: " + std::to_string(labels.size()) + " labels for images " + to_string(images.shape()));
  }
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, n - start);
    const ForwardResult result = forward_eval(model, slice_rows(images, start, count), false);
    const auto chunk_labels = labels.subspan(start, count);
    loss_sum += nn::softmax_cross_entropy(result.logits, chunk_labels).loss * static_cast<double>(count);
    const std::vector<std::int32_t> predicted = nn::argmax_rows(result.logits);
    for (std::size_t i = 0; i < count; ++i) {
      if (predicted[i] == chunk_labels[i]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

LayerRepresentations extract_representations(const ModelCheckpoint& model, const ProbeSet& probe) {
  const std::size_t n = probe.size();
  if (n == 0) throw ShapeError("extract_representations: empty probe set");
  const Shape expected{n, model.config.in_channels, model.config.image_side, model.config.image_side};
  expect_shape(probe.images, expected, "probe images");

  LayerRepresentations out;
  out.probe_identity = probe.identity();
  out.taps = tap_names(model.config);
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, n - start);
    const ForwardResult result = forward_eval(model, slice_rows(probe.images, start, count), true);
    if (out.values.empty()) {
      for (const Tensor& tap : result.taps.values) {
        out.values.emplace_back(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tap.dim(1)));
      }
    }
    for (std::size_t t = 0; t < result.taps.values.size(); ++t) {
      const Tensor& tap = result.taps.values[t];
      out.values[t].middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
          similarity::to_matrix(tap);
    }
  }
  return out;
}

PreparedRepresentations prepare(const LayerRepresentations& reps) {
  PreparedRepresentations out;
  out.probe_identity = reps.probe_identity;
  out.taps = reps.taps;
  for (const similarity::Matrix& values : reps.values) {
    if (values.rows() < similarity::kMinProbe) {
      throw ShapeError("prepare: need at least " + std::to_string(similarity::kMinProbe) + " probe inputs");
    }
    out.grams.push_back(similarity::prepare(values));
  }
  return out;
}

namespace {

template <typename Reps>
std::vector<std::pair<std::size_t, std::size_t>> match_taps(const Reps& a, const Reps& b) {
  if (a.probe_identity != b.probe_identity) {
    throw ConfigError("layerwise_cka: representations come from different probe sets (" + a.probe_identity +
                      " vs " + b.probe_identity + ")");
  }
  if (a.taps != b.taps) throw ShapeError("layerwise_cka: tap names differ");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < a.taps.size(); ++i) out.emplace_back(i, i);
  return out;
}

}  // namespace

std::vector<std::optional<double>> layerwise_cka(const LayerRepresentations& a, const LayerRepresentations& b) {
  std::vector<std::optional<double>> out;
  for (const auto& [i, j] : match_taps(a, b)) out.push_back(similarity::linear_cka(a.values[i], b.values[j]));
  return out;
}

std::vector<std::optional<double>> layerwise_cka(const PreparedRepresentations& a, const PreparedRepresentations& b) {
  std::vector<std::optional<double>> out;
  for (const auto& [i, j] : match_taps(a, b)) out.push_back(similarity::linear_cka(a.grams[i], b.grams[j]));
  return out;
}

AggregateEntry summarize(std::vector<double> values) {
  AggregateEntry out;
  out.seeds = values.size();
  if (values.empty()) return out;
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  out.mean = mean;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    out.stderr_mean = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

std::vector<AggregateEntry> aggregate(std::span<const SimilarityRow> rows) {
  using Key = std::tuple<std::string, std::optional<std::size_t>, std::string, std::string>;
  std::map<Key, std::vector<std::optional<double>>> groups;
  std::map<std::uint64_t, std::set<Key>> keys_by_seed;
  for (const SimilarityRow& row : rows) {
    Key key{row.cell, row.epoch, row.tap, row.pair};
    if (!keys_by_seed[row.seed].insert(key).second) {
      throw ShapeError("aggregate: duplicate row for seed " + std::to_string(row.seed) + " at " + row.cell + "/" +
                       row.tap + "/" + row.pair);
    }
    groups[key].push_back(row.cka);
  }
  if (!keys_by_seed.empty()) {
    const std::set<Key>& reference = keys_by_seed.begin()->second;
    for (const auto& [seed, keys] : keys_by_seed) {
      if (keys != reference) {
        throw ShapeError("aggregate: seed " + std::to_string(seed) + " reports a different set of comparisons than seed " +
                         std::to_string(keys_by_seed.begin()->first));
      }
    }
  }

  std::vector<AggregateEntry> out;
  for (const auto& [key, values] : groups) {
    std::vector<double> defined;
    for (const auto& v : values) {
      if (v) defined.push_back(*v);
    }
    AggregateEntry entry = summarize(defined);
    std::tie(entry.cell, entry.epoch, entry.tap, entry.pair) = key;
    entry.undefined = values.size() - defined.size();
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace repsim::experiments
