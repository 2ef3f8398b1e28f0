#include "repsim/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "repsim/container.hpp"
#include "repsim/error.hpp"
#include "repsim/labels.hpp"
#include "repsim/report.hpp"

#ifndef REPSIM_VERSION
#define REPSIM_VERSION "unknown"
#endif

namespace repsim::experiments {
namespace {

const char* const kPairInit = "final-init";
const char* const kPairPretrained = "final-pretrained";
const char* const kPairEpoch = "epoch-init";

std::string canonical_transform(const std::string& text) {
  const labels::LabelTransform t = labels::parse_transform(text);
  if (t.kind == labels::LabelTransform::Kind::partial_random && t.amount == 0) return "identity";
  return labels::to_string(t);
}

nlohmann::json canonical(const RunSpec& spec) {
  RunSpec copy = spec;
  copy.transform = canonical_transform(spec.transform);
  return to_json(copy);
}

bool contains(const std::vector<std::string>& items, const std::string& item) {
  return std::find(items.begin(), items.end(), item) != items.end();
}

void emit(const std::function<void(const std::string&)>& log, const std::string& line) {
  if (log) log(line);
}

std::string describe(const RunSpec& spec) {
  return spec.dataset + "/" + spec.source + " n=" + std::to_string(spec.n_train) + " " + spec.transform + " x" +
         std::to_string(spec.epochs);
}

RunOptions progress_options(const std::function<void(const std::string&)>& log, const std::string& label,
                            std::size_t epochs, bool keep_epochs) {
  RunOptions options;
  options.keep_epoch_checkpoints = keep_epochs;
  if (log) {
    options.on_epoch = [log, label, epochs](const EpochMetrics& m, const ModelCheckpoint&) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s epoch %zu/%zu loss %.4f train %.4f test %.4f", label.c_str(), m.epoch,
                    epochs, m.loss, m.train_acc, m.test_acc);
      log(buf);
    };
  }
  return options;
}

nlohmann::json metrics_to_json(const std::vector<EpochMetrics>& metrics) {
  nlohmann::json out = nlohmann::json::array();
  for (const EpochMetrics& m : metrics) {
    out.push_back({{"epoch", m.epoch}, {"loss", m.loss}, {"train_acc", m.train_acc},
                   {"test_acc", std::isnan(m.test_acc) ? nlohmann::json(nullptr) : nlohmann::json(m.test_acc)}});
  }
  return out;
}

std::vector<EpochMetrics> metrics_from_json(const nlohmann::json& j) {
  std::vector<EpochMetrics> out;
  for (const auto& item : j) {
    EpochMetrics m;
    m.epoch = item.at("epoch").get<std::size_t>();
    m.loss = item.at("loss").get<double>();
    m.train_acc = item.at("train_acc").get<double>();
    m.test_acc = item.at("test_acc").is_null() ? std::nan("") : item.at("test_acc").get<double>();
    out.push_back(m);
  }
  return out;
}

RunCache::Entry entry_from(RunArtifacts&& run, std::string key) {
  RunCache::Entry entry;
  entry.final = std::move(run.final);
  entry.epoch_checkpoints = std::move(run.epoch_checkpoints);
  entry.metrics = std::move(run.metrics);
  entry.diverged = run.diverged;
  entry.manifest = std::move(run.manifest);
  entry.manifest.erase("metrics");
  entry.key = std::move(key);
  return entry;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct SeedOutcome {
  std::vector<SimilarityRow> rows;
  std::vector<EpochMetrics> metrics;
  nlohmann::json info;
  std::vector<std::string> hashes;
};

void add_rows(SeedOutcome& out, const std::string& pipeline, const ExperimentConfig& cell, std::uint64_t seed,
              std::optional<std::size_t> epoch, const std::string& pair, const std::vector<std::string>& taps,
              const std::vector<std::optional<double>>& values) {
  for (std::size_t t = 0; t < taps.size(); ++t) {
    out.rows.push_back({pipeline, cell.cell, epoch, taps[t], pair, seed, values.empty() ? std::nullopt : values[t]});
  }
}

SeedOutcome run_cell_seed(const std::string& pipeline, const ExperimentConfig& cell, std::uint64_t seed,
                          DatasetStore& store, RunCache& cache, const std::function<void(const std::string&)>& log) {
  const bool per_epoch = contains(cell.compare, "epochs");
  const bool pretrained_start = cell.start == "pretrained";
  RunCache::Entry run = pretrained_start ? cache.finetuned(store, cell.pretrain, cell.run, seed, per_epoch, log)
                                         : cache.trained(store, cell.run, seed, per_epoch, log);
  SeedOutcome out;
  out.metrics = run.metrics;
  out.info = {{"seed", seed}, {"run_key", run.key}, {"run", run.manifest}};
  out.hashes = run.manifest.at("task").at("header_sha256").get<std::vector<std::string>>();
  if (cell.compare.empty()) return out;

  const Task task = resolve_task(store, cell.run, seed);
  const ProbeSet probe = make_probe(task.test, cell.n_probe, seed);
  out.info["probe"] = probe.identity();
  FourBlockConvConfig config = run.final.config;
  const std::vector<std::string> taps = tap_names(config);

  if (run.diverged) {
    for (const std::string& target : cell.compare) {
      if (target == "epochs") {
        for (std::size_t e = 1; e <= cell.run.epochs; ++e) add_rows(out, pipeline, cell, seed, e, kPairEpoch, taps, {});
      } else {
        add_rows(out, pipeline, cell, seed, std::nullopt, target == "init" ? kPairInit : kPairPretrained, taps, {});
      }
    }
    return out;
  }

  const auto prepared = [&](const ModelCheckpoint& model) {
    return prepare(extract_representations(model, probe));
  };
  std::optional<PreparedRepresentations> init_reps;
  if (contains(cell.compare, "init") || per_epoch) init_reps = prepared(build_model(config, seed));

  if (per_epoch) {
    for (std::size_t e = 0; e < run.epoch_checkpoints.size(); ++e) {
      add_rows(out, pipeline, cell, seed, e + 1, kPairEpoch, taps,
               layerwise_cka(prepared(run.epoch_checkpoints[e]), *init_reps));
    }
  }
  if (contains(cell.compare, "init") || contains(cell.compare, "pretrained")) {
    const PreparedRepresentations final_reps = prepared(run.final);
    if (contains(cell.compare, "init")) {
      add_rows(out, pipeline, cell, seed, std::nullopt, kPairInit, taps, layerwise_cka(final_reps, *init_reps));
    }
    if (contains(cell.compare, "pretrained")) {
      const RunCache::Entry pre = cache.trained(store, cell.pretrain, seed, false, log);
      add_rows(out, pipeline, cell, seed, std::nullopt, kPairPretrained, taps,
               layerwise_cka(final_reps, prepared(pre.final)));
    }
  }
  return out;
}

nlohmann::json aggregate_json(const std::vector<AggregateEntry>& entries) {
  nlohmann::json out = nlohmann::json::array();
  for (const AggregateEntry& e : entries) {
    nlohmann::json item = {{"tap", e.tap}, {"pair", e.pair}, {"seeds", e.seeds}, {"undefined", e.undefined}};
    item["epoch"] = e.epoch ? nlohmann::json(*e.epoch) : nlohmann::json(nullptr);
    item["mean"] = e.mean ? nlohmann::json(*e.mean) : nlohmann::json(nullptr);
    item["stderr"] = e.stderr_mean ? nlohmann::json(*e.stderr_mean) : nlohmann::json(nullptr);
    out.push_back(std::move(item));
  }
  return out;
}

// Final-epoch loss and accuracies summarized across seeds.
nlohmann::json metrics_summary(const CellOutcome& cell) {
  std::vector<double> loss, train, test;
  for (const auto& [seed, metrics] : cell.metrics) {
    if (metrics.empty()) continue;
    loss.push_back(metrics.back().loss);
    train.push_back(metrics.back().train_acc);
    if (!std::isnan(metrics.back().test_acc)) test.push_back(metrics.back().test_acc);
  }
  const auto pack = [](std::vector<double> values) {
    const AggregateEntry e = summarize(std::move(values));
    return nlohmann::json{{"seeds", e.seeds},
                          {"mean", e.mean ? nlohmann::json(*e.mean) : nlohmann::json(nullptr)},
                          {"stderr", e.stderr_mean ? nlohmann::json(*e.stderr_mean) : nlohmann::json(nullptr)}};
  };
  return {{"loss", pack(loss)}, {"train_acc", pack(train)}, {"test_acc", pack(test)}};
}

double or_nan(const std::optional<double>& v) { return v ? *v : std::nan(""); }

// Per-epoch mean and standard error of one metric across seeds.
report::Series metric_series(const CellOutcome& cell, double EpochMetrics::*field, const std::string& label) {
  report::Series s;
  s.label = label;
  std::size_t epochs = 0;
  for (const auto& [seed, metrics] : cell.metrics) epochs = std::max(epochs, metrics.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<double> values;
    for (const auto& [seed, metrics] : cell.metrics) {
      if (e < metrics.size() && !std::isnan(metrics[e].*field)) values.push_back(metrics[e].*field);
    }
    const AggregateEntry summary = summarize(values);
    s.x.push_back(static_cast<double>(e + 1));
    s.y.push_back(or_nan(summary.mean));
    s.error.push_back(or_nan(summary.stderr_mean));
  }
  return s;
}

std::vector<std::string> ordered_taps(const std::vector<AggregateEntry>& entries) {
  std::vector<std::string> taps = tap_names(FourBlockConvConfig{});
  std::vector<std::string> out;
  for (const std::string& t : taps) {
    if (std::any_of(entries.begin(), entries.end(), [&](const AggregateEntry& e) { return e.tap == t; })) {
      out.push_back(t);
    }
  }
  return out;
}

std::vector<std::string> pairs_of(const std::vector<AggregateEntry>& entries) {
  std::vector<std::string> out;
  for (const char* pair : {kPairPretrained, kPairInit, kPairEpoch}) {
    if (std::any_of(entries.begin(), entries.end(), [&](const AggregateEntry& e) { return e.pair == pair; })) {
      out.push_back(pair);
    }
  }
  return out;
}

const AggregateEntry* find_entry(const std::vector<AggregateEntry>& entries, const std::string& tap,
                                 const std::string& pair, std::optional<std::size_t> epoch) {
  for (const AggregateEntry& e : entries) {
    if (e.tap == tap && e.pair == pair && e.epoch == epoch) return &e;
  }
  return nullptr;
}

std::vector<report::Panel> cell_figure(const std::string& pipeline, const CellOutcome& cell) {
  std::vector<report::Panel> panels;
  const std::vector<std::string> taps = ordered_taps(cell.aggregate);
  const std::vector<std::string> pairs = pairs_of(cell.aggregate);
  if (contains(pairs, kPairEpoch)) {
    report::Panel p;
    p.title = pipeline + " " + cell.config.cell + ": CKA to initialization per epoch";
    p.x_label = "epoch";
    p.y_label = "linear CKA";
    for (const std::string& tap : taps) {
      report::Series s;
      s.label = tap;
      for (const AggregateEntry& e : cell.aggregate) {
        if (e.tap != tap || e.pair != kPairEpoch || !e.epoch) continue;
        s.x.push_back(static_cast<double>(*e.epoch));
        s.y.push_back(or_nan(e.mean));
        s.error.push_back(or_nan(e.stderr_mean));
      }
      p.series.push_back(std::move(s));
    }
    panels.push_back(std::move(p));
  } else if (!pairs.empty()) {
    report::Panel p;
    p.kind = report::Panel::Kind::bar;
    p.title = pipeline + " " + cell.config.cell + ": layerwise CKA";
    p.x_label = "tap";
    p.y_label = "linear CKA";
    p.categories = taps;
    p.y_min = 0.0;
    p.y_max = 1.0;
    for (const std::string& pair : pairs) {
      report::Series s;
      s.label = pair;
      for (const std::string& tap : taps) {
        const AggregateEntry* e = find_entry(cell.aggregate, tap, pair, std::nullopt);
        s.y.push_back(e ? or_nan(e->mean) : std::nan(""));
        s.error.push_back(e ? or_nan(e->stderr_mean) : std::nan(""));
      }
      p.series.push_back(std::move(s));
    }
    panels.push_back(std::move(p));
  }
  report::Panel acc;
  acc.title = pipeline + " " + cell.config.cell + ": accuracy";
  acc.x_label = "epoch";
  acc.y_label = "accuracy";
  acc.y_min = 0.0;
  acc.y_max = 1.0;
  acc.series = {metric_series(cell, &EpochMetrics::train_acc, "train"),
                metric_series(cell, &EpochMetrics::test_acc, "test")};
  panels.push_back(std::move(acc));
  return panels;
}

// Numeric sweep position of a cell (label noise d or training-set size).
std::optional<double> sweep_value(const std::string& pipeline, const ExperimentConfig& cell) {
  if (pipeline == "F3a" || pipeline == "F4a") {
    const labels::LabelTransform t = labels::parse_transform(cell.run.transform);
    return t.kind == labels::LabelTransform::Kind::partial_random ? t.amount : 0;
  }
  if (pipeline == "F3b") return static_cast<double>(cell.run.n_train);
  return std::nullopt;
}

std::vector<report::Panel> pipeline_figure(const std::string& pipeline, const std::vector<CellOutcome>& cells) {
  if (cells.empty()) return {};
  if (pipeline == "F1") return cell_figure(pipeline, cells.front());

  std::vector<report::Panel> panels;
  if (pipeline == "F2") {
    const std::vector<std::pair<double EpochMetrics::*, std::string>> metrics = {
        {&EpochMetrics::loss, "loss"}, {&EpochMetrics::train_acc, "train accuracy"},
        {&EpochMetrics::test_acc, "test accuracy"}};
    for (const auto& [field, name] : metrics) {
      report::Panel p;
      p.title = "F2: " + name;
      p.x_label = "epoch";
      p.y_label = name;
      for (const CellOutcome& cell : cells) p.series.push_back(metric_series(cell, field, cell.config.cell));
      panels.push_back(std::move(p));
    }
    return panels;
  }

  if (sweep_value(pipeline, cells.front().config)) {
    const std::string pair = cells.front().config.start == "pretrained" ? kPairPretrained : kPairInit;
    report::Panel p;
    p.title = pipeline + ": CKA(" + pair + ") per layer";
    p.x_label = pipeline == "F3b" ? "training samples" : "label noise d";
    p.y_label = "linear CKA";
    for (std::size_t i = 0; i < cells.size(); ++i) p.categories.push_back(cells[i].config.cell);
    for (const std::string& tap : ordered_taps(cells.front().aggregate)) {
      report::Series s;
      s.label = tap;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const AggregateEntry* e = find_entry(cells[i].aggregate, tap, pair, std::nullopt);
        s.x.push_back(static_cast<double>(i));
        s.y.push_back(e ? or_nan(e->mean) : std::nan(""));
        s.error.push_back(e ? or_nan(e->stderr_mean) : std::nan(""));
      }
      p.series.push_back(std::move(s));
    }
    panels.push_back(std::move(p));
    return panels;
  }

  if (pipeline == "F5") {
    for (const CellOutcome& cell : cells) {
      std::vector<report::Panel> one = cell_figure(pipeline, cell);
      panels.push_back(std::move(one.front()));
    }
    return panels;
  }

  // F4b / F4c: one bar group per tap, one bar per cell.
  report::Panel p;
  p.kind = report::Panel::Kind::bar;
  p.title = pipeline + ": representation change 1 - CKA(" + std::string(kPairPretrained) + ")";
  p.x_label = "tap";
  p.y_label = "1 - linear CKA";
  p.categories = ordered_taps(cells.front().aggregate);
  for (const CellOutcome& cell : cells) {
    report::Series s;
    s.label = cell.config.cell;
    for (const std::string& tap : p.categories) {
      const AggregateEntry* e = find_entry(cell.aggregate, tap, kPairPretrained, std::nullopt);
      s.y.push_back(e && e->mean ? 1.0 - *e->mean : std::nan(""));
      s.error.push_back(e ? or_nan(e->stderr_mean) : std::nan(""));
    }
    p.series.push_back(std::move(s));
  }
  panels.push_back(std::move(p));
  return panels;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string code_version() { return REPSIM_VERSION; }

const std::vector<std::string>& pipeline_ids() {
  static const std::vector<std::string> ids = {"F1", "F2", "F3a", "F3b", "F4a", "F4b", "F4c", "F5"};
  return ids;
}

std::string canonical_pipeline(const std::string& id) {
  std::string lower;
  for (char c : id) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const std::string& known : pipeline_ids()) {
    std::string k;
    for (char c : known) k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (k == lower) return known;
  }
  throw ConfigError("unknown pipeline '" + id + "' (expected F1, F2, F3a, F3b, F4a, F4b, F4c, F5 or all)");
}

std::vector<std::uint64_t> default_seeds(std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = i;
  return out;
}

std::vector<ExperimentConfig> pipeline_cells(const std::string& id, const Profile& p,
                                             const std::vector<std::uint64_t>& seeds) {
  validate(p);
  const std::string pipeline = canonical_pipeline(id);

  const auto spec = [&](std::string dataset, std::string source, std::size_t n_train, std::size_t n_test,
                        std::string transform, std::size_t epochs) {
    RunSpec r;
    r.dataset = std::move(dataset);
    r.source = std::move(source);
    r.n_train = n_train;
    r.n_test = n_test;
    r.transform = std::move(transform);
    r.epochs = epochs;
    r.batch_size = p.batch_size;
    r.lr = p.lr;
    r.momentum = p.momentum;
    return r;
  };
  const RunSpec pretrain = spec("cifar10", "train", p.pretrain_n_train, p.eval_n_test, "identity", p.pretrain_epochs);
  const auto cell = [&](std::string name, RunSpec run, std::vector<std::string> compare, bool finetuned) {
    ExperimentConfig c;
    c.pipeline = pipeline;
    c.cell = std::move(name);
    c.start = finetuned ? "pretrained" : "scratch";
    c.run = std::move(run);
    c.pretrain = finetuned ? pretrain : RunSpec{};
    c.seeds = seeds;
    c.n_probe = p.n_probe;
    c.compare = std::move(compare);
    return c;
  };
  const auto random = [](int d) { return d == 0 ? std::string("identity") : "random:" + std::to_string(d); };
  const std::string shift = "shift:" + std::to_string(p.shift);
  const auto finetune_spec = [&](const std::string& dataset, const std::string& transform) {
    return spec(dataset, dataset == "svhn" ? "train+test" : "test", p.finetune_n_train, p.finetune_n_test, transform,
                p.finetune_epochs);
  };

  std::vector<ExperimentConfig> cells;
  if (pipeline == "F1") {
    cells.push_back(cell("cifar10", spec("cifar10", "train", p.f1_n_train, p.eval_n_test, "identity", p.f1_epochs),
                         {"epochs"}, false));
  } else if (pipeline == "F2" || pipeline == "F3a") {
    for (int d : p.scratch_d) {
      cells.push_back(cell("d" + std::to_string(d),
                           spec("cifar10", "train", p.scratch_n_train, p.eval_n_test, random(d), p.scratch_epochs),
                           pipeline == "F2" ? std::vector<std::string>{} : std::vector<std::string>{"init"}, false));
    }
  } else if (pipeline == "F3b") {
    for (std::size_t n : p.f3b_sizes) {
      cells.push_back(cell("n" + std::to_string(n),
                           spec("cifar10", "train", n, p.eval_n_test, random(9), p.f3b_epochs), {"init"}, false));
    }
  } else if (pipeline == "F4a") {
    for (int d : p.finetune_d) {
      cells.push_back(cell("d" + std::to_string(d), finetune_spec("cifar10", random(d)), {"pretrained"}, true));
    }
  } else if (pipeline == "F4b") {
    cells.push_back(cell("svhn", finetune_spec("svhn", "identity"), {"pretrained"}, true));
    cells.push_back(cell("svhn-random", finetune_spec("svhn", random(9)), {"pretrained"}, true));
  } else if (pipeline == "F4c") {
    cells.push_back(cell("cifar10-shift", finetune_spec("cifar10", shift), {"pretrained"}, true));
    cells.push_back(cell("svhn", finetune_spec("svhn", "identity"), {"pretrained"}, true));
  } else {
    cells.push_back(cell("cifar10", finetune_spec("cifar10", "identity"), {"pretrained", "init"}, true));
    cells.push_back(cell("random", finetune_spec("cifar10", random(9)), {"pretrained", "init"}, true));
    cells.push_back(cell("shift", finetune_spec("cifar10", shift), {"pretrained", "init"}, true));
    cells.push_back(cell("svhn", finetune_spec("svhn", "identity"), {"pretrained", "init"}, true));
  }
  for (const ExperimentConfig& c : cells) validate(c);
  return cells;
}

std::string RunCache::key(const RunSpec& run, const std::optional<RunSpec>& pretrain, bool keep_epochs) {
  const nlohmann::json j = {{"code_version", code_version()},
                            {"run", canonical(run)},
                            {"pretrain", pretrain ? canonical(*pretrain) : nlohmann::json(nullptr)},
                            {"epoch_checkpoints", keep_epochs}};
  return sha256_hex(j.dump()).substr(0, 16);
}

std::optional<RunCache::Entry> RunCache::load(const std::string& key, std::uint64_t seed) const {
  if (!root_) return std::nullopt;
  const std::filesystem::path dir = *root_ / key / ("seed" + std::to_string(seed));
  const std::filesystem::path record = dir / "run.json";
  if (!std::filesystem::exists(record)) return std::nullopt;
  const nlohmann::json j = nlohmann::json::parse(read_file(record));
  Entry entry;
  entry.key = key;
  entry.manifest = j.at("manifest");
  entry.metrics = metrics_from_json(j.at("metrics"));
  entry.diverged = j.at("diverged").get<bool>();
  entry.final = load_checkpoint(dir / "final.rstc");
  for (std::size_t e = 1; e <= j.at("epoch_checkpoints").get<std::size_t>(); ++e) {
    entry.epoch_checkpoints.push_back(load_checkpoint(dir / ("epoch" + std::to_string(e) + ".rstc")));
  }
  return entry;
}

void RunCache::store(const Entry& entry, std::uint64_t seed) const {
  if (!root_) return;
  const std::filesystem::path dir = *root_ / entry.key / ("seed" + std::to_string(seed));
  save_checkpoint(entry.final, dir / "final.rstc");
  for (std::size_t e = 0; e < entry.epoch_checkpoints.size(); ++e) {
    save_checkpoint(entry.epoch_checkpoints[e], dir / ("epoch" + std::to_string(e + 1) + ".rstc"));
  }
  // Written last: its presence marks a complete entry.
  const nlohmann::json j = {{"manifest", entry.manifest},
                            {"metrics", metrics_to_json(entry.metrics)},
                            {"diverged", entry.diverged},
                            {"epoch_checkpoints", entry.epoch_checkpoints.size()}};
  write_file_atomic(dir / "run.json", dump(j));
}

RunCache::Entry RunCache::trained(DatasetStore& store, const RunSpec& spec, std::uint64_t seed, bool keep_epochs,
                                  const std::function<void(const std::string&)>& log) {
  const std::string k = key(spec, std::nullopt, keep_epochs);
  if (auto hit = load(k, seed)) return std::move(*hit);
  const std::string label = "[train " + describe(spec) + " seed " + std::to_string(seed) + "]";
  emit(log, label + " start");
  Entry entry =
      entry_from(train(store, spec, seed, progress_options(log, label, spec.epochs, keep_epochs)), k);
  this->store(entry, seed);
  return entry;
}

RunCache::Entry RunCache::finetuned(DatasetStore& store, const RunSpec& pretrain, const RunSpec& spec,
                                    std::uint64_t seed, bool keep_epochs,
                                    const std::function<void(const std::string&)>& log) {
  const std::string k = key(spec, pretrain, keep_epochs);
  if (auto hit = load(k, seed)) return std::move(*hit);
  const Entry base = trained(store, pretrain, seed, false, log);
  if (base.diverged) {
    throw DivergenceError("pretraining run " + base.key + " (seed " + std::to_string(seed) +
                          ") diverged; cannot fine-tune from it");
  }
  const std::string label = "[finetune " + describe(spec) + " seed " + std::to_string(seed) + "]";
  emit(log, label + " start");
  const Task task = resolve_task(store, spec, seed);
  Entry entry =
      entry_from(finetune(base.final, spec, task, seed, progress_options(log, label, spec.epochs, keep_epochs)), k);
  entry.manifest["pretrain"] = base.manifest;
  entry.manifest["pretrain_key"] = base.key;
  this->store(entry, seed);
  return entry;
}

PipelineOutcome run_cells(const std::string& pipeline, const std::vector<ExperimentConfig>& cells, DatasetStore& store,
                          const PipelineOptions& options) {
  if (cells.empty()) throw ConfigError("pipeline " + pipeline + " has no cells");
  const std::vector<std::uint64_t> seeds = cells.front().seeds;
  for (const ExperimentConfig& c : cells) {
    validate(c);
    if (c.seeds != seeds) throw ConfigError("cells of one pipeline must share their seeds");
  }

  std::mutex log_mutex;
  const std::function<void(const std::string&)> log = [&](const std::string& line) {
    if (!options.log) return;
    std::lock_guard lock(log_mutex);
    options.log(line);
  };
  RunCache cache(options.use_cache ? std::optional(options.out_dir / "runs") : std::nullopt);

  // results[seed][cell]
  std::vector<std::vector<SeedOutcome>> results(seeds.size());
  parallel_for(seeds.size(), options.workers, [&](std::size_t s) {
    for (const ExperimentConfig& c : cells) {
      results[s].push_back(run_cell_seed(pipeline, c, seeds[s], store, cache, log));
      log("[" + pipeline + " " + c.cell + " seed " + std::to_string(seeds[s]) + "] done");
    }
  });

  PipelineOutcome outcome;
  outcome.pipeline = pipeline;
  const std::filesystem::path pipeline_dir = options.out_dir / pipeline;
  nlohmann::json pipeline_cells_json = nlohmann::json::array();

  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellOutcome cell;
    cell.config = cells[c];
    cell.dir = pipeline_dir / cells[c].cell;

    report::CsvTable metrics_csv({"pipeline", "cell", "seed", "epoch", "loss", "train_acc", "test_acc"});
    report::CsvTable similarity_csv({"pipeline", "cell", "epoch", "tap", "pair", "seed", "cka", "change"});
    std::set<std::string> hashes;
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      SeedOutcome& r = results[s][c];
      for (const EpochMetrics& m : r.metrics) {
        metrics_csv.add_row({pipeline, cells[c].cell, std::to_string(seeds[s]), std::to_string(m.epoch),
                             report::format_double(m.loss), report::format_double(m.train_acc),
                             report::format_double(m.test_acc)});
      }
      for (const SimilarityRow& row : r.rows) {
        similarity_csv.add_row({row.pipeline, row.cell, row.epoch ? std::to_string(*row.epoch) : "", row.tap, row.pair,
                                std::to_string(row.seed), report::format_optional(row.cka),
                                row.cka ? report::format_double(1.0 - *row.cka) : ""});
      }
      cell.rows.insert(cell.rows.end(), r.rows.begin(), r.rows.end());
      cell.metrics.emplace_back(seeds[s], r.metrics);
      hashes.insert(r.hashes.begin(), r.hashes.end());
      runs.push_back(r.info);
    }
    cell.aggregate = aggregate(cell.rows);

    const nlohmann::json aggregate_doc = {{"pipeline", pipeline},
                                          {"cell", cells[c].cell},
                                          {"seeds", seeds},
                                          {"similarity", aggregate_json(cell.aggregate)},
                                          {"final_metrics", metrics_summary(cell)}};
    nlohmann::json manifest = {{"pipeline", pipeline},
                               {"cell", cells[c].cell},
                               {"config", to_json(cells[c])},
                               {"code_version", code_version()},
                               {"workers", options.workers},
                               {"dataset_header_sha256", std::vector<std::string>(hashes.begin(), hashes.end())},
                               {"runs", runs}};
    if (options.profile) manifest["profile"] = to_json(*options.profile);

    const std::vector<std::pair<std::string, std::string>> files = {
        {"metrics.csv", metrics_csv.str()},
        {"similarity.csv", similarity_csv.str()},
        {"aggregate.json", dump(aggregate_doc)},
        {"figure.svg", report::render_svg(cell_figure(pipeline, cell))},
        {"manifest.json", dump(manifest)},
    };
    for (const auto& [name, content] : files) {
      write_file_atomic(cell.dir / name, content);
      outcome.files.push_back(cell.dir / name);
    }
    pipeline_cells_json.push_back(aggregate_doc);
    outcome.cells.push_back(std::move(cell));
  }

  write_file_atomic(pipeline_dir / "aggregate.json",
                    dump({{"pipeline", pipeline}, {"seeds", seeds}, {"cells", pipeline_cells_json}}));
  write_file_atomic(pipeline_dir / "figure.svg", report::render_svg(pipeline_figure(pipeline, outcome.cells)));
  outcome.files.push_back(pipeline_dir / "aggregate.json");
  outcome.files.push_back(pipeline_dir / "figure.svg");
  return outcome;
}

PipelineOutcome run_pipeline(const std::string& id, const Profile& profile, const std::vector<std::uint64_t>& seeds,
                             DatasetStore& store, const PipelineOptions& options) {
  const std::string pipeline = canonical_pipeline(id);
  std::vector<ExperimentConfig> cells = pipeline_cells(pipeline, profile, seeds);
  if (pipeline == "F3b") {
    const std::size_t available = store.get("cifar10", "train")->size();
    std::erase_if(cells, [&](const ExperimentConfig& c) {
      if (c.run.n_train <= available) return false;
      emit(options.log, "[F3b] skipping " + c.cell + ": only " + std::to_string(available) + " training records");
      return true;
    });
  }
  PipelineOptions with_profile = options;
  with_profile.profile = profile;
  return run_cells(pipeline, cells, store, with_profile);
}

std::vector<std::pair<std::string, std::optional<double>>> mean_by_tap(const CellOutcome& cell,
                                                                       const std::string& pair) {
  std::optional<std::size_t> epoch;
  for (const AggregateEntry& e : cell.aggregate) {
    if (e.pair == pair && e.epoch && (!epoch || *e.epoch > *epoch)) epoch = e.epoch;
  }
  std::vector<std::pair<std::string, std::optional<double>>> out;
  for (const std::string& tap : ordered_taps(cell.aggregate)) {
    const AggregateEntry* e = find_entry(cell.aggregate, tap, pair, epoch);
    if (e) out.emplace_back(tap, e->mean);
  }
  return out;
}

}  // namespace repsim::experiments
