#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "repsim/config.hpp"
#include "repsim/container.hpp"
#include "repsim/error.hpp"
#include "repsim/experiments.hpp"
#include "repsim/pipeline.hpp"
#include "repsim/report.hpp"
#include "repsim/runtime.hpp"
#include "repsim/similarity.hpp"
#include "suites.hpp"

namespace fs = std::filesystem;
using namespace repsim;
using namespace repsim::experiments;

namespace {

void log_line(const std::string& line) { std::cerr << line << std::endl; }

nlohmann::json load_document(nlohmann::json defaults, const std::string& config_path,
                             const std::vector<std::string>& overrides) {
  if (!config_path.empty()) merge_strict(defaults, read_toml(config_path));
  apply_overrides(defaults, overrides);
  return defaults;
}

ExperimentConfig load_experiment(const std::string& config_path, const std::vector<std::string>& overrides,
                                 std::optional<std::uint64_t> seed) {
  ExperimentConfig config = config_from_json(load_document(to_json(ExperimentConfig{}), config_path, overrides));
  if (seed) config.seeds = {*seed};
  validate(config);
  return config;
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  report::CsvTable table({"epoch", "loss", "train_acc", "test_acc"});
  for (const EpochMetrics& m : metrics) {
    table.add_row({std::to_string(m.epoch), report::format_double(m.loss), report::format_double(m.train_acc),
                   report::format_double(m.test_acc)});
  }
  return table.str();
}

void write_run(const fs::path& dir, const ExperimentConfig& config, const RunArtifacts& run) {
  fs::create_directories(dir);
  save_checkpoint(run.init, dir / "init.rstc");
  save_checkpoint(run.final, dir / "final.rstc");
  write_file_atomic(dir / "metrics.csv", metrics_csv(run.metrics));
  nlohmann::json manifest = run.manifest;
  manifest["config"] = to_json(config);
  manifest["code_version"] = code_version();
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  for (const char* name : {"init.rstc", "final.rstc", "metrics.csv", "manifest.json"}) {
    std::cout << (dir / name).string() << "\n";
  }
  if (run.diverged) throw DivergenceError("run diverged: " + run.divergence);
}

RunOptions progress(std::size_t epochs) {
  RunOptions options;
  options.on_epoch = [epochs](const EpochMetrics& m, const ModelCheckpoint&) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu/%zu loss %.4f train_acc %.4f test_acc %.4f", m.epoch, epochs, m.loss,
                  m.train_acc, m.test_acc);
    log_line(buf);
  };
  return options;
}

LayerRepresentations read_representations(const fs::path& path) {
  const TensorContainer c = read_container(path);
  if (!c.meta.contains("probe_identity")) throw FormatError(path.string() + ": not a representation file");
  LayerRepresentations reps;
  reps.probe_identity = c.meta.at("probe_identity").get<std::string>();
  for (const auto& [name, tensor] : c.tensors) {
    reps.taps.push_back(name);
    reps.values.push_back(similarity::to_matrix(tensor));
  }
  return reps;
}

int run_selftest(std::uint64_t seed) {
  std::vector<checks::CheckResult> all;
  for (auto suite : {+[](std::uint64_t s) { return checks::gradient_suite(s); },
                     +[](std::uint64_t s) { return checks::forward_suite(s); },
                     +[](std::uint64_t s) { return checks::cka_suite(s); },
                     +[](std::uint64_t s) { return checks::label_suite(s); }}) {
    for (checks::CheckResult& r : suite(seed)) {
      std::cout << (r.passed ? "PASS  " : "FAIL  ") << r.name << "  [" << r.detail << "]" << std::endl;
      all.push_back(std::move(r));
    }
  }
  const bool ok = checks::all_passed(all);
  std::cout << (ok ? "selftest passed" : "selftest FAILED") << std::endl;
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Representation-similarity lab: training, fine-tuning and layerwise CKA"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";

  auto add_run_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "TOML experiment config")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override a config field, key=value (repeatable)");
    cmd->add_option("--seed", seed, "Run a single seed instead of the config's seed list");
    cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
  };

  CLI::App* train_cmd = app.add_subcommand("train", "Train from a seeded initialization");
  add_run_flags(train_cmd);

  std::string checkpoint_path;
  CLI::App* finetune_cmd = app.add_subcommand("finetune", "Fine-tune a pretrained checkpoint");
  add_run_flags(finetune_cmd);
  finetune_cmd->add_option("--checkpoint", checkpoint_path,
                           "Pretrained checkpoint; without it the config's pretrain run is trained (and cached)")
      ->check(CLI::ExistingFile);

  std::string dataset = "cifar10", split = "test", reps_out;
  std::size_t n_probe = 512;
  std::uint64_t probe_seed = 0;
  CLI::App* extract_cmd = app.add_subcommand("extract", "Extract per-tap representations on a probe set");
  extract_cmd->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("--dataset", dataset, "cifar10 | svhn")->capture_default_str();
  extract_cmd->add_option("--split", split, "train | test")->capture_default_str();
  extract_cmd->add_option("--n-probe", n_probe, "Probe inputs")->capture_default_str();
  extract_cmd->add_option("--probe-seed", probe_seed, "Probe selection seed")->capture_default_str();
  extract_cmd->add_option("--out", reps_out, "Output representation file (.rstc)")->required();

  std::string reps_a, reps_b, compare_out;
  bool with_rsa = false;
  CLI::App* compare_cmd = app.add_subcommand("compare", "Layerwise linear CKA between two representation files");
  compare_cmd->add_option("a", reps_a, "First representation file")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("b", reps_b, "Second representation file")->required()->check(CLI::ExistingFile);
  compare_cmd->add_flag("--rsa", with_rsa, "Also report RSA (Spearman correlation of Pearson-distance RDMs)");
  compare_cmd->add_option("--out", compare_out, "Also write the table as CSV");

  std::string pipeline_id, scale = "reduced";
  std::optional<std::size_t> seed_count;
  std::size_t workers = 1;
  bool no_cache = false;
  CLI::App* reproduce_cmd = app.add_subcommand("reproduce", "Run a reproduction pipeline");
  reproduce_cmd->add_option("pipeline", pipeline_id, "F1 | F2 | F3a | F3b | F4a | F4b | F4c | F5 | all")->required();
  reproduce_cmd->add_option("--scale", scale, "reduced | full")->capture_default_str();
  reproduce_cmd->add_option("--seeds", seed_count, "Number of seeds (0..k-1)");
  reproduce_cmd->add_option("--workers", workers, "Seeds trained in parallel")->capture_default_str()->check(
      CLI::PositiveNumber);
  reproduce_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
  reproduce_cmd->add_option("--config", config_path, "TOML profile patch")->check(CLI::ExistingFile);
  reproduce_cmd->add_option("--set", overrides, "Override a profile field, key=value (repeatable)");
  reproduce_cmd->add_flag("--no-cache", no_cache, "Do not reuse or store trained runs under <out>/runs");

  std::uint64_t selftest_seed = 0;
  CLI::App* selftest_cmd = app.add_subcommand("selftest", "Run the gradient, oracle, CKA and label suites");
  selftest_cmd->add_option("--seed", selftest_seed, "Seed of the random instances")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) {
      const ExperimentConfig config = load_experiment(config_path, overrides, seed);
      DatasetStore store = DatasetStore::from_environment();
      for (std::uint64_t s : config.seeds) {
        const RunArtifacts run = train(store, config.run, s, progress(config.run.epochs));
        write_run(fs::path(out_dir) / ("seed" + std::to_string(s)), config, run);
      }
    } else if (*finetune_cmd) {
      const ExperimentConfig config = load_experiment(config_path, overrides, seed);
      DatasetStore store = DatasetStore::from_environment();
      RunCache cache(fs::path(out_dir) / "runs");
      for (std::uint64_t s : config.seeds) {
        const ModelCheckpoint pretrained = checkpoint_path.empty()
                                               ? cache.trained(store, config.pretrain, s, false, log_line).final
                                               : load_checkpoint(checkpoint_path);
        const Task task = resolve_task(store, config.run, s);
        const RunArtifacts run = finetune(pretrained, config.run, task, s, progress(config.run.epochs));
        write_run(fs::path(out_dir) / ("seed" + std::to_string(s)), config, run);
      }
    } else if (*extract_cmd) {
      const ModelCheckpoint model = load_checkpoint(checkpoint_path);
      DatasetStore store = DatasetStore::from_environment();
      const ProbeSet probe = make_probe(*store.get(dataset, split), n_probe, probe_seed);
      const LayerRepresentations reps = extract_representations(model, probe);
      TensorContainer c;
      c.meta = {{"probe_identity", reps.probe_identity},
                {"checkpoint", fs::absolute(checkpoint_path).string()},
                {"stage", to_string(model.stage)},
                {"model_seed", model.seed},
                {"dataset", dataset},
                {"split", split},
                {"n_probe", n_probe},
                {"probe_seed", probe_seed}};
      for (std::size_t t = 0; t < reps.taps.size(); ++t) {
        const similarity::Matrix& m = reps.values[t];
        c.tensors.emplace_back(reps.taps[t],
                               Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                                      std::vector<double>(m.data(), m.data() + m.size())));
      }
      write_container(c, reps_out);
      std::cout << reps_out << "\n";
    } else if (*compare_cmd) {
      const LayerRepresentations a = read_representations(reps_a);
      const LayerRepresentations b = read_representations(reps_b);
      const std::vector<std::optional<double>> cka = layerwise_cka(a, b);
      std::vector<std::string> columns = {"tap", "cka", "change"};
      if (with_rsa) columns.push_back("rsa");
      report::CsvTable table(columns);
      for (std::size_t t = 0; t < a.taps.size(); ++t) {
        std::vector<std::string> row = {a.taps[t], report::format_optional(cka[t]),
                                        cka[t] ? report::format_double(1.0 - *cka[t]) : ""};
        if (with_rsa) {
          row.push_back(report::format_double(
              similarity::rsa_spearman(similarity::rdm(a.values[t]), similarity::rdm(b.values[t]))));
        }
        table.add_row(std::move(row));
      }
      std::cout << table.str();
      if (!compare_out.empty()) {
        write_file_atomic(compare_out, table.str());
        std::cout << compare_out << "\n";
      }
    } else if (*reproduce_cmd) {
      Profile profile = profile_from_json(load_document(to_json(profile_by_name(scale)), config_path, overrides));
      if (seed_count) profile.seeds = *seed_count;
      validate(profile);
      const std::vector<std::string> ids =
          pipeline_id == "all" || pipeline_id == "ALL" ? pipeline_ids()
                                                       : std::vector<std::string>{canonical_pipeline(pipeline_id)};
      DatasetStore store = DatasetStore::from_environment();
      PipelineOptions options;
      options.out_dir = out_dir;
      options.workers = workers;
      options.use_cache = !no_cache;
      options.log = log_line;
      options.profile = profile;
      for (const std::string& id : ids) {
        const PipelineOutcome outcome = run_pipeline(id, profile, default_seeds(profile.seeds), store, options);
        for (const fs::path& file : outcome.files) std::cout << file.string() << "\n";
      }
    } else if (*selftest_cmd) {
      return run_selftest(selftest_seed);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
