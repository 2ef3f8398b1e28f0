// Acceptance runner: one PASS/FAIL line per criterion, exit 0 only if all pass.
// Progress goes to stderr; a JSON summary is written to <work>/acceptance.json.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "repsim/container.hpp"
#include "repsim/error.hpp"
#include "repsim/pipeline.hpp"
#include "repsim/runtime.hpp"
#include "repsim/synthetic.hpp"
#include "suites.hpp"

using namespace repsim;
using namespace repsim::experiments;
namespace fs = std::filesystem;

namespace {

// Pinned limits.
constexpr double kGradientSuiteSeconds = 120.0;
constexpr double kMemorizeTrainAcc = 0.9;
constexpr std::size_t kMemorizeMaxEpochs = 300;
constexpr double kMemorizeTestLow = 0.05;
constexpr double kMemorizeTestHigh = 0.15;
constexpr double kMemorizeSeconds = 3600.0;
constexpr std::size_t kMemorizeSamples = 5000;
constexpr std::size_t kOrderSamples = 10000;
constexpr std::size_t kOrderEpochs = 30;
constexpr std::size_t kOrderSeeds = 3;
constexpr std::size_t kOrderMaxInversions = 1;
constexpr std::size_t kReversalMinSeeds = 2;

const std::vector<std::string> kTaps = {"block1", "block2", "block3", "block4", "logits"};

struct Verdict {
  bool passed = false;
  std::string detail;
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void log_line(const std::string& line) { std::cerr << line << std::endl; }

Verdict from_suite(const std::vector<checks::CheckResult>& results) {
  Verdict v{checks::all_passed(results), ""};
  for (const auto& r : results) {
    if (!r.passed) v.detail += "failed: " + r.name + " [" + r.detail + "]; ";
  }
  if (v.passed) v.detail = std::to_string(results.size()) + " checks";
  for (const auto& r : results) log_line(std::string(r.passed ? "  ok    " : "  FAIL  ") + r.name + "  [" + r.detail + "]");
  return v;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return saa == 0 || sbb == 0 ? std::nan("") : sab / std::sqrt(saa * sbb);
}

// CKA of one (cell, tap, pair, seed), final epoch.
double cell_value(const CellOutcome& cell, const std::string& tap, const std::string& pair, std::uint64_t seed) {
  for (const SimilarityRow& row : cell.rows) {
    if (!row.epoch && row.tap == tap && row.pair == pair && row.seed == seed) {
      return row.cka ? *row.cka : std::nan("");
    }
  }
  throw repsim::Error("no row for " + cell.config.cell + " " + tap + " " + pair + " seed " + std::to_string(seed));
}

const AggregateEntry& cell_aggregate(const CellOutcome& cell, const std::string& tap, const std::string& pair) {
  for (const AggregateEntry& e : cell.aggregate) {
    if (!e.epoch && e.tap == tap && e.pair == pair) return e;
  }
  throw repsim::Error("no aggregate for " + cell.config.cell + " " + tap + " " + pair);
}

const CellOutcome& find_cell(const PipelineOutcome& outcome, const std::string& name) {
  for (const CellOutcome& c : outcome.cells) {
    if (c.config.cell == name) return c;
  }
  throw repsim::Error("pipeline " + outcome.pipeline + " has no cell " + name);
}

int transform_d(const std::string& transform) {
  return transform == "identity" ? 0 : std::stoi(transform.substr(transform.find(':') + 1));
}

class Runner {
 public:
  Runner(fs::path work, fs::path data, fs::path cli, Profile profile)
      : work_(std::move(work)), data_(std::move(data)), cli_(std::move(cli)), profile_(std::move(profile)),
        store_(data_) {
    options_.out_dir = work_ / "pipelines";
    // Every invocation trains from scratch; the run cache only shares runs within it.
    fs::remove_all(options_.out_dir);
    options_.workers = 1;
    options_.use_cache = true;
    options_.log = log_line;
    options_.profile = profile_;
  }

  Verdict gradients() {
    const auto start = std::chrono::steady_clock::now();
    Verdict v = from_suite(checks::gradient_suite(0, 100));
    const double elapsed = seconds_since(start);
    v.detail += "; " + fixed(elapsed, 1) + " s (limit " + fixed(kGradientSuiteSeconds, 0) + " s)";
    v.passed = v.passed && elapsed < kGradientSuiteSeconds;
    return v;
  }
  Verdict forward() { return from_suite(checks::forward_suite(0, 100)); }
  Verdict cka() { return from_suite(checks::cka_suite(0)); }
  Verdict labels() { return from_suite(checks::label_suite(0)); }

  Verdict memorization() {
    RunSpec spec;
    spec.dataset = "cifar10";
    spec.n_train = kMemorizeSamples;
    spec.n_test = profile_.eval_n_test;
    spec.transform = "random:9";
    spec.epochs = kMemorizeMaxEpochs;
    spec.batch_size = profile_.batch_size;
    spec.lr = profile_.lr;
    spec.momentum = profile_.momentum;
    RunOptions options;
    options.on_epoch = [](const EpochMetrics& m, const ModelCheckpoint&) {
      log_line("[memorize] epoch " + std::to_string(m.epoch) + " loss " + fixed(m.loss) + " train_acc " +
               fixed(m.train_acc) + " test_acc " + fixed(m.test_acc));
    };
    // Measurement stop: the criterion is the first epoch reaching the threshold.
    options.stop_when = [](const EpochMetrics& m) { return m.train_acc >= kMemorizeTrainAcc; };
    const auto start = std::chrono::steady_clock::now();
    const RunArtifacts run = train(store_, spec, 0, options);
    const double elapsed = seconds_since(start);
    if (run.diverged) return {false, "run diverged: " + run.divergence};

    double low = 1.0, high = 0.0;
    for (const EpochMetrics& m : run.metrics) {
      low = std::min(low, m.test_acc);
      high = std::max(high, m.test_acc);
    }
    const EpochMetrics& last = run.metrics.back();
    const bool reached = last.train_acc >= kMemorizeTrainAcc;
    const bool test_ok = low >= kMemorizeTestLow && high <= kMemorizeTestHigh;
    Verdict v;
    v.passed = reached && test_ok && elapsed <= kMemorizeSeconds;
    v.detail = "train_acc " + fixed(last.train_acc) + " at epoch " + std::to_string(last.epoch) + " (need >= " +
               fixed(kMemorizeTrainAcc, 2) + " within " + std::to_string(kMemorizeMaxEpochs) + "); test_acc range [" +
               fixed(low) + ", " + fixed(high) + "]; " + fixed(elapsed, 0) + " s";
    return v;
  }

  Verdict ordering() {
    ExperimentConfig c;
    c.pipeline = "ordering";
    c.cell = "cifar10";
    c.run.dataset = "cifar10";
    c.run.n_train = kOrderSamples;
    c.run.n_test = profile_.eval_n_test;
    c.run.epochs = kOrderEpochs;
    c.run.batch_size = profile_.batch_size;
    c.run.lr = profile_.lr;
    c.run.momentum = profile_.momentum;
    c.seeds = default_seeds(kOrderSeeds);
    c.n_probe = profile_.n_probe;
    c.compare = {"init"};
    const PipelineOutcome outcome = run_cells("ordering", {c}, store_, options_);
    const CellOutcome& cell = outcome.cells.front();

    std::vector<double> mean, se;
    for (const std::string& tap : kTaps) {
      const AggregateEntry& e = cell_aggregate(cell, tap, "final-init");
      if (!e.mean || !e.stderr_mean) return {false, "undefined CKA at " + tap};
      mean.push_back(*e.mean);
      se.push_back(*e.stderr_mean);
    }
    std::size_t inversions = 0;
    bool within_se = true;
    for (std::size_t i = 0; i + 1 < mean.size(); ++i) {
      if (mean[i + 1] > mean[i]) {
        ++inversions;
        within_se = within_se && mean[i + 1] - mean[i] <= std::max(se[i], se[i + 1]);
      }
    }
    Verdict v;
    v.passed = inversions <= kOrderMaxInversions && within_se;
    v.detail = "mean CKA(final, init)";
    for (std::size_t i = 0; i < mean.size(); ++i) v.detail += " " + kTaps[i] + " " + fixed(mean[i]) + "+-" + fixed(se[i]);
    v.detail += "; inversions " + std::to_string(inversions) + (within_se ? "" : " (beyond 1 SE)");
    return v;
  }

  Verdict reversal() {
    const PipelineOutcome& scratch = pipeline("F3a");
    const PipelineOutcome& tuned = pipeline("F4a");
    const auto signs = [&](const PipelineOutcome& p, const std::string& pair, double sign, std::string& text) {
      std::size_t agree = 0;
      for (std::uint64_t seed : seeds()) {
        std::vector<double> d, block1;
        for (const CellOutcome& cell : p.cells) {
          d.push_back(transform_d(cell.config.run.transform));
          block1.push_back(cell_value(cell, "block1", pair, seed));
        }
        const double rho = spearman(d, block1);
        agree += sign * rho > 0;
        text += " " + fixed(rho, 2);
      }
      return agree;
    };
    std::string scratch_text, tuned_text;
    const std::size_t up = signs(scratch, "final-init", 1.0, scratch_text);
    const std::size_t down = signs(tuned, "final-pretrained", -1.0, tuned_text);
    Verdict v;
    v.passed = up >= kReversalMinSeeds && down >= kReversalMinSeeds;
    v.detail = "per-seed Spearman(d, block1 CKA): scratch" + scratch_text + " (" + std::to_string(up) +
               " positive), fine-tune" + tuned_text + " (" + std::to_string(down) + " negative)";
    return v;
  }

  Verdict pretrained_vs_init() {
    const PipelineOutcome& f5 = pipeline("F5");
    const CellOutcome& clean = find_cell(f5, "cifar10");
    const CellOutcome& random = find_cell(f5, "random");
    bool clean_ok = true, random_ok = true;
    std::string text = "cifar10 (pretrained/init):";
    for (const std::string& tap : kTaps) {
      const double pre = *cell_aggregate(clean, tap, "final-pretrained").mean;
      const double init = *cell_aggregate(clean, tap, "final-init").mean;
      clean_ok = clean_ok && pre > init;
      text += " " + tap + " " + fixed(pre) + "/" + fixed(init);
    }
    text += "; random:";
    for (const std::string tap : {"block1", "block2"}) {
      const double pre = *cell_aggregate(random, tap, "final-pretrained").mean;
      const double init = *cell_aggregate(random, tap, "final-init").mean;
      random_ok = random_ok && init > pre;
      text += " " + tap + " " + fixed(pre) + "/" + fixed(init);
    }
    return {clean_ok && random_ok, text};
  }

  Verdict cross_domain() {
    const PipelineOutcome& f4c = pipeline("F4c");
    const double svhn = 1.0 - *cell_aggregate(find_cell(f4c, "svhn"), "block4", "final-pretrained").mean;
    const double shift = 1.0 - *cell_aggregate(find_cell(f4c, "cifar10-shift"), "block4", "final-pretrained").mean;
    return {svhn > shift, "block4 change vs pretrained: svhn " + fixed(svhn, 5) + ", shifted labels " + fixed(shift, 5)};
  }

  Verdict determinism() {
    std::vector<fs::path> outs = {work_ / "determinism" / "a", work_ / "determinism" / "b"};
    for (const fs::path& out : outs) {
      fs::remove_all(out);
      fs::create_directories(out);
      const std::string command = "\"" + cli_.string() + "\" reproduce F1 --scale reduced --out \"" + out.string() +
                                  "\" > \"" + (out / "stdout.txt").string() + "\" 2>&1";
      const int status = std::system(command.c_str());
      if (status != 0) return {false, "`repsim reproduce F1 --scale reduced` exited with status " + std::to_string(status)};
    }
    std::size_t csvs = 0;
    std::vector<std::string> differing;
    for (const auto& entry : fs::recursive_directory_iterator(outs[0] / "F1")) {
      if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
      const fs::path rel = fs::relative(entry.path(), outs[0]);
      ++csvs;
      if (!fs::exists(outs[1] / rel) || read_file(entry.path()) != read_file(outs[1] / rel)) {
        differing.push_back(rel.string());
      }
    }
    Verdict v;
    v.passed = csvs >= 2 && differing.empty();
    v.detail = std::to_string(csvs) + " CSV files compared";
    for (const std::string& d : differing) v.detail += "; differs: " + d;
    return v;
  }

 private:
  std::vector<std::uint64_t> seeds() const { return default_seeds(profile_.seeds); }

  const PipelineOutcome& pipeline(const std::string& id) {
    auto it = pipelines_.find(id);
    if (it == pipelines_.end()) {
      it = pipelines_.emplace(id, run_pipeline(id, profile_, seeds(), store_, options_)).first;
    }
    return it->second;
  }

  fs::path work_, data_, cli_;
  Profile profile_;
  DatasetStore store_;
  PipelineOptions options_;
  std::map<std::string, PipelineOutcome> pipelines_;
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Acceptance criteria runner"};
  std::string work = (fs::temp_directory_path() / "repsim_acceptance").string();
  std::string data, cli = REPSIM_CLI_PATH;
  std::vector<int> only;
  app.add_option("--work", work, "Working directory (data, pipeline outputs, summary)")->capture_default_str();
  app.add_option("--data", data, "Existing dataset directory; default: generate a synthetic suite under --work");
  app.add_option("--cli", cli, "repsim executable used for the determinism criterion")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work);
  if (data.empty()) {
    data = (fs::path(work) / "data").string();
    if (!fs::exists(fs::path(data) / "svhn_test.rsds")) {
      synthetic::SuiteSizes sizes;
      sizes.objects_train = 12000;
      sizes.objects_test = 10000;
      sizes.digits_train = 5000;
      sizes.digits_test = 5000;
      log_line("writing synthetic datasets to " + data);
      synthetic::write_suite(data, sizes, 0);
    }
  }
  // The CLI run of the determinism criterion reads the same files.
  ::setenv(kDataRootEnv, data.c_str(), 1);

  Runner runner(work, data, cli, reduced_profile());
  struct Criterion {
    int id;
    std::string name;
    std::function<Verdict()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", [&] { return runner.gradients(); }},
      {2, "forward oracles", [&] { return runner.forward(); }},
      {3, "CKA suite", [&] { return runner.cka(); }},
      {4, "label suite", [&] { return runner.labels(); }},
      {10, "determinism of reproduce F1", [&] { return runner.determinism(); }},
      {5, "memorization of random labels", [&] { return runner.memorization(); }},
      {6, "layer ordering of CKA(final, init)", [&] { return runner.ordering(); }},
      {7, "randomness reversal scratch vs fine-tune", [&] { return runner.reversal(); }},
      {8, "fine-tuned closer to pretrained than init", [&] { return runner.pretrained_vs_init(); }},
      {9, "cross-domain change at block4", [&] { return runner.cross_domain(); }},
  };

  nlohmann::json summary = nlohmann::json::array();
  std::map<int, std::string> lines;
  bool all = true;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    log_line("== criterion " + std::to_string(c.id) + ": " + c.name);
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double elapsed = seconds_since(start);
    all = all && v.passed;
    std::ostringstream line;
    line << "criterion " << std::setw(2) << c.id << "  " << (v.passed ? "PASS" : "FAIL") << "  " << c.name << "  ("
         << v.detail << ")  [" << fixed(elapsed, 0) << " s]";
    lines[c.id] = line.str();
    std::cout << line.str() << std::endl;
    summary.push_back({{"criterion", c.id}, {"name", c.name}, {"passed", v.passed}, {"detail", v.detail},
                       {"seconds", elapsed}});
    write_file_atomic(fs::path(work) / "acceptance.json", summary.dump(2) + "\n");
  }
  std::cout << "\nsummary (criterion order)\n";
  for (const auto& [id, line] : lines) std::cout << line << "\n";
  std::cout << (all ? "acceptance passed" : "acceptance FAILED") << std::endl;
  return all ? 0 : 1;
}
