#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "repsim/data.hpp"
#include "repsim/runtime.hpp"
#include "repsim/synthetic.hpp"

// Writes procedurally generated RSDS files: a full four-file dataset suite,
// or a single file of one family.
int main(int argc, char** argv) {
  repsim::tune_allocator();
  CLI::App app{"Generate synthetic datasets in the canonical RSDS format"};

  std::string out_dir, single_file, family_name = "objects";
  repsim::synthetic::SuiteSizes sizes;
  std::size_t count = 200;
  std::uint64_t seed = 0;
  app.add_option("--out", out_dir, "Directory for cifar10_{train,test}.rsds and svhn_{train,test}.rsds");
  app.add_option("--objects-train", sizes.objects_train, "Records in cifar10_train.rsds")->capture_default_str();
  app.add_option("--objects-test", sizes.objects_test, "Records in cifar10_test.rsds")->capture_default_str();
  app.add_option("--digits-train", sizes.digits_train, "Records in svhn_train.rsds")->capture_default_str();
  app.add_option("--digits-test", sizes.digits_test, "Records in svhn_test.rsds")->capture_default_str();
  app.add_option("--file", single_file, "Write one file instead of a suite");
  app.add_option("--family", family_name, "objects | digits (with --file)")
      ->check(CLI::IsMember({"objects", "digits"}))
      ->capture_default_str();
  app.add_option("--count", count, "Records (with --file)")->capture_default_str();
  app.add_option("--seed", seed, "Generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
    if (out_dir.empty() == single_file.empty()) throw CLI::ValidationError("exactly one of --out and --file is required");
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!single_file.empty()) {
      const auto family =
          family_name == "objects" ? repsim::synthetic::Family::objects : repsim::synthetic::Family::digits;
      repsim::write_rsds(repsim::synthetic::generate(family, count, seed), single_file);
      std::cout << single_file << "\n";
    } else {
      std::filesystem::create_directories(out_dir);
      for (const auto& path : repsim::synthetic::write_suite(out_dir, sizes, seed)) std::cout << path.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
