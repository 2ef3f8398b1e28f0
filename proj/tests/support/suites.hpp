#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Property and oracle suites shared by the acceptance runner and the CLI
// self-test. Each entry reports one check with its worst observed error.
namespace repsim::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Analytic vs central-difference gradients for every layer primitive, the
/// loss, and the whole network on a reduced geometry.
std::vector<CheckResult> gradient_suite(std::uint64_t seed, std::size_t instances = 100);

/// conv2d, linear and maxpool2x2 forward against loop oracles.
std::vector<CheckResult> forward_suite(std::uint64_t seed, std::size_t instances = 100);

/// Linear CKA: self-similarity, invariances, symmetry, Gram vs feature form.
std::vector<CheckResult> cka_suite(std::uint64_t seed);

/// Label transforms: identity at d = 0, sampler distribution, shift inverses.
std::vector<CheckResult> label_suite(std::uint64_t seed);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace repsim::checks
