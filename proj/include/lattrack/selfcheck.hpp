#pragma once

// Invariant suite runnable from the CLI: small models, random inputs, no
// dataset needed.

#include <cstdint>
#include <string>
#include <vector>

#include "lattrack/model.hpp"

namespace lattrack {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Small configuration used by the invariant checks and unit tests.
ModelConfig tiny_model_config();
/// Untrained, frozen codec for tiny_model_config().
Codec tiny_codec(std::uint64_t seed);

std::vector<CheckResult> run_selfcheck(std::uint64_t seed = 0, bool quick = false);

}  // namespace lattrack
