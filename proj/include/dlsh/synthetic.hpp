#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlsh/trace_model.hpp"

namespace dlsh {

/// Generator of JVM-style crash corpora with near-duplicate families. Each family is a
/// core frame sequence; members are mutated copies (frame substitutions, insertions,
/// deletions, new line numbers) over one of a few shared framework tails, and every trace
/// ends in the same runtime entry frames.
struct SyntheticConfig {
  std::size_t n_traces = 200;
  std::size_t family_size = 8;  ///< mean members per family; families = ceil(n / size)
  std::size_t n_packages = 30;
  std::size_t classes_per_package = 6;
  std::size_t methods_per_class = 5;
  std::size_t min_depth = 4;  ///< core length range
  std::size_t max_depth = 10;
  std::size_t n_tails = 6;  ///< shared outermost call chains
  std::size_t min_tail = 2;
  std::size_t max_tail = 5;
  std::size_t root_depth = 3;  ///< thread-entry frames closing every trace
  double mutation_rate = 0.15;
  std::uint64_t seed = 1;
  std::string id_prefix = "syn";
};

/// Reports carry ids "<prefix>-NNNNNN" and their family label in `functionality`.
std::vector<CrashReport> generate_corpus(const SyntheticConfig& config);

}  // namespace dlsh
