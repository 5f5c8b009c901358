#pragma once

#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "dlsh/trace_model.hpp"

namespace dlsh::testing {

inline StackTrace make_trace(std::initializer_list<const char*> functions) {
  StackTrace t;
  for (const char* f : functions) t.frames.push_back({f, std::nullopt, std::nullopt});
  return t;
}

inline StackTrace make_trace(const std::vector<std::string>& functions) {
  StackTrace t;
  for (const auto& f : functions) t.frames.push_back({f, std::nullopt, std::nullopt});
  return t;
}

inline CrashReport make_report(std::string id, StackTrace trace) {
  CrashReport r;
  r.id = std::move(id);
  r.trace = std::move(trace);
  return r;
}

/// Traces of 1..max_len frames drawn from a small alphabet of methods spread over a few
/// packages, so that repeats and partial overlaps are common.
class TraceGenerator {
 public:
  TraceGenerator(std::uint64_t seed, std::size_t alphabet = 6, std::size_t max_len = 4)
      : rng_(seed), alphabet_(alphabet), max_len_(max_len) {}

  StackTrace next() {
    std::uniform_int_distribution<std::size_t> len(1, max_len_);
    std::uniform_int_distribution<std::size_t> sym(0, alphabet_ - 1);
    std::vector<std::string> fns;
    const auto n = len(rng_);
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = sym(rng_);
      fns.push_back("org.p" + std::to_string(s % 3) + ".K" + std::to_string(s % 2) + ".m" + std::to_string(s));
    }
    return make_trace(fns);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::size_t alphabet_;
  std::size_t max_len_;
};

}  // namespace dlsh::testing
