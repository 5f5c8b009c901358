#include "dlsh/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "dlsh/errors.hpp"

namespace dlsh {

namespace {

struct FrameSource {
  const SyntheticConfig& config;
  std::mt19937_64& rng;

  std::string random_function() {
    std::uniform_int_distribution<std::size_t> pkg(0, config.n_packages - 1);
    std::uniform_int_distribution<std::size_t> cls(0, config.classes_per_package - 1);
    std::uniform_int_distribution<std::size_t> mth(0, config.methods_per_class - 1);
    const auto p = pkg(rng);
    const auto c = cls(rng);
    const auto m = mth(rng);
    return "com.synth.p" + std::to_string(p) + ".C" + std::to_string(p) + "x" + std::to_string(c) + ".m" +
           std::to_string(m);
  }

  StackFrame frame(const std::string& function) {
    std::uniform_int_distribution<std::uint32_t> line(10, 900);
    const auto dot = function.rfind('.');
    const auto cls_start = function.rfind('.', dot - 1) + 1;
    return {function, function.substr(cls_start, dot - cls_start) + ".java", line(rng)};
  }
};

}  // namespace

std::vector<CrashReport> generate_corpus(const SyntheticConfig& config) {
  if (config.n_traces == 0 || config.family_size == 0) throw DomainError("synthetic corpus needs traces and families");
  if (config.min_depth < 1 || config.min_depth > config.max_depth || config.min_tail > config.max_tail) {
    throw DomainError("bad synthetic depth ranges");
  }
  if (config.n_packages == 0 || config.classes_per_package == 0 || config.methods_per_class == 0) {
    throw DomainError("synthetic frame universe is empty");
  }
  std::mt19937_64 rng(config.seed);
  FrameSource source{config, rng};

  std::vector<std::vector<std::string>> tails(std::max<std::size_t>(config.n_tails, 1));
  std::uniform_int_distribution<std::size_t> tail_len(config.min_tail, config.max_tail);
  for (std::size_t t = 0; t < tails.size(); ++t) {
    const auto len = config.n_tails == 0 ? 0 : tail_len(rng);
    for (std::size_t i = 0; i < len; ++i) tails[t].push_back("com.synth.framework.Stage" + std::to_string(t) + ".step" + std::to_string(i));
  }

  std::vector<std::string> root;
  for (std::size_t i = 0; i < config.root_depth; ++i) root.push_back("java.lang.runtime.Entry" + std::to_string(i) + ".run");

  const std::size_t n_families = (config.n_traces + config.family_size - 1) / config.family_size;
  struct Family {
    std::vector<std::string> core;
    std::size_t tail;
  };
  std::vector<Family> families(n_families);
  std::uniform_int_distribution<std::size_t> depth(config.min_depth, config.max_depth);
  std::uniform_int_distribution<std::size_t> pick_tail(0, tails.size() - 1);
  for (auto& f : families) {
    const auto d = depth(rng);
    for (std::size_t i = 0; i < d; ++i) f.core.push_back(source.random_function());
    f.tail = pick_tail(rng);
  }

  std::bernoulli_distribution mutate(config.mutation_rate);
  std::bernoulli_distribution other_tail(0.2);
  std::uniform_int_distribution<std::size_t> pick_family(0, n_families - 1);
  std::vector<CrashReport> reports;
  reports.reserve(config.n_traces);
  for (std::size_t n = 0; n < config.n_traces; ++n) {
    // The first pass guarantees every family at least one member.
    const std::size_t fam = n < n_families ? n : pick_family(rng);
    const auto& family = families[fam];
    std::vector<std::string> functions;
    for (const auto& fn : family.core) {
      if (mutate(rng)) {
        switch (rng() % 3) {
          case 0:  // substitute
            functions.push_back(source.random_function());
            break;
          case 1:  // delete
            break;
          default:  // insert before
            functions.push_back(source.random_function());
            functions.push_back(fn);
            break;
        }
      } else {
        functions.push_back(fn);
      }
    }
    if (functions.empty()) functions.push_back(family.core.front());
    const auto& tail = tails[other_tail(rng) ? pick_tail(rng) : family.tail];
    functions.insert(functions.end(), tail.begin(), tail.end());
    functions.insert(functions.end(), root.begin(), root.end());

    CrashReport report;
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%06zu", config.id_prefix.c_str(), n);
    report.id = id;
    report.functionality = "family-" + std::to_string(fam);
    report.error_type = "ERROR";
    for (const auto& fn : functions) report.trace.frames.push_back(source.frame(fn));
    if (report.trace.frames.size() > kDefaultMaxFrames) report.trace.frames.resize(kDefaultMaxFrames);
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace dlsh
