// dlsh: ingest crash reports, train encoders, build and query LSH indexes, evaluate.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dlsh/classic_hashers.hpp"
#include "dlsh/deep_encoder.hpp"
#include "dlsh/errors.hpp"
#include "dlsh/evaluation.hpp"
#include "dlsh/lsh_core.hpp"
#include "dlsh/synthetic.hpp"
#include "dlsh/trace_model.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode : int { kOk = 0, kOther = 1, kInput = 2, kTraining = 3, kIndexing = 4, kQuerying = 5 };

/// An error tagged with the exit code of the stage it escaped from.
struct StageError {
  int code;
  std::string message;
};

template <typename F>
auto stage(int code, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError{code, e.what()};
  }
}

json default_config() {
  const dlsh::MeasureParams mp;
  const dlsh::LshParams lp;
  const dlsh::EncoderConfig ec;
  const dlsh::LossConfig lc;
  const dlsh::TrainConfig tc;
  return {
      {"corpus", ""},
      {"stats", ""},
      {"model", ""},
      {"index", ""},
      {"queries", ""},
      {"out", "dlsh_out"},
      {"seed", 0},
      {"strict", false},
      {"max_frames", dlsh::kDefaultMaxFrames},
      {"measure", "EditSim"},
      {"measure_params",
       {{"pdm_c", mp.pdm_c},
        {"pdm_o", mp.pdm_o},
        {"tracesim_alpha", mp.tracesim_alpha},
        {"tracesim_beta", mp.tracesim_beta},
        {"tracesim_gamma", mp.tracesim_gamma},
        {"moroo_weight", mp.moroo_weight},
        {"durfex_n", mp.durfex_n}}},
      {"lsh", {{"M", lp.M}, {"K", lp.K}, {"L", lp.L}, {"b", lp.b}}},
      {"family", "deep"},
      {"simhash_weighting", "counts"},
      {"encoder", {{"kernel_sizes", ec.kernel_sizes}, {"filters_per_size", ec.filters_per_size}, {"max_len", ec.max_len}}},
      {"loss", {{"lambda1", lc.lambda1}, {"lambda2", lc.lambda2}, {"lambda3", lc.lambda3}}},
      {"train",
       {{"epochs", tc.epochs},
        {"batch_size", tc.batch_size},
        {"learning_rate", tc.learning_rate},
        {"plateau_factor", tc.plateau_factor},
        {"max_pairs", 0},
        {"validation_fraction", 0.0}}},
      {"query", {{"top_k", 10}}},
      {"eval", {{"n_queries", 100}, {"ks", {1, 5}}, {"require_k_candidates", true}, {"bench_repetitions", 3}}},
      {"sweep", {{"grid", json::array()}, {"min_threshold", 0.3}, {"max_threshold", 0.95}, {"max_iqr", 0.3}}},
      {"bench", {{"sizes", json::array()}, {"n_queries", 50}, {"repetitions", 3}, {"synthetic", false}}},
      {"synthetic", {{"family_size", 8}, {"mutation_rate", 0.15}}},
  };
}

/// Flags shared by every subcommand. Unset optionals leave the config file's value.
struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> measure;
  std::optional<std::size_t> L, K, M, b;
  bool strict = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--measure", f.measure, "similarity measure");
  cmd->add_option("--L", f.L, "number of hash tables");
  cmd->add_option("--K", f.K, "hash functions per table");
  cmd->add_option("--M", f.M, "hash functions in the family");
  cmd->add_option("--b", f.b, "bits per hash function");
  cmd->add_flag("--strict", f.strict, "treat malformed records as errors");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dlsh::Error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw dlsh::Error("cannot write " + path.string());
  out << text;
}

/// Fully resolved settings for one run.
struct RunConfig {
  json doc;
  fs::path out;
  std::uint64_t seed = 0;
  bool strict = false;
  dlsh::MeasureId measure = dlsh::MeasureId::EditSim;
  dlsh::MeasureParams measure_params;
  dlsh::LshParams lsh;
  dlsh::EncoderConfig encoder;
  dlsh::LossConfig loss;
  dlsh::TrainConfig train;

  fs::path path_or(const char* key, const char* fallback) const {
    const auto v = doc.at(key).get<std::string>();
    return v.empty() ? out / fallback : fs::path(v);
  }
  fs::path corpus() const { return path_or("corpus", "corpus.jsonl"); }
  fs::path stats() const { return path_or("stats", "stats.json"); }
  fs::path model() const { return path_or("model", "model.dlshm"); }
  fs::path index() const { return path_or("index", "index.dlsh"); }
  dlsh::ParseOptions parse_options() const { return {strict, doc.at("max_frames").get<std::size_t>()}; }

  void snapshot(std::string_view command) const {
    fs::create_directories(out);
    write_file(out / (std::string(command) + ".config.json"), doc.dump(2) + "\n");
  }
};

RunConfig resolve(const CommonFlags& flags) {
  RunConfig rc;
  rc.doc = default_config();
  if (!flags.config_path.empty()) {
    json user;
    try {
      user = json::parse(read_file(flags.config_path));
    } catch (const json::exception& e) {
      throw dlsh::Error(std::string("config: ") + e.what());
    }
    rc.doc.merge_patch(user);
  }
  auto& d = rc.doc;
  if (flags.seed) d["seed"] = *flags.seed;
  if (flags.out) d["out"] = *flags.out;
  if (flags.measure) d["measure"] = *flags.measure;
  if (flags.L) d["lsh"]["L"] = *flags.L;
  if (flags.K) d["lsh"]["K"] = *flags.K;
  if (flags.M) d["lsh"]["M"] = *flags.M;
  if (flags.b) d["lsh"]["b"] = *flags.b;
  if (flags.strict) d["strict"] = true;

  try {
    rc.out = d.at("out").get<std::string>();
    rc.seed = d.at("seed").get<std::uint64_t>();
    rc.strict = d.at("strict").get<bool>();
    rc.measure = dlsh::measure_from_string(d.at("measure").get<std::string>());
    const auto& mp = d.at("measure_params");
    rc.measure_params.pdm_c = mp.at("pdm_c").get<double>();
    rc.measure_params.pdm_o = mp.at("pdm_o").get<double>();
    rc.measure_params.tracesim_alpha = mp.at("tracesim_alpha").get<double>();
    rc.measure_params.tracesim_beta = mp.at("tracesim_beta").get<double>();
    rc.measure_params.tracesim_gamma = mp.at("tracesim_gamma").get<double>();
    rc.measure_params.moroo_weight = mp.at("moroo_weight").get<double>();
    rc.measure_params.durfex_n = mp.at("durfex_n").get<int>();
    const auto& l = d.at("lsh");
    rc.lsh = {l.at("M").get<std::size_t>(), l.at("K").get<std::size_t>(), l.at("L").get<std::size_t>(),
              l.at("b").get<std::size_t>()};
    const auto& e = d.at("encoder");
    rc.encoder.kernel_sizes = e.at("kernel_sizes").get<std::vector<std::size_t>>();
    rc.encoder.filters_per_size = e.at("filters_per_size").get<std::size_t>();
    rc.encoder.max_len = e.at("max_len").get<std::size_t>();
    rc.encoder.M = rc.lsh.M;
    rc.encoder.b = rc.lsh.b;
    const auto& lo = d.at("loss");
    rc.loss = {lo.at("lambda1").get<double>(), lo.at("lambda2").get<double>(), lo.at("lambda3").get<double>()};
    const auto& t = d.at("train");
    rc.train.epochs = t.at("epochs").get<std::size_t>();
    rc.train.batch_size = t.at("batch_size").get<std::size_t>();
    rc.train.learning_rate = t.at("learning_rate").get<double>();
    rc.train.plateau_factor = t.at("plateau_factor").get<double>();
    rc.train.seed = rc.seed;
  } catch (const json::exception& e) {
    throw dlsh::Error(std::string("config: ") + e.what());
  }
  rc.measure_params.validate();
  rc.loss.validate();
  rc.train.validate();
  auto probe = rc.encoder;
  probe.vocab_size = 1;
  probe.validate();
  return rc;
}

std::vector<dlsh::CrashReport> load_corpus(const RunConfig& rc, const fs::path& path,
                                           bool require_non_empty = true) {
  std::vector<std::string> warnings;
  auto reports = dlsh::read_corpus(path, rc.parse_options(), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (require_non_empty && reports.empty()) throw dlsh::EmptyCorpus(path.string() + " holds no valid reports");
  return reports;
}

std::shared_ptr<const dlsh::CorpusStats> load_or_build_stats(const RunConfig& rc,
                                                             std::span<const dlsh::CrashReport> reports) {
  if (fs::exists(rc.stats())) {
    return std::make_shared<const dlsh::CorpusStats>(dlsh::CorpusStats::from_json(read_file(rc.stats())));
  }
  return std::make_shared<const dlsh::CorpusStats>(dlsh::build_corpus(reports));
}

dlsh::Weighting weighting_of(const RunConfig& rc) {
  const auto w = rc.doc.at("simhash_weighting").get<std::string>();
  if (w == "counts") return dlsh::Weighting::Counts;
  if (w == "tfidf") return dlsh::Weighting::Tfidf;
  throw dlsh::Error("simhash_weighting must be 'counts' or 'tfidf'");
}

/// Family named by the configuration, built fresh.
std::unique_ptr<dlsh::HashFamily> make_family(const RunConfig& rc, const std::string& kind,
                                              std::shared_ptr<const dlsh::CorpusStats> stats) {
  if (kind == "minhash") return std::make_unique<dlsh::MinHashFamily>(rc.lsh.M, rc.lsh.b, rc.seed);
  if (kind == "simhash") {
    return std::make_unique<dlsh::SimHashFamily>(std::move(stats), rc.lsh.M, rc.lsh.b, rc.seed, weighting_of(rc));
  }
  if (kind == "deep") return std::make_unique<dlsh::DeepLshFamily>(dlsh::DeepLshModel::load(rc.model()));
  throw dlsh::Error("unknown family '" + kind + "' (deep, minhash or simhash)");
}

/// Family described by an index header; the index's fingerprint check happens later.
std::unique_ptr<dlsh::HashFamily> family_from_spec(const RunConfig& rc, const std::string& spec_text,
                                                   std::shared_ptr<const dlsh::CorpusStats> stats) {
  const auto spec = json::parse(spec_text);
  const auto type = spec.at("type").get<std::string>();
  const auto seed = spec.at("seed").get<std::uint64_t>();
  const auto M = spec.at("M").get<std::size_t>();
  const auto b = spec.at("b").get<std::size_t>();
  if (type == "minhash") return std::make_unique<dlsh::MinHashFamily>(M, b, seed);
  if (type == "simhash") {
    if (stats->digest() != spec.at("vocabulary_digest").get<std::string>()) {
      throw dlsh::FamilyMismatch("corpus statistics differ from the ones the index was built with");
    }
    const auto w = spec.at("weighting").get<std::string>() == "tfidf" ? dlsh::Weighting::Tfidf : dlsh::Weighting::Counts;
    return std::make_unique<dlsh::SimHashFamily>(std::move(stats), M, b, seed, w);
  }
  if (type == "deep") return std::make_unique<dlsh::DeepLshFamily>(dlsh::DeepLshModel::load(rc.model()));
  throw dlsh::FormatError("index header names unknown family '" + type + "'");
}

/// Reference traces in the index's id order.
dlsh::ReferenceCorpus aligned_corpus(const dlsh::LshIndex& index, std::span<const dlsh::CrashReport> reports) {
  std::unordered_map<std::string_view, const dlsh::CrashReport*> by_id;
  for (const auto& r : reports) by_id.emplace(r.id, &r);
  dlsh::ReferenceCorpus corpus;
  for (const auto& id : index.ids()) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw dlsh::FamilyMismatch("index holds id '" + id + "' missing from the corpus");
    corpus.ids.push_back(id);
    corpus.traces.push_back(it->second->trace);
    corpus.prepared.push_back(dlsh::prepare(it->second->trace));
  }
  return corpus;
}

std::vector<dlsh::CrashReport> queries_for(const RunConfig& rc, const std::string& queries_flag,
                                           std::span<const dlsh::CrashReport> corpus) {
  std::string path = queries_flag.empty() ? rc.doc.at("queries").get<std::string>() : queries_flag;
  if (!path.empty()) return load_corpus(rc, path);
  const auto n = std::min(rc.doc.at("eval").at("n_queries").get<std::size_t>(), corpus.size());
  return {corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(n)};
}

// --- commands ---------------------------------------------------------------------

int cmd_ingest(const RunConfig& rc, const std::string& input, std::size_t synthetic) {
  rc.snapshot("ingest");
  auto reports = stage(kInput, [&] {
    if (synthetic > 0) {
      dlsh::SyntheticConfig sc;
      sc.n_traces = synthetic;
      sc.seed = rc.seed;
      sc.family_size = rc.doc.at("synthetic").at("family_size").get<std::size_t>();
      sc.mutation_rate = rc.doc.at("synthetic").at("mutation_rate").get<double>();
      return dlsh::generate_corpus(sc);
    }
    if (input.empty()) throw dlsh::Error("ingest needs an input file or --synthetic N");
    return load_corpus(rc, input);
  });
  const auto stats = stage(kInput, [&] { return dlsh::build_corpus(reports); });
  dlsh::write_corpus(rc.out / "corpus.jsonl", reports);
  write_file(rc.out / "stats.json", stats.to_json());
  std::cout << "reports " << reports.size() << "\nvocabulary " << stats.vocabulary_size() << "\n";
  return kOk;
}

int cmd_train(RunConfig rc) {
  rc.snapshot("train");
  return stage(kTraining, [&] {
    auto reports = load_corpus(rc, rc.corpus());
    const auto stats = load_or_build_stats(rc, reports);
    rc.encoder.vocab_size = stats->vocabulary_size();
    const auto& t = rc.doc.at("train");
    const double val_fraction = t.at("validation_fraction").get<double>();
    if (!(val_fraction >= 0 && val_fraction < 1)) throw dlsh::DomainError("validation_fraction must lie in [0,1)");
    const auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(reports.size()));
    const std::span<const dlsh::CrashReport> all(reports);
    const auto train_part = all.first(reports.size() - n_val);
    const auto max_pairs = t.at("max_pairs").get<std::size_t>();

    const auto training = dlsh::make_pair_set(train_part, rc.measure, *stats, rc.measure_params,
                                              rc.encoder.max_len, max_pairs, rc.seed);
    std::optional<dlsh::PairSet> validation;
    if (n_val >= 2) {
      validation = dlsh::make_pair_set(all.last(n_val), rc.measure, *stats, rc.measure_params, rc.encoder.max_len,
                                       max_pairs, rc.seed + 1);
    }
    std::ofstream log(rc.out / "train_log.jsonl", std::ios::trunc);
    const auto started = std::chrono::steady_clock::now();
    auto result = dlsh::train(rc.encoder, rc.loss, rc.train, training, validation ? &*validation : nullptr,
                              [&](const dlsh::EpochLog& e) {
                                json line = {{"epoch", e.epoch},
                                             {"train_loss", e.train_loss},
                                             {"learning_rate", e.learning_rate}};
                                line["validation_loss"] = std::isnan(e.validation_loss) ? json(nullptr) : json(e.validation_loss);
                                log << line.dump() << "\n" << std::flush;
                                std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << "\n";
                              });
    dlsh::DeepLshModel model;
    model.config = rc.encoder;
    model.params = std::move(result.params);
    model.vocabulary = stats->tokens();
    model.seed = rc.seed;
    model.measure = std::string(dlsh::to_string(rc.measure));
    const auto path = rc.out / "model.dlshm";
    model.save(path);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::cout << "model " << path.string() << "\ndigest " << model.digest() << "\npairs " << training.pairs.size()
              << "\nseconds " << seconds << "\n";
    return kOk;
  });
}

int cmd_index(const RunConfig& rc, const std::string& family_kind) {
  rc.snapshot("index");
  const auto reports = stage(kInput, [&] { return load_corpus(rc, rc.corpus()); });
  return stage(kIndexing, [&] {
    const auto stats = load_or_build_stats(rc, reports);
    const auto family = make_family(rc, family_kind, stats);
    const auto index = dlsh::LshIndex::build(*family, reports, rc.lsh);
    const auto path = rc.out / "index.dlsh";
    index.save(path);
    std::cout << "index " << path.string() << "\nfamily " << family->kind() << "\nfingerprint "
              << family->fingerprint() << "\ntraces " << index.size() << "\n";
    return kOk;
  });
}

int cmd_query(const RunConfig& rc, const std::string& queries_path, std::size_t top_k) {
  rc.snapshot("query");
  const auto queries = stage(kInput, [&] { return load_corpus(rc, queries_path, false); });
  return stage(kQuerying, [&] {
    const auto index = dlsh::LshIndex::load(rc.index());
    const auto reports = load_corpus(rc, rc.corpus());
    const auto stats = load_or_build_stats(rc, reports);
    const auto family = family_from_spec(rc, index.family_spec(), stats);
    index.check_family(*family);
    const auto corpus = aligned_corpus(index, reports);
    std::ofstream out(rc.out / "query_results.jsonl", std::ios::trunc);
    for (const auto& q : queries) {
      auto ranked = index.query_ranked(q.trace, *family, rc.measure, *stats, rc.measure_params, corpus.prepared, q.id);
      if (top_k > 0 && ranked.size() > top_k) ranked.resize(top_k);
      json cands = json::array();
      for (const auto& [id, sim] : ranked) cands.push_back({{"id", id}, {"sim", sim}});
      out << json{{"query", q.id}, {"candidates", cands}}.dump() << "\n";
    }
    std::cout << "queries " << queries.size() << "\nresults " << (rc.out / "query_results.jsonl").string() << "\n";
    return kOk;
  });
}

int cmd_eval(const RunConfig& rc, const std::string& queries_flag) {
  rc.snapshot("eval");
  const auto reports = stage(kInput, [&] { return load_corpus(rc, rc.corpus()); });
  const auto queries = stage(kInput, [&] { return queries_for(rc, queries_flag, reports); });
  const auto index = stage(kIndexing, [&] { return dlsh::LshIndex::load(rc.index()); });
  const auto stats = stage(kInput, [&] { return load_or_build_stats(rc, reports); });
  const auto family = stage(kQuerying, [&] {
    auto f = family_from_spec(rc, index.family_spec(), stats);
    index.check_family(*f);
    return f;
  });
  const auto corpus = stage(kQuerying, [&] { return aligned_corpus(index, reports); });
  dlsh::EvalOptions options;
  const auto& e = rc.doc.at("eval");
  options.ks = e.at("ks").get<std::vector<std::size_t>>();
  options.require_k_candidates = e.at("require_k_candidates").get<bool>();
  options.bench_repetitions = e.at("bench_repetitions").get<std::size_t>();
  const auto report = dlsh::evaluate(queries, corpus, index, *family, rc.measure, *stats, rc.measure_params, options);
  write_file(rc.out / "eval_report.json", report.to_json() + "\n");
  std::cout << report.to_json() << "\n";
  return kOk;
}

std::vector<std::pair<std::size_t, std::size_t>> default_grid(std::size_t M) {
  std::vector<std::pair<std::size_t, std::size_t>> grid;
  for (std::size_t K = 1; K <= M; K *= 2) grid.emplace_back(M / K, K);
  return grid;
}

int cmd_sweep(const RunConfig& rc, const std::string& queries_flag, const std::string& family_kind) {
  rc.snapshot("sweep");
  const auto reports = stage(kInput, [&] { return load_corpus(rc, rc.corpus()); });
  const auto queries = stage(kInput, [&] { return queries_for(rc, queries_flag, reports); });
  const auto stats = stage(kInput, [&] { return load_or_build_stats(rc, reports); });
  const auto family = stage(kIndexing, [&] { return make_family(rc, family_kind, stats); });
  const auto& s = rc.doc.at("sweep");
  auto grid = s.at("grid").get<std::vector<std::pair<std::size_t, std::size_t>>>();
  if (grid.empty()) grid = default_grid(family->num_functions());
  const dlsh::SweepRules rules{s.at("min_threshold").get<double>(), s.at("max_threshold").get<double>(),
                               s.at("max_iqr").get<double>()};
  const auto corpus = dlsh::ReferenceCorpus::from_reports(reports);
  auto result = dlsh::score_lk(queries, corpus, *family, rc.measure, *stats, rc.measure_params, grid);
  try {
    dlsh::select_lk(result, rules);
  } catch (const dlsh::AllCombinationsExcluded&) {
    write_file(rc.out / "sweep.csv", result.to_csv());
    throw;
  }
  write_file(rc.out / "sweep.csv", result.to_csv());
  std::cout << result.to_csv() << "selected L=" << result.selected_L << " K=" << result.selected_K << "\n";
  return kOk;
}

int cmd_bench(const RunConfig& rc, const std::string& family_kind) {
  rc.snapshot("bench");
  const auto& bc = rc.doc.at("bench");
  auto sizes = bc.at("sizes").get<std::vector<std::size_t>>();
  const bool synthetic = bc.at("synthetic").get<bool>();
  const auto n_queries = bc.at("n_queries").get<std::size_t>();
  std::vector<dlsh::CrashReport> pool;
  if (!synthetic) pool = stage(kInput, [&] { return load_corpus(rc, rc.corpus()); });
  if (sizes.empty()) sizes.push_back(pool.size());

  std::ostringstream table;
  table << "size,queries,repetitions,mean_candidates,lsh_seconds,scan_seconds,speedup\n";
  for (auto size : sizes) {
    std::vector<dlsh::CrashReport> reports;
    if (synthetic) {
      dlsh::SyntheticConfig sc;
      sc.n_traces = size + n_queries;
      sc.seed = rc.seed;
      sc.family_size = rc.doc.at("synthetic").at("family_size").get<std::size_t>();
      sc.mutation_rate = rc.doc.at("synthetic").at("mutation_rate").get<double>();
      reports = dlsh::generate_corpus(sc);
    } else {
      if (size > pool.size()) throw StageError{kInput, "bench size exceeds the corpus"};
      reports.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(size));
    }
    const std::span<const dlsh::CrashReport> all(reports);
    const auto queries = synthetic ? all.last(n_queries) : all.first(std::min(n_queries, all.size()));
    const auto history = synthetic ? all.first(size) : all;
    const auto stats = std::make_shared<const dlsh::CorpusStats>(dlsh::build_corpus(history));
    const auto family = stage(kIndexing, [&] { return make_family(rc, family_kind, stats); });
    const auto index = stage(kIndexing, [&] { return dlsh::LshIndex::build(*family, history, rc.lsh); });
    const auto corpus = dlsh::ReferenceCorpus::from_reports(history);
    const auto r = dlsh::bench(queries, corpus, index, *family, rc.measure, *stats, rc.measure_params,
                               bc.at("repetitions").get<std::size_t>());
    table << size << ',' << r.queries << ',' << r.repetitions << ',' << r.mean_candidates << ',' << r.lsh_mean_seconds
          << ',' << r.scan_mean_seconds << ',' << r.scan_mean_seconds / r.lsh_mean_seconds << '\n';
  }
  write_file(rc.out / "bench.csv", table.str());
  std::cout << table.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locality-sensitive hashing for crash report deduplication"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string input, queries, family = "deep";
  std::size_t synthetic = 0;
  std::optional<std::size_t> top_k;
  std::vector<std::size_t> sizes;
  bool bench_synthetic = false;

  auto* ingest = app.add_subcommand("ingest", "parse a JSONL corpus and compute frame statistics");
  ingest->add_option("input", input, "JSONL crash reports");
  ingest->add_option("--synthetic", synthetic, "generate N synthetic reports instead of reading input");
  auto* train = app.add_subcommand("train", "train a deep hash family on the corpus");
  auto* index = app.add_subcommand("index", "hash the corpus into L tables");
  index->add_option("--family", family, "deep, minhash or simhash");
  auto* query = app.add_subcommand("query", "rank indexed candidates for each query report");
  query->add_option("queries", queries, "JSONL query reports")->required();
  query->add_option("--top-k", top_k, "keep at most k candidates per query (0 keeps all)");
  auto* eval = app.add_subcommand("eval", "retrieval metrics for a query split");
  eval->add_option("--queries", queries, "JSONL query reports (default: leading corpus reports)");
  auto* sweep = app.add_subcommand("sweep", "F-score distributions over (L,K) and a selected combination");
  sweep->add_option("--queries", queries, "JSONL query reports");
  sweep->add_option("--family", family, "deep, minhash or simhash");
  auto* bench = app.add_subcommand("bench", "LSH against linear-scan query latency");
  bench->add_option("--sizes", sizes, "corpus sizes")->delimiter(',');
  bench->add_option("--family", family, "deep, minhash or simhash");
  bench->add_flag("--synthetic", bench_synthetic, "benchmark generated corpora");
  for (auto* cmd : {ingest, train, index, query, eval, sweep, bench}) add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    RunConfig rc = stage(kInput, [&] { return resolve(flags); });
    if (*ingest) return cmd_ingest(rc, input, synthetic);
    if (*train) return cmd_train(rc);
    if (*index) return cmd_index(rc, family);
    if (*query) return cmd_query(rc, queries, top_k.value_or(rc.doc.at("query").at("top_k").get<std::size_t>()));
    if (*eval) return cmd_eval(rc, queries);
    if (*sweep) return cmd_sweep(rc, queries, family);
    if (*bench) {
      if (!sizes.empty()) rc.doc["bench"]["sizes"] = sizes;
      if (bench_synthetic) rc.doc["bench"]["synthetic"] = true;
      return cmd_bench(rc, family);
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
