#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlsh/lsh_core.hpp"
#include "dlsh/similarity.hpp"
#include "dlsh/trace_model.hpp"

namespace dlsh {

struct Neighbor {
  std::string id;
  double sim = 0;
  bool operator==(const Neighbor&) const = default;
};

/// Historical traces, prepared once for repeated exact scoring.
struct ReferenceCorpus {
  std::vector<std::string> ids;
  std::vector<StackTrace> traces;
  std::vector<PreparedTrace> prepared;

  static ReferenceCorpus from_reports(std::span<const CrashReport> reports);
  std::size_t size() const { return ids.size(); }
};

/// Exact top-k by linear scan: descending similarity, ties by ascending id. `exclude_id`
/// drops the query itself when it belongs to the corpus.
std::vector<Neighbor> knn_oracle(const PreparedTrace& query, const ReferenceCorpus& corpus, MeasureId measure,
                                 const CorpusStats& stats, const MeasureParams& params, std::size_t k,
                                 std::string_view exclude_id = {});

/// Sorts candidates by descending similarity, ties by ascending id.
void sort_by_similarity(std::vector<Neighbor>& neighbors);

/// (1 / (k |Q|)) sum_s sum_{i<=k} 1[nn_i(s) in R_s]. With `require_k_candidates` only
/// queries whose candidate set holds at least k ids count. Throws NoEligibleQueries.
double recall_rate_at_k(std::span<const std::vector<std::string>> true_ranked,
                        std::span<const std::vector<std::string>> candidates, std::size_t k,
                        bool require_k_candidates = true);

/// (1/|Q|) sum_s (1/|R_s|) sum_{s' in R_s} rank(s', R_s) / rank(s', T_s). Candidates must be
/// sorted by the exact measure. An empty R_s, or a candidate missing from T_s, adds 0.
double mean_reciprocal_rank(std::span<const std::vector<std::string>> candidates_ranked,
                            std::span<const std::vector<std::string>> true_ranked);

/// Tie-adjusted Kendall tau-b. Throws LengthMismatch. Returns 0 when either side is constant.
double kendall_tau(std::span<const double> x, std::span<const double> y);
double pearson(std::span<const double> x, std::span<const double> y);

struct GuaranteeScores {
  double precision = 0;
  double recall = 0;
  double fscore = 0;
};

/// Macro-averaged precision over queries with a non-empty candidate set and recall over
/// queries with a non-empty truth set; F is their harmonic mean. Sets are sorted id lists.
GuaranteeScores guarantee_scores(std::span<const std::vector<std::string>> candidates,
                                 std::span<const std::vector<std::string>> truths);

/// Truth sets {q : probability_similarity(sim(s,q), K, L) >= 0.5} by exact scan, then
/// guarantee_scores against the index's candidates.
GuaranteeScores guarantee_metrics(std::span<const CrashReport> queries, const ReferenceCorpus& corpus,
                                  const LshIndex& index, const HashFamily& family, MeasureId measure,
                                  const CorpusStats& stats, const MeasureParams& params);

/// Per-query F-score; queries where both sets are empty yield nullopt.
std::optional<double> query_fscore(const std::vector<std::string>& candidates, const std::vector<std::string>& truth);

struct SweepRow {
  std::size_t L = 0;
  std::size_t K = 0;
  double threshold = 0;  ///< similarity where P_{K,L} = 0.5
  std::vector<double> fscores;
  double median = 0;
  double q1 = 0;
  double q3 = 0;
  bool excluded = false;
  std::string reason;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::size_t selected_L = 0;
  std::size_t selected_K = 0;

  std::string to_csv() const;
};

struct SweepRules {
  double min_threshold = 0.3;
  double max_threshold = 0.95;
  double max_iqr = 0.3;
};

/// Linear-interpolated quantile of sorted data (q in [0,1]).
double quantile(std::span<const double> sorted, double q);

/// Applies the exclusion rules to rows whose F-score distributions are filled in and
/// selects the admissible row with the highest median (first in grid order on ties).
/// Throws AllCombinationsExcluded.
void select_lk(SweepResult& result, const SweepRules& rules = {});

/// Builds one index per (L,K) from the corpus codes and fills each row's F-scores (one per
/// query with a non-empty candidate or truth set) without selecting.
SweepResult score_lk(std::span<const CrashReport> queries, const ReferenceCorpus& corpus, const HashFamily& family,
                     MeasureId measure, const CorpusStats& stats, const MeasureParams& params,
                     std::span<const std::pair<std::size_t, std::size_t>> grid);

/// Builds one index per (L,K) from the corpus codes, scores each query's F-score against
/// its P_{K,L} >= 0.5 truth set and selects a combination. Throws DomainError on an empty grid.
SweepResult sweep_lk(std::span<const CrashReport> queries, const ReferenceCorpus& corpus, const HashFamily& family,
                     MeasureId measure, const CorpusStats& stats, const MeasureParams& params,
                     std::span<const std::pair<std::size_t, std::size_t>> grid, const SweepRules& rules = {});

struct BenchResult {
  double lsh_mean_seconds = 0;   ///< per query: hash, bucket union, exact re-ranking
  double scan_mean_seconds = 0;  ///< per query: exact linear scan
  std::size_t repetitions = 0;
  std::size_t queries = 0;
  double mean_candidates = 0;
};

BenchResult bench(std::span<const CrashReport> queries, const ReferenceCorpus& corpus, const LshIndex& index,
                  const HashFamily& family, MeasureId measure, const CorpusStats& stats,
                  const MeasureParams& params, std::size_t repetitions = 3, std::size_t scan_k = 10);

struct EvalReport {
  std::map<std::size_t, double> rr_at_k;
  double mrr = 0;
  double kendall_tau = 0;
  GuaranteeScores guarantee;
  double mean_query_latency = 0;
  double linear_scan_latency = 0;
  std::size_t n_queries = 0;

  std::string to_json() const;
};

struct EvalOptions {
  std::vector<std::size_t> ks{1, 5};
  bool require_k_candidates = true;
  std::size_t bench_repetitions = 3;
};

/// Runs the retrieval protocol for queries against a reference corpus indexed by `index`.
/// Kendall tau compares block-Hamming similarity of codes with exact similarity over all
/// (query, reference) pairs.
EvalReport evaluate(std::span<const CrashReport> queries, const ReferenceCorpus& corpus, const LshIndex& index,
                    const HashFamily& family, MeasureId measure, const CorpusStats& stats,
                    const MeasureParams& params, const EvalOptions& options = {});

}  // namespace dlsh
