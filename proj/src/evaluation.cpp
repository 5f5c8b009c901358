#include "dlsh/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "dlsh/errors.hpp"
#include "json.hpp"

namespace dlsh {

using nlohmann::json;

ReferenceCorpus ReferenceCorpus::from_reports(std::span<const CrashReport> reports) {
  ReferenceCorpus corpus;
  corpus.ids.reserve(reports.size());
  corpus.traces.reserve(reports.size());
  corpus.prepared.reserve(reports.size());
  for (const auto& r : reports) {
    corpus.ids.push_back(r.id);
    corpus.traces.push_back(r.trace);
    corpus.prepared.push_back(prepare(r.trace));
  }
  return corpus;
}

void sort_by_similarity(std::vector<Neighbor>& neighbors) {
  std::sort(neighbors.begin(), neighbors.end(), [](const Neighbor& x, const Neighbor& y) {
    if (x.sim != y.sim) return x.sim > y.sim;
    return x.id < y.id;
  });
}

std::vector<Neighbor> knn_oracle(const PreparedTrace& query, const ReferenceCorpus& corpus, MeasureId measure,
                                 const CorpusStats& stats, const MeasureParams& params, std::size_t k,
                                 std::string_view exclude_id) {
  if (k < 1) throw DomainError("k must be >= 1");
  std::vector<Neighbor> all;
  all.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!exclude_id.empty() && corpus.ids[i] == exclude_id) continue;
    all.push_back({corpus.ids[i], similarity(measure, query, corpus.prepared[i], stats, params)});
  }
  auto by_rank = [](const Neighbor& x, const Neighbor& y) {
    if (x.sim != y.sim) return x.sim > y.sim;
    return x.id < y.id;
  };
  if (k < all.size()) {
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), by_rank);
    all.resize(k);
  } else {
    std::sort(all.begin(), all.end(), by_rank);
  }
  return all;
}

double recall_rate_at_k(std::span<const std::vector<std::string>> true_ranked,
                        std::span<const std::vector<std::string>> candidates, std::size_t k,
                        bool require_k_candidates) {
  if (k < 1) throw DomainError("k must be >= 1");
  if (true_ranked.size() != candidates.size()) throw LengthMismatch("truth and candidate lists differ in length");
  double hits = 0.0;
  std::size_t eligible = 0;
  for (std::size_t q = 0; q < candidates.size(); ++q) {
    const auto& cands = candidates[q];
    if (require_k_candidates && cands.size() < k) continue;
    ++eligible;
    const auto top = std::min(k, true_ranked[q].size());
    for (std::size_t i = 0; i < top; ++i) {
      if (std::find(cands.begin(), cands.end(), true_ranked[q][i]) != cands.end()) hits += 1.0;
    }
  }
  if (eligible == 0) throw NoEligibleQueries("no query has at least k candidates");
  return hits / (static_cast<double>(k) * static_cast<double>(eligible));
}

double mean_reciprocal_rank(std::span<const std::vector<std::string>> candidates_ranked,
                            std::span<const std::vector<std::string>> true_ranked) {
  if (candidates_ranked.size() != true_ranked.size()) throw LengthMismatch("truth and candidate lists differ in length");
  if (candidates_ranked.empty()) throw NoEligibleQueries("empty query set");
  double total = 0.0;
  for (std::size_t q = 0; q < candidates_ranked.size(); ++q) {
    const auto& cands = candidates_ranked[q];
    if (cands.empty()) continue;
    std::unordered_map<std::string_view, std::size_t> true_rank;
    for (std::size_t i = 0; i < true_ranked[q].size(); ++i) true_rank.emplace(true_ranked[q][i], i + 1);
    double sum = 0.0;
    for (std::size_t r = 0; r < cands.size(); ++r) {
      auto it = true_rank.find(cands[r]);
      if (it != true_rank.end()) sum += static_cast<double>(r + 1) / static_cast<double>(it->second);
    }
    total += sum / static_cast<double>(cands.size());
  }
  return total / static_cast<double>(candidates_ranked.size());
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw LengthMismatch("kendall tau needs equal-length inputs");
  if (x.size() < 2) throw LengthMismatch("kendall tau needs at least two observations");
  long double concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ties_x += 1;
      } else if (dy == 0) {
        ties_y += 1;
      } else if ((dx > 0) == (dy > 0)) {
        concordant += 1;
      } else {
        discordant += 1;
      }
    }
  }
  const long double denom = std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
  if (denom == 0) return 0.0;
  return static_cast<double>((concordant - discordant) / denom);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw LengthMismatch("pearson needs equal-length inputs of size >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::size_t intersection_size(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

double harmonic(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

GuaranteeScores guarantee_scores(std::span<const std::vector<std::string>> candidates,
                                 std::span<const std::vector<std::string>> truths) {
  if (candidates.size() != truths.size()) throw LengthMismatch("candidate and truth lists differ in length");
  double p_sum = 0, r_sum = 0;
  std::size_t p_count = 0, r_count = 0;
  for (std::size_t q = 0; q < candidates.size(); ++q) {
    const auto hit = static_cast<double>(intersection_size(candidates[q], truths[q]));
    if (!candidates[q].empty()) {
      p_sum += hit / static_cast<double>(candidates[q].size());
      ++p_count;
    }
    if (!truths[q].empty()) {
      r_sum += hit / static_cast<double>(truths[q].size());
      ++r_count;
    }
  }
  if (p_count == 0 && r_count == 0) throw NoEligibleQueries("every query has empty candidate and truth sets");
  GuaranteeScores s;
  s.precision = p_count ? p_sum / static_cast<double>(p_count) : 0.0;
  s.recall = r_count ? r_sum / static_cast<double>(r_count) : 0.0;
  s.fscore = harmonic(s.precision, s.recall);
  return s;
}

std::optional<double> query_fscore(const std::vector<std::string>& candidates, const std::vector<std::string>& truth) {
  if (candidates.empty() && truth.empty()) return std::nullopt;
  const auto hit = static_cast<double>(intersection_size(candidates, truth));
  const double p = candidates.empty() ? 0.0 : hit / static_cast<double>(candidates.size());
  const double r = truth.empty() ? 0.0 : hit / static_cast<double>(truth.size());
  return harmonic(p, r);
}

namespace {

std::vector<std::string> truth_set(const PreparedTrace& query, std::string_view query_id, const ReferenceCorpus& corpus,
                                   MeasureId measure, const CorpusStats& stats, const MeasureParams& params,
                                   std::size_t K, std::size_t L) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus.ids[i] == query_id) continue;
    const double sim = similarity(measure, query, corpus.prepared[i], stats, params);
    if (probability_similarity(sim, K, L) >= 0.5) out.push_back(corpus.ids[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

GuaranteeScores guarantee_metrics(std::span<const CrashReport> queries, const ReferenceCorpus& corpus,
                                  const LshIndex& index, const HashFamily& family, MeasureId measure,
                                  const CorpusStats& stats, const MeasureParams& params) {
  std::vector<std::vector<std::string>> candidates, truths;
  for (const auto& q : queries) {
    candidates.push_back(index.query(q.trace, family, q.id));
    truths.push_back(truth_set(prepare(q.trace), q.id, corpus, measure, stats, params, index.params().K,
                               index.params().L));
  }
  return guarantee_scores(candidates, truths);
}

double quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

void select_lk(SweepResult& result, const SweepRules& rules) {
  const SweepRow* best = nullptr;
  for (auto& row : result.rows) {
    row.threshold = similarity_threshold(row.K, row.L);
    std::sort(row.fscores.begin(), row.fscores.end());
    row.excluded = false;
    row.reason.clear();
    if (row.fscores.empty()) {
      row.excluded = true;
      row.reason = "no scored queries";
      continue;
    }
    row.median = quantile(row.fscores, 0.5);
    row.q1 = quantile(row.fscores, 0.25);
    row.q3 = quantile(row.fscores, 0.75);
    if (row.threshold < rules.min_threshold) {
      row.excluded = true;
      row.reason = "threshold below " + std::to_string(rules.min_threshold);
    } else if (row.threshold > rules.max_threshold) {
      row.excluded = true;
      row.reason = "threshold above " + std::to_string(rules.max_threshold);
    } else if (row.q3 - row.q1 > rules.max_iqr) {
      row.excluded = true;
      row.reason = "interquartile range above " + std::to_string(rules.max_iqr);
    }
    if (!row.excluded && (best == nullptr || row.median > best->median)) best = &row;
  }
  if (best == nullptr) throw AllCombinationsExcluded("every (L,K) combination was excluded");
  result.selected_L = best->L;
  result.selected_K = best->K;
}

SweepResult score_lk(std::span<const CrashReport> queries, const ReferenceCorpus& corpus, const HashFamily& family,
                     MeasureId measure, const CorpusStats& stats, const MeasureParams& params,
                     std::span<const std::pair<std::size_t, std::size_t>> grid) {
  if (grid.empty()) throw DomainError("empty (L,K) grid");
  const std::size_t M = family.num_functions();
  const std::size_t b = family.bits_per_function();
  std::vector<HashCode> corpus_codes;
  corpus_codes.reserve(corpus.size());
  for (const auto& t : corpus.traces) corpus_codes.push_back(family.hash(t));
  std::vector<HashCode> query_codes;
  std::vector<std::vector<double>> sims;
  for (const auto& q : queries) {
    query_codes.push_back(family.hash(q.trace));
    const auto pq = prepare(q.trace);
    std::vector<double> row(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) row[i] = similarity(measure, pq, corpus.prepared[i], stats, params);
    sims.push_back(std::move(row));
  }

  SweepResult result;
  for (const auto& [L, K] : grid) {
    LshParams lp{M, K, L, b};
    lp.validate();
    const auto index = LshIndex::build_from_codes(corpus.ids, corpus_codes, lp, family.fingerprint(), family.spec_json());
    SweepRow row;
    row.L = L;
    row.K = K;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      std::vector<std::string> cands;
      for (auto pos : index.candidates(query_codes[q])) {
        if (corpus.ids[pos] != queries[q].id) cands.push_back(corpus.ids[pos]);
      }
      std::sort(cands.begin(), cands.end());
      std::vector<std::string> truth;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus.ids[i] != queries[q].id && probability_similarity(sims[q][i], K, L) >= 0.5) truth.push_back(corpus.ids[i]);
      }
      std::sort(truth.begin(), truth.end());
      if (auto f = query_fscore(cands, truth)) row.fscores.push_back(*f);
    }
    row.threshold = similarity_threshold(K, L);
    result.rows.push_back(std::move(row));
  }
  return result;
}

SweepResult sweep_lk(std::span<const CrashReport> queries, const ReferenceCorpus& corpus, const HashFamily& family,
                     MeasureId measure, const CorpusStats& stats, const MeasureParams& params,
                     std::span<const std::pair<std::size_t, std::size_t>> grid, const SweepRules& rules) {
  auto result = score_lk(queries, corpus, family, measure, stats, params, grid);
  select_lk(result, rules);
  return result;
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out << "L,K,threshold,n_queries,q1,median,q3,excluded,reason,selected\n";
  for (const auto& r : rows) {
    out << r.L << ',' << r.K << ',' << r.threshold << ',' << r.fscores.size() << ',' << r.q1 << ',' << r.median << ','
        << r.q3 << ',' << (r.excluded ? 1 : 0) << ',' << r.reason << ','
        << ((r.L == selected_L && r.K == selected_K) ? 1 : 0) << '\n';
  }
  return out.str();
}

BenchResult bench(std::span<const CrashReport> queries, const ReferenceCorpus& corpus, const LshIndex& index,
                  const HashFamily& family, MeasureId measure, const CorpusStats& stats,
                  const MeasureParams& params, std::size_t repetitions, std::size_t scan_k) {
  if (queries.empty()) throw NoEligibleQueries("bench needs at least one query");
  repetitions = std::max<std::size_t>(repetitions, 3);
  using Clock = std::chrono::steady_clock;
  BenchResult result;
  result.repetitions = repetitions;
  result.queries = queries.size();

  std::size_t candidate_total = 0;
  auto lsh_pass = [&] {
    std::size_t found = 0;
    for (const auto& q : queries) {
      found += index.query_ranked(q.trace, family, measure, stats, params, corpus.prepared, q.id).size();
    }
    return found;
  };
  auto scan_pass = [&] {
    std::size_t found = 0;
    for (const auto& q : queries) found += knn_oracle(prepare(q.trace), corpus, measure, stats, params, scan_k, q.id).size();
    return found;
  };
  candidate_total = lsh_pass();  // warm-up
  scan_pass();

  const auto t0 = Clock::now();
  for (std::size_t r = 0; r < repetitions; ++r) lsh_pass();
  const auto t1 = Clock::now();
  for (std::size_t r = 0; r < repetitions; ++r) scan_pass();
  const auto t2 = Clock::now();

  const double denom = static_cast<double>(repetitions * queries.size());
  result.lsh_mean_seconds = std::chrono::duration<double>(t1 - t0).count() / denom;
  result.scan_mean_seconds = std::chrono::duration<double>(t2 - t1).count() / denom;
  result.mean_candidates = static_cast<double>(candidate_total) / static_cast<double>(queries.size());
  return result;
}

std::string EvalReport::to_json() const {
  json rr = json::object();
  for (const auto& [k, v] : rr_at_k) rr[std::to_string(k)] = v;
  json doc = {{"rr_at_k", rr},
              {"mrr", mrr},
              {"kendall_tau", kendall_tau},
              {"guarantee_precision", guarantee.precision},
              {"guarantee_recall", guarantee.recall},
              {"guarantee_fscore", guarantee.fscore},
              {"mean_query_latency_seconds", mean_query_latency},
              {"linear_scan_latency_seconds", linear_scan_latency},
              {"n_queries", n_queries}};
  return doc.dump(2);
}

EvalReport evaluate(std::span<const CrashReport> queries, const ReferenceCorpus& corpus, const LshIndex& index,
                    const HashFamily& family, MeasureId measure, const CorpusStats& stats,
                    const MeasureParams& params, const EvalOptions& options) {
  if (queries.empty()) throw NoEligibleQueries("empty query set");
  EvalReport report;
  report.n_queries = queries.size();
  const auto& lp = index.params();

  std::vector<HashCode> corpus_codes;
  corpus_codes.reserve(corpus.size());
  for (const auto& t : corpus.traces) corpus_codes.push_back(family.hash(t));

  std::vector<std::vector<std::string>> true_ranked, candidates_ranked, candidate_sets, truths;
  std::vector<double> hash_sims, exact_sims;
  for (const auto& q : queries) {
    const auto pq = prepare(q.trace);
    const auto full = knn_oracle(pq, corpus, measure, stats, params, std::max<std::size_t>(corpus.size(), 1), q.id);
    std::vector<std::string> ranked_ids, truth;
    for (const auto& n : full) {
      ranked_ids.push_back(n.id);
      if (probability_similarity(n.sim, lp.K, lp.L) >= 0.5) truth.push_back(n.id);
    }
    std::sort(truth.begin(), truth.end());
    true_ranked.push_back(std::move(ranked_ids));
    truths.push_back(std::move(truth));

    const auto ranked = index.query_ranked(q.trace, family, measure, stats, params, corpus.prepared, q.id);
    std::vector<std::string> cand_ids;
    for (const auto& [id, _] : ranked) cand_ids.push_back(id);
    auto cand_set = cand_ids;
    std::sort(cand_set.begin(), cand_set.end());
    candidates_ranked.push_back(std::move(cand_ids));
    candidate_sets.push_back(std::move(cand_set));

    const auto qcode = family.hash(q.trace);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (corpus.ids[i] == q.id) continue;
      hash_sims.push_back(exact_block_hamming(qcode, corpus_codes[i]));
      exact_sims.push_back(similarity(measure, pq, corpus.prepared[i], stats, params));
    }
  }

  for (auto k : options.ks) {
    try {
      report.rr_at_k[k] = recall_rate_at_k(true_ranked, candidates_ranked, k, options.require_k_candidates);
    } catch (const NoEligibleQueries&) {
      report.rr_at_k[k] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  report.mrr = mean_reciprocal_rank(candidates_ranked, true_ranked);
  // Cap the O(n^2) tau at an evenly strided subsample.
  constexpr std::size_t kMaxTauPairs = 20000;
  if (hash_sims.size() > kMaxTauPairs) {
    std::vector<double> hs, es;
    const double stride = static_cast<double>(hash_sims.size()) / kMaxTauPairs;
    for (std::size_t i = 0; i < kMaxTauPairs; ++i) {
      const auto at = static_cast<std::size_t>(static_cast<double>(i) * stride);
      hs.push_back(hash_sims[at]);
      es.push_back(exact_sims[at]);
    }
    hash_sims = std::move(hs);
    exact_sims = std::move(es);
  }
  report.kendall_tau = hash_sims.size() >= 2 ? kendall_tau(hash_sims, exact_sims) : 0.0;
  try {
    report.guarantee = guarantee_scores(candidate_sets, truths);
  } catch (const NoEligibleQueries&) {
    report.guarantee = {};
  }
  const auto timing = bench(queries, corpus, index, family, measure, stats, params, options.bench_repetitions);
  report.mean_query_latency = timing.lsh_mean_seconds;
  report.linear_scan_latency = timing.scan_mean_seconds;
  return report;
}

}  // namespace dlsh
