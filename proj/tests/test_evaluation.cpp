#include <cmath>
#include <random>

#include "doctest.h"
#include "dlsh/classic_hashers.hpp"
#include "dlsh/errors.hpp"
#include "dlsh/evaluation.hpp"
#include "dlsh/synthetic.hpp"
#include "helpers.hpp"
#include "json.hpp"

using namespace dlsh;
using namespace dlsh::testing;
using Ids = std::vector<std::string>;

namespace {

/// Candidate draw of an ideal family: each of the L bands of K functions collides with
/// probability sim^K, each function independently.
bool ideal_collision(std::mt19937_64& rng, double sim, std::size_t K, std::size_t L) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t j = 0; j < L; ++j) {
    bool band = true;
    for (std::size_t k = 0; k < K; ++k) band = (u(rng) < sim) && band;
    if (band) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("exact k-NN agrees with a full sort") {
  TraceGenerator gen(6, 8, 6);
  std::vector<CrashReport> reports;
  for (int i = 0; i < 50; ++i) reports.push_back(make_report("r" + std::to_string(100 + i), gen.next()));
  const auto stats = build_corpus(reports);
  const auto corpus = ReferenceCorpus::from_reports(reports);
  for (int q = 0; q < 10; ++q) {
    const auto query = prepare(gen.next());
    std::vector<Neighbor> all;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      all.push_back({corpus.ids[i], similarity(MeasureId::Pdm, query, corpus.prepared[i], stats)});
    }
    std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.sim > b.sim || (a.sim == b.sim && a.id < b.id);
    });
    const auto top = knn_oracle(query, corpus, MeasureId::Pdm, stats, {}, 7);
    CHECK(top == std::vector<Neighbor>(all.begin(), all.begin() + 7));
  }
  const auto self = knn_oracle(corpus.prepared[0], corpus, MeasureId::Pdm, stats, {}, 100, corpus.ids[0]);
  CHECK(self.size() == 49);
  CHECK_THROWS_AS(knn_oracle(corpus.prepared[0], corpus, MeasureId::Pdm, stats, {}, 0), DomainError);
}

TEST_CASE("recall rate at k") {
  const std::vector<Ids> truth{{"a", "b", "c"}, {"d", "e", "f"}, {"g", "h", "i"}};
  const std::vector<Ids> cands{{"b", "x"}, {"d", "e", "z"}, {"q"}};
  // k=1: a missed, d found, g missed. k=2 drops the third query (one candidate): {b} and {d,e}.
  CHECK(recall_rate_at_k(truth, cands, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(recall_rate_at_k(truth, cands, 2) == doctest::Approx(3.0 / 4.0));
  CHECK(recall_rate_at_k(truth, cands, 2, false) == doctest::Approx(3.0 / 6.0));
  CHECK_THROWS_AS(recall_rate_at_k(truth, cands, 4), NoEligibleQueries);
  CHECK_THROWS_AS(recall_rate_at_k(truth, std::vector<Ids>{}, 1), LengthMismatch);
}

TEST_CASE("mean reciprocal rank") {
  const std::vector<Ids> truth{{"s1", "s2", "s3", "s4", "s5"}};
  const std::vector<Ids> cands{{"s2", "s3", "s5"}};
  // Ranks 1,2,3 among candidates against true ranks 2,3,5.
  CHECK(mean_reciprocal_rank(cands, truth) == doctest::Approx((1.0 / 2 + 2.0 / 3 + 3.0 / 5) / 3).epsilon(1e-14));
  CHECK(mean_reciprocal_rank(cands, truth) == doctest::Approx(53.0 / 90.0).epsilon(1e-14));
  CHECK(mean_reciprocal_rank(std::vector<Ids>{{"s2"}}, truth) == 0.5);
  CHECK(mean_reciprocal_rank(std::vector<Ids>{{"s1", "s2"}}, truth) == 1.0);
  CHECK(mean_reciprocal_rank(std::vector<Ids>{{}}, truth) == 0.0);

  // Relabeling ids leaves the metric unchanged and it never exceeds 1.
  std::mt19937_64 rng(2);
  for (int n = 0; n < 100; ++n) {
    Ids t{"a", "b", "c", "d", "e", "f"};
    std::shuffle(t.begin(), t.end(), rng);
    Ids c;
    for (const auto& id : t) {
      if (rng() % 2) c.push_back(id);
    }
    const double v = mean_reciprocal_rank(std::vector<Ids>{c}, std::vector<Ids>{t});
    CHECK(v <= 1.0);
    Ids t2, c2;
    for (const auto& id : t) t2.push_back("z" + id);
    for (const auto& id : c) c2.push_back("z" + id);
    CHECK(mean_reciprocal_rank(std::vector<Ids>{c2}, std::vector<Ids>{t2}) == v);
  }
}

TEST_CASE("rank correlations") {
  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
  CHECK(kendall_tau(x, y) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  std::vector<double> a(30), b(30);
  for (auto& v : a) v = n01(rng);
  for (std::size_t i = 0; i < a.size(); ++i) b[i] = 2.5 * a[i] + 7.0;
  CHECK(kendall_tau(a, b) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(pearson(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(kendall_tau(a, std::vector<double>(30, 1.0)) == 0.0);
  CHECK_THROWS_AS(kendall_tau(x, std::vector<double>{1, 2}), LengthMismatch);
  // Ties on one side: tau-b of [1,1,2] vs [1,2,3] is 2 / sqrt(2 * 3).
  CHECK(kendall_tau(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3}) ==
        doctest::Approx(2.0 / std::sqrt(6.0)).epsilon(1e-14));
}

TEST_CASE("guarantee scores") {
  const std::vector<Ids> sets{{"a", "b"}, {"c"}};
  const auto same = guarantee_scores(sets, sets);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.fscore == 1.0);
  const auto none = guarantee_scores(std::vector<Ids>{{}, {}}, sets);
  CHECK(none.recall == 0.0);
  CHECK_THROWS_AS(guarantee_scores(std::vector<Ids>{{}}, std::vector<Ids>{{}}), NoEligibleQueries);
  const auto partial = guarantee_scores(std::vector<Ids>{{"a", "x"}}, std::vector<Ids>{{"a", "b", "c"}});
  CHECK(partial.precision == 0.5);
  CHECK(partial.recall == doctest::Approx(1.0 / 3.0));
  CHECK(partial.fscore == doctest::Approx(0.4));
  CHECK_FALSE(query_fscore({}, {}).has_value());
}

TEST_CASE("guarantee recall of an ideal family matches its expectation") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t K = 4, queries = 300, corpus = 200;
  std::vector<std::vector<double>> sims(queries, std::vector<double>(corpus));
  for (auto& row : sims) {
    for (auto& s : row) s = u(rng);
  }
  auto run = [&](std::size_t L, double& expected) {
    std::vector<Ids> cands, truths;
    expected = 0.0;
    for (std::size_t q = 0; q < queries; ++q) {
      Ids c, t;
      double mean_p = 0.0;
      for (std::size_t i = 0; i < corpus; ++i) {
        const auto id = std::to_string(100000 + i);
        if (probability_similarity(sims[q][i], K, 16) >= 0.5) {
          t.push_back(id);
          mean_p += probability_similarity(sims[q][i], K, L);
        }
        if (ideal_collision(rng, sims[q][i], K, L)) c.push_back(id);
      }
      expected += mean_p / double(t.size());
      cands.push_back(std::move(c));
      truths.push_back(std::move(t));
    }
    expected /= double(queries);
    return guarantee_scores(cands, truths).recall;
  };
  double e16 = 0, e8 = 0, e4 = 0;
  const double r16 = run(16, e16);
  CHECK(r16 == doctest::Approx(e16).epsilon(0.02));
  const double r8 = run(8, e8);
  const double r4 = run(4, e4);
  CHECK(r4 <= r8 + 0.02);
  CHECK(r8 <= r16 + 0.02);
}

TEST_CASE("(L,K) selection excludes extreme thresholds and wide spreads") {
  CHECK(quantile(std::vector<double>{1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile(std::vector<double>{1, 2, 3, 4}, 0.25) == 1.75);
  SweepResult r;
  r.rows.push_back({64, 1, 0, {0.95, 0.96, 0.97}});
  r.rows.push_back({16, 4, 0, {0.7, 0.8, 0.9}});
  r.rows.push_back({8, 8, 0, {0.1, 0.5, 0.99}});
  r.rows.push_back({4, 4, 0, {0.6, 0.7, 0.75}});
  select_lk(r);
  // 1 - 0.5^(1/64) is about 0.0108.
  CHECK(r.rows[0].excluded);
  CHECK(r.rows[0].threshold == doctest::Approx(1.0 - std::pow(0.5, 1.0 / 64)));
  CHECK_FALSE(r.rows[1].excluded);
  CHECK(r.rows[2].excluded);
  CHECK(r.selected_L == 16);
  CHECK(r.selected_K == 4);
  const auto csv = r.to_csv();
  CHECK(csv.rfind("L,K,threshold", 0) == 0);

  SweepResult only;
  only.rows.push_back({64, 1, 0, {0.9}});
  CHECK_THROWS_AS(select_lk(only), AllCombinationsExcluded);
}

TEST_CASE("sweep over a synthetic corpus is deterministic") {
  SyntheticConfig sc;
  sc.n_traces = 150;
  sc.seed = 12;
  const auto reports = generate_corpus(sc);
  const auto stats = build_corpus(reports);
  const auto corpus = ReferenceCorpus::from_reports(reports);
  const std::span<const CrashReport> queries = std::span(reports).first(20);
  const MinHashFamily family(64, 8, 5);
  const std::vector<std::pair<std::size_t, std::size_t>> grid{{64, 1}, {32, 2}, {16, 4}, {8, 8}, {4, 16}};
  const SweepRules loose{0.3, 0.95, 1.0};
  const auto a = sweep_lk(queries, corpus, family, MeasureId::JaccardBow, stats, {}, grid, loose);
  const auto b = sweep_lk(queries, corpus, family, MeasureId::JaccardBow, stats, {}, grid, loose);
  CHECK(a.to_csv() == b.to_csv());
  CHECK(a.rows.size() == 5);
  CHECK(a.rows[0].excluded);
  CHECK(a.selected_L * a.selected_K == 64);
  CHECK_THROWS_AS(sweep_lk(queries, corpus, family, MeasureId::JaccardBow, stats, {}, grid, {0.3, 0.95, 0.0}),
                  AllCombinationsExcluded);
  CHECK_THROWS_AS(sweep_lk(queries, corpus, family, MeasureId::JaccardBow, stats, {}, {}), DomainError);
}

TEST_CASE("bench and full evaluation") {
  SyntheticConfig sc;
  sc.n_traces = 120;
  const auto reports = generate_corpus(sc);
  const auto stats = build_corpus(reports);
  const MinHashFamily family(64, 8, 1);

  const std::vector<CrashReport> single{reports[0]};
  const auto single_corpus = ReferenceCorpus::from_reports(single);
  const auto single_index = LshIndex::build(family, single, {64, 4, 16, 8});
  const auto t = bench(single, single_corpus, single_index, family, MeasureId::JaccardBow, stats, {});
  CHECK(t.lsh_mean_seconds > 0.0);
  CHECK(t.scan_mean_seconds > 0.0);
  CHECK(std::isfinite(t.lsh_mean_seconds));
  CHECK(t.repetitions >= 3);

  const std::span<const CrashReport> queries = std::span(reports).first(20);
  const std::span<const CrashReport> history = std::span(reports).subspan(20);
  const auto corpus = ReferenceCorpus::from_reports(history);
  const auto index = LshIndex::build(family, history, {64, 4, 16, 8});
  const auto report = evaluate(queries, corpus, index, family, MeasureId::JaccardBow, stats, {});
  CHECK(report.n_queries == 20);
  CHECK(report.mrr >= 0.0);
  CHECK(report.mrr <= 1.0);
  CHECK(report.kendall_tau > 0.2);
  const auto doc = nlohmann::json::parse(report.to_json());
  CHECK(doc.contains("rr_at_k"));
  CHECK(doc["n_queries"] == 20);
}

}
