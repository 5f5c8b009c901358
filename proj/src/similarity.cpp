#include "dlsh/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "dlsh/errors.hpp"

namespace dlsh {

namespace {

using CountVector = std::vector<std::pair<std::string, double>>;  // sorted by token

CountVector counts(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  CountVector out;
  for (auto& t : tokens) {
    if (!out.empty() && out.back().first == t) {
      out.back().second += 1.0;
    } else {
      out.emplace_back(std::move(t), 1.0);
    }
  }
  return out;
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

/// Cosine of two sorted sparse vectors. Two zero vectors compare equal iff their
/// underlying count tables match, so identical degenerate inputs still score 1.
double sparse_cosine(const CountVector& u, const CountVector& v, bool equal_support) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (const auto& [_, x] : u) nu += x * x;
  for (const auto& [_, y] : v) nv += y * y;
  if (nu == 0.0 || nv == 0.0) return (nu == 0.0 && nv == 0.0 && equal_support) ? 1.0 : 0.0;
  auto i = u.begin();
  auto j = v.begin();
  while (i != u.end() && j != v.end()) {
    if (i->first < j->first) {
      ++i;
    } else if (j->first < i->first) {
      ++j;
    } else {
      dot += i->second * j->second;
      ++i;
      ++j;
    }
  }
  return clamp01(dot / std::sqrt(nu * nv));
}

bool same_counts(const CountVector& u, const CountVector& v) { return u == v; }

}  // namespace

std::string_view to_string(MeasureId m) {
  switch (m) {
    case MeasureId::JaccardBow: return "JaccardBow";
    case MeasureId::JaccardBigram: return "JaccardBigram";
    case MeasureId::CosineBow: return "CosineBow";
    case MeasureId::CosineBigram: return "CosineBigram";
    case MeasureId::CosineTfidf: return "CosineTfidf";
    case MeasureId::EditSim: return "EditSim";
    case MeasureId::Pdm: return "Pdm";
    case MeasureId::Brodie: return "Brodie";
    case MeasureId::Durfex: return "Durfex";
    case MeasureId::Lerch: return "Lerch";
    case MeasureId::Moroo: return "Moroo";
    case MeasureId::TraceSim: return "TraceSim";
  }
  return "?";
}

MeasureId measure_from_string(std::string_view name) {
  for (auto m : kAllMeasures) {
    if (to_string(m) == name) return m;
  }
  throw DomainError("unknown measure '" + std::string(name) + "'");
}

void MeasureParams::validate() const {
  if (!(pdm_c > 0) || !(pdm_o > 0)) throw DomainError("pdm coefficients must be positive");
  if (!(tracesim_alpha > 0) || !(tracesim_beta > 0) || !(tracesim_gamma > 0)) {
    throw DomainError("tracesim coefficients must be positive");
  }
  if (!(moroo_weight >= 0 && moroo_weight <= 1)) throw DomainError("moroo weight must lie in [0,1]");
  if (durfex_n < 1) throw DomainError("durfex n-gram order must be >= 1");
}

PreparedTrace prepare(const StackTrace& trace) {
  return {frame_tokens(trace, FrameGranularity::Method), frame_tokens(trace, FrameGranularity::Package)};
}

std::vector<std::string> ngrams(TokenSpan tokens, int n) {
  if (n < 1) throw DomainError("n-gram order must be >= 1");
  std::vector<std::string> out;
  const auto size = static_cast<std::size_t>(n);
  if (tokens.size() < size) return out;
  out.reserve(tokens.size() - size + 1);
  for (std::size_t i = 0; i + size <= tokens.size(); ++i) {
    std::string gram = tokens[i];
    for (std::size_t k = 1; k < size; ++k) gram += '\x1f' + tokens[i + k];
    out.push_back(std::move(gram));
  }
  return out;
}

double jaccard_ngram(TokenSpan a, TokenSpan b, int n) {
  if (n != 1 && n != 2) throw DomainError("jaccard n must be 1 or 2");
  auto sa = ngrams(a, n);
  auto sb = ngrams(b, n);
  std::sort(sa.begin(), sa.end());
  sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
  std::sort(sb.begin(), sb.end());
  sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::vector<std::string> common;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
  const double inter = static_cast<double>(common.size());
  return inter / (static_cast<double>(sa.size() + sb.size()) - inter);
}

double cosine(TokenSpan a, TokenSpan b, Weighting weighting, int n, const CorpusStats* stats) {
  if (n != 1 && n != 2) throw DomainError("cosine n must be 1 or 2");
  auto u = counts(ngrams(a, n));
  auto v = counts(ngrams(b, n));
  const bool equal = same_counts(u, v);
  if (weighting == Weighting::Tfidf) {
    if (stats == nullptr) throw DomainError("tf-idf cosine requires corpus statistics");
    if (n != 1) throw DomainError("tf-idf cosine is defined on unigrams");
    for (auto& [t, x] : u) x *= stats->idf(t);
    for (auto& [t, y] : v) y *= stats->idf(t);
  }
  return sparse_cosine(u, v, equal);
}

std::size_t levenshtein(TokenSpan a, TokenSpan b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double edit_sim(TokenSpan a, TokenSpan b) {
  const auto longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

namespace {

/// Max-weight monotone matching of equal tokens. The accumulated total follows the
/// alignment path in increasing position order.
template <typename MatchWeight>
double best_alignment(TokenSpan a, TokenSpan b, MatchWeight&& weight) {
  std::vector<double> prev(b.size() + 1, 0.0), cur(b.size() + 1, 0.0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = 0.0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      double best = std::max(prev[j], cur[j - 1]);
      if (a[i - 1] == b[j - 1]) best = std::max(best, prev[j - 1] + weight(i - 1, j - 1));
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double offset_decay(std::size_t i, std::size_t j, double o) {
  const auto gap = i > j ? i - j : j - i;
  return std::exp(-o * static_cast<double>(gap));
}

}  // namespace

double pdm(TokenSpan a, TokenSpan b, double c, double o) {
  if (!(c > 0) || !(o > 0)) throw DomainError("pdm coefficients must be positive");
  const auto shortest = std::min(a.size(), b.size());
  if (shortest == 0) return a.size() == b.size() ? 1.0 : 0.0;
  const double total = best_alignment(a, b, [&](std::size_t i, std::size_t j) {
    return std::exp(-c * static_cast<double>(std::min(i, j))) * offset_decay(i, j, o);
  });
  double norm = 0.0;
  for (std::size_t i = 0; i < shortest; ++i) norm += std::exp(-c * static_cast<double>(i));
  return clamp01(total / norm);
}

double normalized_idf(const CorpusStats& stats, std::string_view token) {
  const double top = stats.max_idf();
  if (top <= 0.0) return 1.0;
  return stats.idf(token) / top;
}

double brodie(TokenSpan a, TokenSpan b, const CorpusStats& stats, double o) {
  if (!(o > 0)) throw DomainError("brodie offset decay must be positive");
  auto self_score = [&](TokenSpan t) {
    double s = 0.0;
    for (const auto& tok : t) s += normalized_idf(stats, tok);
    return s;
  };
  // Self-alignment of the longer trace; equal lengths take the larger score so the
  // result stays symmetric.
  double norm;
  if (a.size() != b.size()) {
    norm = self_score(a.size() > b.size() ? a : b);
  } else {
    norm = std::max(self_score(a), self_score(b));
  }
  if (norm <= 0.0) return std::equal(a.begin(), a.end(), b.begin(), b.end()) ? 1.0 : 0.0;
  const double total = best_alignment(a, b, [&](std::size_t i, std::size_t j) {
    return normalized_idf(stats, a[i]) * offset_decay(i, j, o);
  });
  return clamp01(total / norm);
}

double durfex(TokenSpan a, TokenSpan b, int n) {
  if (n < 1) throw DomainError("durfex n must be >= 1");
  auto collapse = [](TokenSpan t) {
    std::vector<std::string> out;
    for (const auto& tok : t) {
      if (out.empty() || out.back() != tok) out.push_back(tok);
    }
    return out;
  };
  const auto ca = collapse(a);
  const auto cb = collapse(b);
  auto u = counts(ngrams(ca, n));
  auto v = counts(ngrams(cb, n));
  return sparse_cosine(u, v, same_counts(u, v));
}

double lerch(TokenSpan a, TokenSpan b, const CorpusStats& stats) {
  const auto u = counts({a.begin(), a.end()});
  const auto v = counts({b.begin(), b.end()});
  auto self = [&](const CountVector& w) {
    double s = 0.0;
    for (const auto& [t, tf] : w) {
      const double idf = stats.idf(t);
      s += tf * idf * idf;
    }
    return s;
  };
  const double saa = self(u);
  const double sbb = self(v);
  if (saa == 0.0 || sbb == 0.0) return (saa == 0.0 && sbb == 0.0 && u == v) ? 1.0 : 0.0;
  // Each shared term contributes the geometric mean of its two directed Lucene
  // contributions (tf_b idf^2 and tf_a idf^2).
  double score = 0.0;
  auto i = u.begin();
  auto j = v.begin();
  while (i != u.end() && j != v.end()) {
    if (i->first < j->first) {
      ++i;
    } else if (j->first < i->first) {
      ++j;
    } else {
      const double idf = stats.idf(i->first);
      score += std::sqrt(i->second * j->second) * idf * idf;
      ++i;
      ++j;
    }
  }
  return clamp01(score / std::sqrt(saa * sbb));
}

double moroo(TokenSpan a, TokenSpan b, const CorpusStats& stats, double weight, double c, double o) {
  if (!(weight >= 0 && weight <= 1)) throw DomainError("moroo weight must lie in [0,1]");
  if (weight == 1.0) return cosine(a, b, Weighting::Tfidf, 1, &stats);
  if (weight == 0.0) return pdm(a, b, c, o);
  return clamp01(weight * cosine(a, b, Weighting::Tfidf, 1, &stats) + (1.0 - weight) * pdm(a, b, c, o));
}

double tracesim_weight(std::size_t depth, double idf, double alpha, double beta, double gamma) {
  const double position = 1.0 / std::pow(static_cast<double>(depth + 1), alpha);
  const double global = 1.0 / (1.0 + std::exp(-beta * (idf - gamma)));
  return position * global;
}

double tracesim(TokenSpan a, TokenSpan b, const CorpusStats& stats, double alpha, double beta, double gamma) {
  if (!(alpha > 0) || !(beta > 0) || !(gamma > 0)) throw DomainError("tracesim coefficients must be positive");
  std::vector<double> wa(a.size()), wb(b.size());
  double total_a = 0.0, total_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    wa[i] = tracesim_weight(i, stats.idf(a[i]), alpha, beta, gamma);
    total_a += wa[i];
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    wb[j] = tracesim_weight(j, stats.idf(b[j]), alpha, beta, gamma);
    total_b += wb[j];
  }
  const double total = total_a + total_b;
  if (total <= 0.0) return 1.0;

  // Weighted Levenshtein: insert/delete cost the frame weight, substitution costs
  // both weights, matches are free.
  std::vector<double> prev(b.size() + 1), cur(b.size() + 1);
  prev[0] = 0.0;
  for (std::size_t j = 1; j <= b.size(); ++j) prev[j] = prev[j - 1] + wb[j - 1];
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = prev[0] + wa[i - 1];
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const double sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0.0 : wa[i - 1] + wb[j - 1]);
      cur[j] = std::min({prev[j] + wa[i - 1], cur[j - 1] + wb[j - 1], sub});
    }
    std::swap(prev, cur);
  }
  return clamp01(1.0 - prev[b.size()] / total);
}

double similarity(MeasureId measure, const PreparedTrace& a, const PreparedTrace& b, const CorpusStats& stats,
                  const MeasureParams& params) {
  const TokenSpan ma = a.methods;
  const TokenSpan mb = b.methods;
  switch (measure) {
    case MeasureId::JaccardBow: return jaccard_ngram(ma, mb, 1);
    case MeasureId::JaccardBigram: return jaccard_ngram(ma, mb, 2);
    case MeasureId::CosineBow: return cosine(ma, mb, Weighting::Counts, 1);
    case MeasureId::CosineBigram: return cosine(ma, mb, Weighting::Counts, 2);
    case MeasureId::CosineTfidf: return cosine(ma, mb, Weighting::Tfidf, 1, &stats);
    case MeasureId::EditSim: return edit_sim(ma, mb);
    case MeasureId::Pdm: return pdm(ma, mb, params.pdm_c, params.pdm_o);
    case MeasureId::Brodie: return brodie(ma, mb, stats, params.pdm_o);
    case MeasureId::Durfex: return durfex(a.packages, b.packages, params.durfex_n);
    case MeasureId::Lerch: return lerch(ma, mb, stats);
    case MeasureId::Moroo: return moroo(ma, mb, stats, params.moroo_weight, params.pdm_c, params.pdm_o);
    case MeasureId::TraceSim:
      return tracesim(ma, mb, stats, params.tracesim_alpha, params.tracesim_beta, params.tracesim_gamma);
  }
  throw DomainError("unhandled measure");
}

double similarity(MeasureId measure, const StackTrace& a, const StackTrace& b, const CorpusStats& stats,
                  const MeasureParams& params) {
  return similarity(measure, prepare(a), prepare(b), stats, params);
}

}  // namespace dlsh
