#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dlsh/trace_model.hpp"

namespace dlsh {

enum class MeasureId {
  JaccardBow,
  JaccardBigram,
  CosineBow,
  CosineBigram,
  CosineTfidf,
  EditSim,
  Pdm,
  Brodie,
  Durfex,
  Lerch,
  Moroo,
  TraceSim,
};

inline constexpr std::array<MeasureId, 12> kAllMeasures = {
    MeasureId::JaccardBow, MeasureId::JaccardBigram, MeasureId::CosineBow, MeasureId::CosineBigram,
    MeasureId::CosineTfidf, MeasureId::EditSim,      MeasureId::Pdm,       MeasureId::Brodie,
    MeasureId::Durfex,     MeasureId::Lerch,         MeasureId::Moroo,     MeasureId::TraceSim,
};

std::string_view to_string(MeasureId m);
MeasureId measure_from_string(std::string_view name);

/// Free coefficients of the reconstructed measures.
struct MeasureParams {
  double pdm_c = 1.0;  ///< decay with distance to the top frame
  double pdm_o = 1.0;  ///< decay with alignment offset; Brodie shares it
  double tracesim_alpha = 1.0;
  double tracesim_beta = 1.0;
  double tracesim_gamma = 1.0;
  double moroo_weight = 0.5;
  int durfex_n = 2;

  void validate() const;  ///< throws DomainError
};

enum class Weighting { Counts, Tfidf };

using TokenSpan = std::span<const std::string>;

/// Frame tokens at the two granularities the measures consume.
struct PreparedTrace {
  std::vector<std::string> methods;
  std::vector<std::string> packages;
};

PreparedTrace prepare(const StackTrace& trace);

/// Consecutive n-grams joined with U+001F; a trace shorter than n yields none.
std::vector<std::string> ngrams(TokenSpan tokens, int n);

double jaccard_ngram(TokenSpan a, TokenSpan b, int n);
double cosine(TokenSpan a, TokenSpan b, Weighting weighting, int n, const CorpusStats* stats = nullptr);
std::size_t levenshtein(TokenSpan a, TokenSpan b);
double edit_sim(TokenSpan a, TokenSpan b);
double pdm(TokenSpan a, TokenSpan b, double c, double o);
double brodie(TokenSpan a, TokenSpan b, const CorpusStats& stats, double o);
/// `a` and `b` are package-granularity tokens.
double durfex(TokenSpan a, TokenSpan b, int n);
double lerch(TokenSpan a, TokenSpan b, const CorpusStats& stats);
double moroo(TokenSpan a, TokenSpan b, const CorpusStats& stats, double weight, double c, double o);
double tracesim(TokenSpan a, TokenSpan b, const CorpusStats& stats, double alpha, double beta, double gamma);

/// Frame weight used by tracesim: position decay times a sigmoid of the token's IDF.
double tracesim_weight(std::size_t depth, double idf, double alpha, double beta, double gamma);
/// idf(t) / ln N, or 1 when the corpus has a single trace.
double normalized_idf(const CorpusStats& stats, std::string_view token);

double similarity(MeasureId measure, const PreparedTrace& a, const PreparedTrace& b, const CorpusStats& stats,
                  const MeasureParams& params = {});
double similarity(MeasureId measure, const StackTrace& a, const StackTrace& b, const CorpusStats& stats,
                  const MeasureParams& params = {});

}  // namespace dlsh
