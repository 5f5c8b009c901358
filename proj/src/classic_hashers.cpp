#include "dlsh/classic_hashers.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <random>

#include "dlsh/digest.hpp"
#include "dlsh/errors.hpp"
#include "json.hpp"

namespace dlsh {

using nlohmann::json;

namespace {

std::uint64_t mulmod_mersenne61(std::uint64_t a, std::uint64_t b) {
  const unsigned __int128 product = static_cast<unsigned __int128>(a) * b;
  std::uint64_t lo = static_cast<std::uint64_t>(product & MinHashFamily::kPrime);
  std::uint64_t hi = static_cast<std::uint64_t>(product >> 61);
  std::uint64_t sum = lo + hi;
  if (sum >= MinHashFamily::kPrime) sum -= MinHashFamily::kPrime;
  return sum;
}

void check_shape(std::size_t M, std::size_t b) {
  if (M < 1 || b < 1 || b > 64) throw ParamMismatch("family needs M >= 1 and 1 <= b <= 64");
}

}  // namespace

// --- MinHash ------------------------------------------------------------------

MinHashFamily::MinHashFamily(std::size_t M, std::size_t b, std::uint64_t seed) : M_(M), b_(b), seed_(seed) {
  check_shape(M, b);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> a_dist(1, kPrime - 1);
  std::uniform_int_distribution<std::uint64_t> c_dist(0, kPrime - 1);
  coeffs_.reserve(M * b);
  for (std::size_t i = 0; i < M * b; ++i) {
    const auto a = a_dist(rng);
    const auto c = c_dist(rng);
    coeffs_.emplace_back(a, c);
  }
}

std::vector<std::uint64_t> MinHashFamily::scalar_minhashes(std::span<const std::string> tokens) const {
  if (tokens.empty()) throw EmptyTokenSet("min-hash of an empty token set");
  std::vector<std::uint64_t> keys;
  keys.reserve(tokens.size());
  for (const auto& t : tokens) keys.push_back(fnv1a(t) % kPrime);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  std::vector<std::uint64_t> minima(coeffs_.size(), std::numeric_limits<std::uint64_t>::max());
  for (std::size_t i = 0; i < coeffs_.size(); ++i) {
    const auto [a, c] = coeffs_[i];
    auto& m = minima[i];
    for (auto x : keys) {
      std::uint64_t h = mulmod_mersenne61(a, x) + c;
      if (h >= kPrime) h -= kPrime;
      m = std::min(m, h);
    }
  }
  return minima;
}

HashCode MinHashFamily::code_from_tokens(std::span<const std::string> tokens) const {
  const auto minima = scalar_minhashes(tokens);
  HashCode code(M_, b_);
  for (std::size_t k = 0; k < M_; ++k) {
    for (std::size_t l = 0; l < b_; ++l) code.set_bit(k, l, minima[k * b_ + l] & 1U);
  }
  return code;
}

HashCode MinHashFamily::hash(const StackTrace& trace) const {
  return code_from_tokens(frame_tokens(trace, FrameGranularity::Method));
}

std::string MinHashFamily::spec_json() const {
  return json{{"type", "minhash"}, {"seed", seed_}, {"M", M_}, {"b", b_}}.dump();
}

std::string MinHashFamily::fingerprint() const { return digest_hex(spec_json()); }

// --- SimHash ------------------------------------------------------------------

SimHashFamily::SimHashFamily(std::shared_ptr<const CorpusStats> stats, std::size_t M, std::size_t b,
                             std::uint64_t seed, Weighting weighting)
    : stats_(std::move(stats)), M_(M), b_(b), seed_(seed), weighting_(weighting) {
  check_shape(M, b);
  if (!stats_ || stats_->vocabulary_size() == 0) throw ParamMismatch("simhash needs a non-empty vocabulary");
  const auto rows = static_cast<Eigen::Index>(M * b);
  const auto cols = static_cast<Eigen::Index>(stats_->vocabulary_size());
  hyperplanes_.resize(rows, cols);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Fixed generation order: hyperplane by hyperplane, vocabulary index within.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) hyperplanes_(r, c) = normal(rng);
  }
}

std::vector<std::pair<std::size_t, double>> SimHashFamily::features(const StackTrace& trace) const {
  std::map<std::size_t, double> tf;
  for (const auto& token : frame_tokens(trace, stats_->granularity())) {
    if (auto idx = stats_->index_of(token)) tf[*idx] += 1.0;
  }
  std::vector<std::pair<std::size_t, double>> out;
  for (auto [idx, count] : tf) {
    const double value = weighting_ == Weighting::Tfidf ? count * stats_->idf(stats_->tokens()[idx]) : count;
    if (value != 0.0) out.emplace_back(idx, value);
  }
  return out;
}

std::vector<bool> SimHashFamily::bits(const Eigen::VectorXd& feature) const {
  if (feature.size() != hyperplanes_.cols()) throw ShapeMismatch("feature dimension differs from vocabulary");
  if (feature.isZero(0.0)) throw ZeroVector("simhash of a zero feature vector");
  const Eigen::VectorXd projection = hyperplanes_ * feature;
  std::vector<bool> out(static_cast<std::size_t>(projection.size()));
  for (Eigen::Index i = 0; i < projection.size(); ++i) out[static_cast<std::size_t>(i)] = projection[i] >= 0.0;
  return out;
}

HashCode SimHashFamily::code_from_features(std::span<const std::pair<std::size_t, double>> feature) const {
  if (feature.empty()) throw ZeroVector("simhash of a zero feature vector");
  Eigen::VectorXd projection = Eigen::VectorXd::Zero(hyperplanes_.rows());
  for (const auto& [idx, value] : feature) projection += value * hyperplanes_.col(static_cast<Eigen::Index>(idx));
  HashCode code(M_, b_);
  for (std::size_t k = 0; k < M_; ++k) {
    for (std::size_t l = 0; l < b_; ++l) code.set_bit(k, l, projection[static_cast<Eigen::Index>(k * b_ + l)] >= 0.0);
  }
  return code;
}

HashCode SimHashFamily::hash(const StackTrace& trace) const { return code_from_features(features(trace)); }

std::string SimHashFamily::spec_json() const {
  return json{{"type", "simhash"},
              {"seed", seed_},
              {"M", M_},
              {"b", b_},
              {"weighting", weighting_ == Weighting::Tfidf ? "tfidf" : "counts"},
              {"vocabulary_digest", stats_->digest()}}
      .dump();
}

std::string SimHashFamily::fingerprint() const { return digest_hex(spec_json()); }

}  // namespace dlsh
