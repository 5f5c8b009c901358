#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dlsh/lsh_core.hpp"
#include "dlsh/similarity.hpp"
#include "dlsh/trace_model.hpp"

namespace dlsh {

/// Min-wise hashing over the trace's method-token set. Each of the M*b scalar min-hashes
/// is reduced to its lowest bit, and bits are grouped b per block.
class MinHashFamily final : public HashFamily {
 public:
  static constexpr std::uint64_t kPrime = (std::uint64_t{1} << 61) - 1;

  MinHashFamily(std::size_t M, std::size_t b, std::uint64_t seed);

  std::string_view kind() const override { return "minhash"; }
  std::size_t num_functions() const override { return M_; }
  std::size_t bits_per_function() const override { return b_; }
  HashCode hash(const StackTrace& trace) const override;
  std::string fingerprint() const override;
  std::string spec_json() const override;

  std::uint64_t seed() const { return seed_; }
  std::size_t num_scalar_functions() const { return coeffs_.size(); }

  /// The M*b scalar minima before bit reduction. Throws EmptyTokenSet.
  std::vector<std::uint64_t> scalar_minhashes(std::span<const std::string> tokens) const;
  HashCode code_from_tokens(std::span<const std::string> tokens) const;

 private:
  std::size_t M_;
  std::size_t b_;
  std::uint64_t seed_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> coeffs_;  // (a, c) of (a*x + c) mod p
};

/// Sign of random Gaussian projections of the trace's count or tf-idf vector over the
/// corpus vocabulary.
class SimHashFamily final : public HashFamily {
 public:
  SimHashFamily(std::shared_ptr<const CorpusStats> stats, std::size_t M, std::size_t b, std::uint64_t seed,
                Weighting weighting = Weighting::Counts);

  std::string_view kind() const override { return "simhash"; }
  std::size_t num_functions() const override { return M_; }
  std::size_t bits_per_function() const override { return b_; }
  HashCode hash(const StackTrace& trace) const override;
  std::string fingerprint() const override;
  std::string spec_json() const override;

  std::uint64_t seed() const { return seed_; }
  Weighting weighting() const { return weighting_; }
  /// (M*b) x vocabulary matrix of hyperplane normals.
  const Eigen::MatrixXd& hyperplanes() const { return hyperplanes_; }

  /// Sparse feature vector as (vocabulary index, value); out-of-vocabulary frames are dropped.
  std::vector<std::pair<std::size_t, double>> features(const StackTrace& trace) const;
  /// One bit per hyperplane: projection >= 0. Throws ZeroVector.
  std::vector<bool> bits(const Eigen::VectorXd& feature) const;
  HashCode code_from_features(std::span<const std::pair<std::size_t, double>> feature) const;

 private:
  std::shared_ptr<const CorpusStats> stats_;
  std::size_t M_;
  std::size_t b_;
  std::uint64_t seed_;
  Weighting weighting_;
  Eigen::MatrixXd hyperplanes_;
};

}  // namespace dlsh
