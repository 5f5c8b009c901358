#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dlsh/similarity.hpp"
#include "dlsh/trace_model.hpp"

namespace dlsh {

/// (L,K)-parameterization over a family of M hash functions of b bits each.
struct LshParams {
  std::size_t M = 64;
  std::size_t K = 4;
  std::size_t L = 16;
  std::size_t b = 8;

  void validate() const;  ///< throws ParamMismatch
  bool operator==(const LshParams&) const = default;
};

/// M blocks of b bits. Bit 0 of a block is its most significant bit.
class HashCode {
 public:
  HashCode() = default;
  HashCode(std::size_t num_blocks, std::size_t bits_per_block);

  std::size_t num_blocks() const { return blocks_.size(); }
  std::size_t bits_per_block() const { return bits_; }

  std::uint64_t block(std::size_t k) const { return blocks_[k]; }
  void set_block(std::size_t k, std::uint64_t value);
  bool bit(std::size_t k, std::size_t l) const;
  void set_bit(std::size_t k, std::size_t l, bool value);

  bool operator==(const HashCode&) const = default;

 private:
  std::vector<std::uint64_t> blocks_;
  std::size_t bits_ = 0;
};

/// 1 - (#blocks that differ in any bit) / M. Throws ShapeMismatch.
double exact_block_hamming(const HashCode& x, const HashCode& y);

/// 1 - (1 - sim^K)^L. Throws DomainError outside [0,1].
double probability_similarity(double sim, std::size_t K, std::size_t L);
/// (1 - p^K)^L, the failure probability complementing probability_similarity.
double delta(double p, std::size_t K, std::size_t L);
/// Similarity at which probability_similarity crosses `level`: (1 - (1-level)^{1/L})^{1/K}.
double similarity_threshold(std::size_t K, std::size_t L, double level = 0.5);

/// Key of table `table`: blocks [table*K, (table+1)*K) packed big-endian, block 0 first,
/// zero-padded to whole bytes.
std::string bucket_key(const HashCode& code, std::size_t table, std::size_t K);

class HashFamily {
 public:
  virtual ~HashFamily() = default;

  virtual std::string_view kind() const = 0;
  virtual std::size_t num_functions() const = 0;      ///< M
  virtual std::size_t bits_per_function() const = 0;  ///< b
  virtual HashCode hash(const StackTrace& trace) const = 0;
  /// Digest of the family's type, parameters and seed or model; binds indexes to it.
  virtual std::string fingerprint() const = 0;
  /// JSON description persisted in index headers.
  virtual std::string spec_json() const = 0;
};

/// L hash tables from packed bucket key to positions in the id list. Immutable once built.
class LshIndex {
 public:
  using Bucket = std::vector<std::uint32_t>;
  using Table = std::unordered_map<std::string, Bucket>;

  LshIndex() = default;

  /// Throws ParamMismatch when the family's (M, b) disagree with params or L*K > M.
  static LshIndex build(const HashFamily& family, std::span<const CrashReport> reports, const LshParams& params);
  static LshIndex build_from_codes(std::vector<std::string> ids, std::span<const HashCode> codes,
                                   const LshParams& params, std::string fingerprint, std::string family_spec);

  const LshParams& params() const { return params_; }
  const std::string& family_fingerprint() const { return fingerprint_; }
  const std::string& family_spec() const { return family_spec_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  const Table& table(std::size_t j) const { return tables_.at(j); }

  /// Union of the code's L buckets, as sorted positions.
  std::vector<std::uint32_t> candidates(const HashCode& code) const;

  /// Ids co-bucketed with `trace` in at least one table, sorted; `exclude_id` is dropped.
  /// Throws FamilyMismatch when `family` is not the one the index was built with.
  std::vector<std::string> query(const StackTrace& trace, const HashFamily& family,
                                 std::string_view exclude_id = {}) const;
  std::vector<std::uint32_t> query_positions(const StackTrace& trace, const HashFamily& family,
                                             std::string_view exclude_id = {}) const;

  /// Candidates re-scored with the exact measure: descending similarity, ties by id.
  /// `corpus` is aligned with the index's id list.
  std::vector<std::pair<std::string, double>> query_ranked(const StackTrace& trace, const HashFamily& family,
                                                           MeasureId measure, const CorpusStats& stats,
                                                           const MeasureParams& params,
                                                           std::span<const PreparedTrace> corpus,
                                                           std::string_view exclude_id = {}) const;

  void check_family(const HashFamily& family) const;

  void save(const std::filesystem::path& path) const;
  static LshIndex load(const std::filesystem::path& path);
  std::string serialize() const;
  static LshIndex deserialize(std::string_view bytes);

 private:
  LshParams params_;
  std::string fingerprint_;
  std::string family_spec_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint32_t> positions_;
  std::vector<Table> tables_;
};

inline constexpr std::string_view kIndexFormatTag = "DLSH1";

}  // namespace dlsh
