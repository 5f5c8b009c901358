#include "dlsh/lsh_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dlsh/errors.hpp"

namespace dlsh {

void LshParams::validate() const {
  if (M < 1 || K < 1 || L < 1 || b < 1) throw ParamMismatch("M, K, L, b must all be >= 1");
  if (b > 64) throw ParamMismatch("b must be <= 64");
  if (L * K > M) {
    throw ParamMismatch("L*K = " + std::to_string(L * K) + " exceeds M = " + std::to_string(M));
  }
}

HashCode::HashCode(std::size_t num_blocks, std::size_t bits_per_block)
    : blocks_(num_blocks, 0), bits_(bits_per_block) {
  if (bits_per_block < 1 || bits_per_block > 64) throw ShapeMismatch("bits per block must be in [1,64]");
}

void HashCode::set_block(std::size_t k, std::uint64_t value) {
  if (bits_ < 64) value &= (std::uint64_t{1} << bits_) - 1;
  blocks_.at(k) = value;
}

bool HashCode::bit(std::size_t k, std::size_t l) const { return (blocks_.at(k) >> (bits_ - 1 - l)) & 1U; }

void HashCode::set_bit(std::size_t k, std::size_t l, bool value) {
  const std::uint64_t mask = std::uint64_t{1} << (bits_ - 1 - l);
  if (value) {
    blocks_.at(k) |= mask;
  } else {
    blocks_.at(k) &= ~mask;
  }
}

double exact_block_hamming(const HashCode& x, const HashCode& y) {
  if (x.num_blocks() != y.num_blocks() || x.bits_per_block() != y.bits_per_block() || x.num_blocks() == 0) {
    throw ShapeMismatch("hash codes have different shapes");
  }
  std::size_t differing = 0;
  for (std::size_t k = 0; k < x.num_blocks(); ++k) differing += x.block(k) != y.block(k);
  return static_cast<double>(x.num_blocks() - differing) / static_cast<double>(x.num_blocks());
}

double probability_similarity(double sim, std::size_t K, std::size_t L) {
  if (!(sim >= 0.0 && sim <= 1.0)) throw DomainError("similarity outside [0,1]");
  if (K < 1 || L < 1) throw DomainError("K and L must be >= 1");
  return 1.0 - delta(sim, K, L);
}

double delta(double p, std::size_t K, std::size_t L) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("probability outside [0,1]");
  if (K < 1 || L < 1) throw DomainError("K and L must be >= 1");
  return std::pow(1.0 - std::pow(p, static_cast<double>(K)), static_cast<double>(L));
}

double similarity_threshold(std::size_t K, std::size_t L, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("level outside (0,1)");
  if (K < 1 || L < 1) throw DomainError("K and L must be >= 1");
  const double band = 1.0 - std::pow(1.0 - level, 1.0 / static_cast<double>(L));
  return std::pow(band, 1.0 / static_cast<double>(K));
}

std::string bucket_key(const HashCode& code, std::size_t table, std::size_t K) {
  const std::size_t b = code.bits_per_block();
  const std::size_t first = table * K;
  if (first + K > code.num_blocks()) throw ParamMismatch("table slice exceeds hash code");
  std::string key((K * b + 7) / 8, '\0');
  std::size_t pos = 0;
  for (std::size_t k = first; k < first + K; ++k) {
    const auto value = code.block(k);
    for (std::size_t l = 0; l < b; ++l, ++pos) {
      if ((value >> (b - 1 - l)) & 1U) key[pos / 8] = static_cast<char>(key[pos / 8] | (0x80 >> (pos % 8)));
    }
  }
  return key;
}

// --- LshIndex --------------------------------------------------------------

LshIndex LshIndex::build(const HashFamily& family, std::span<const CrashReport> reports, const LshParams& params) {
  params.validate();
  if (family.num_functions() != params.M || family.bits_per_function() != params.b) {
    throw ParamMismatch("family emits M=" + std::to_string(family.num_functions()) +
                        ", b=" + std::to_string(family.bits_per_function()) + " but index expects M=" +
                        std::to_string(params.M) + ", b=" + std::to_string(params.b));
  }
  std::vector<std::string> ids;
  std::vector<HashCode> codes;
  ids.reserve(reports.size());
  codes.reserve(reports.size());
  for (const auto& r : reports) {
    ids.push_back(r.id);
    codes.push_back(family.hash(r.trace));
  }
  return build_from_codes(std::move(ids), codes, params, family.fingerprint(), family.spec_json());
}

LshIndex LshIndex::build_from_codes(std::vector<std::string> ids, std::span<const HashCode> codes,
                                    const LshParams& params, std::string fingerprint, std::string family_spec) {
  params.validate();
  if (ids.size() != codes.size()) throw ShapeMismatch("id and code counts differ");
  LshIndex index;
  index.params_ = params;
  index.fingerprint_ = std::move(fingerprint);
  index.family_spec_ = std::move(family_spec);
  index.ids_ = std::move(ids);
  index.tables_.resize(params.L);
  for (std::uint32_t pos = 0; pos < index.ids_.size(); ++pos) {
    if (!index.positions_.emplace(index.ids_[pos], pos).second) throw DuplicateId(index.ids_[pos]);
    const auto& code = codes[pos];
    if (code.num_blocks() != params.M || code.bits_per_block() != params.b) {
      throw ParamMismatch("hash code shape differs from index params");
    }
    for (std::size_t j = 0; j < params.L; ++j) index.tables_[j][bucket_key(code, j, params.K)].push_back(pos);
  }
  return index;
}

std::vector<std::uint32_t> LshIndex::candidates(const HashCode& code) const {
  if (code.num_blocks() != params_.M || code.bits_per_block() != params_.b) {
    throw ShapeMismatch("query code shape differs from index params");
  }
  std::vector<std::uint32_t> out;
  for (std::size_t j = 0; j < params_.L; ++j) {
    auto it = tables_[j].find(bucket_key(code, j, params_.K));
    if (it != tables_[j].end()) out.insert(out.end(), it->second.begin(), it->second.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void LshIndex::check_family(const HashFamily& family) const {
  if (family.fingerprint() != fingerprint_) {
    throw FamilyMismatch("index was built with family " + fingerprint_ + ", got " + family.fingerprint());
  }
}

std::vector<std::uint32_t> LshIndex::query_positions(const StackTrace& trace, const HashFamily& family,
                                                     std::string_view exclude_id) const {
  check_family(family);
  auto out = candidates(family.hash(trace));
  if (!exclude_id.empty()) {
    if (auto it = positions_.find(std::string(exclude_id)); it != positions_.end()) {
      out.erase(std::remove(out.begin(), out.end(), it->second), out.end());
    }
  }
  return out;
}

std::vector<std::string> LshIndex::query(const StackTrace& trace, const HashFamily& family,
                                         std::string_view exclude_id) const {
  std::vector<std::string> out;
  for (auto pos : query_positions(trace, family, exclude_id)) out.push_back(ids_[pos]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<std::string, double>> LshIndex::query_ranked(const StackTrace& trace,
                                                                   const HashFamily& family, MeasureId measure,
                                                                   const CorpusStats& stats,
                                                                   const MeasureParams& params,
                                                                   std::span<const PreparedTrace> corpus,
                                                                   std::string_view exclude_id) const {
  if (corpus.size() != ids_.size()) throw ShapeMismatch("corpus is not aligned with the index");
  const auto positions = query_positions(trace, family, exclude_id);
  const auto prepared = prepare(trace);
  std::vector<std::pair<std::string, double>> ranked;
  ranked.reserve(positions.size());
  for (auto pos : positions) ranked.emplace_back(ids_[pos], similarity(measure, prepared, corpus[pos], stats, params));
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  return ranked;
}

// --- persistence -------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_bytes(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("index file truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    const auto raw = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(raw[i]);
    return v;
  }
  std::string bytes() { return std::string(take(u32())); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

// Layout (little-endian u32 fields):
//   "DLSH1" M K L b fingerprint family_spec n_ids {id}*
//   per table: n_buckets { key[ceil(K*b/8)] count {position}* }*  (buckets in key order)
std::string LshIndex::serialize() const {
  std::string out(kIndexFormatTag);
  put_u32(out, static_cast<std::uint32_t>(params_.M));
  put_u32(out, static_cast<std::uint32_t>(params_.K));
  put_u32(out, static_cast<std::uint32_t>(params_.L));
  put_u32(out, static_cast<std::uint32_t>(params_.b));
  put_bytes(out, fingerprint_);
  put_bytes(out, family_spec_);
  put_u32(out, static_cast<std::uint32_t>(ids_.size()));
  for (const auto& id : ids_) put_bytes(out, id);
  for (const auto& table : tables_) {
    std::vector<const Table::value_type*> buckets;
    buckets.reserve(table.size());
    for (const auto& entry : table) buckets.push_back(&entry);
    std::sort(buckets.begin(), buckets.end(), [](auto* x, auto* y) { return x->first < y->first; });
    put_u32(out, static_cast<std::uint32_t>(buckets.size()));
    for (const auto* entry : buckets) {
      out.append(entry->first);
      put_u32(out, static_cast<std::uint32_t>(entry->second.size()));
      for (auto pos : entry->second) put_u32(out, pos);
    }
  }
  return out;
}

LshIndex LshIndex::deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kIndexFormatTag.size()) != kIndexFormatTag) throw FormatError("not a DLSH1 index file");
  LshIndex index;
  index.params_.M = in.u32();
  index.params_.K = in.u32();
  index.params_.L = in.u32();
  index.params_.b = in.u32();
  try {
    index.params_.validate();
  } catch (const ParamMismatch& e) {
    throw FormatError(e.what());
  }
  index.fingerprint_ = in.bytes();
  index.family_spec_ = in.bytes();
  const auto n = in.u32();
  index.ids_.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    index.ids_.push_back(in.bytes());
    index.positions_.emplace(index.ids_.back(), i);
  }
  const std::size_t key_width = (index.params_.K * index.params_.b + 7) / 8;
  index.tables_.resize(index.params_.L);
  for (auto& table : index.tables_) {
    const auto n_buckets = in.u32();
    for (std::uint32_t k = 0; k < n_buckets; ++k) {
      std::string key(in.take(key_width));
      auto& bucket = table[std::move(key)];
      const auto count = in.u32();
      bucket.reserve(count);
      for (std::uint32_t c = 0; c < count; ++c) {
        const auto pos = in.u32();
        if (pos >= n) throw FormatError("bucket position out of range");
        bucket.push_back(pos);
      }
    }
  }
  if (!in.done()) throw FormatError("trailing bytes in index file");
  return index;
}

void LshIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write index file " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

LshIndex LshIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open index file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str());
}

}  // namespace dlsh
