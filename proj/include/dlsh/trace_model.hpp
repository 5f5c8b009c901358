#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dlsh {

enum class FrameGranularity { Method, Class, Package };

std::string_view to_string(FrameGranularity g);
FrameGranularity granularity_from_string(std::string_view name);

struct StackFrame {
  std::string function;  ///< fully-qualified method, e.g. com.company.Foo.bar
  std::optional<std::string> source_file;
  std::optional<std::uint32_t> line;

  bool operator==(const StackFrame&) const = default;
};

/// Ordered frame sequence; frames[0] is the innermost call.
struct StackTrace {
  std::vector<StackFrame> frames;

  std::size_t size() const { return frames.size(); }
  bool operator==(const StackTrace&) const = default;
};

struct CrashReport {
  std::string id;
  std::optional<std::string> session_id;
  std::optional<std::string> version;
  std::optional<std::string> timestamp;  ///< ISO-8601, kept verbatim
  std::optional<std::string> error_type;
  std::optional<std::string> functionality;
  std::optional<std::string> message;
  std::optional<std::string> user_message;
  StackTrace trace;

  bool operator==(const CrashReport&) const = default;
};

inline constexpr std::size_t kDefaultMaxFrames = 64;

struct ParseOptions {
  bool strict = false;                        ///< unparseable frame lines are errors
  std::size_t max_frames = kDefaultMaxFrames; ///< outermost frames beyond this are dropped
};

/// Parses one "at pkg.Class.method(File.java:NN)" line. Throws MalformedFrame.
StackFrame parse_frame_line(std::string_view line);

/// Parses one JSON-lines record. Accepts either a "detail" block or a "frames" list.
/// Non-strict mode skips bad frame lines and appends a message to `warnings`.
CrashReport parse_report(std::string_view json_line, const ParseOptions& options = {},
                         std::vector<std::string>* warnings = nullptr);

/// Serializes to the parsed-form ("frames") record, which round-trips losslessly.
std::string to_json_line(const CrashReport& report);

/// Renders the trace as a newline-joined block of "at ..." lines.
std::string render_detail(const StackTrace& trace);

/// Reads a JSONL corpus. Blank lines are ignored. In lenient mode a malformed record is
/// skipped with a warning; in strict mode it propagates.
std::vector<CrashReport> read_corpus(const std::filesystem::path& path, const ParseOptions& options = {},
                                     std::vector<std::string>* warnings = nullptr);
std::vector<CrashReport> read_corpus_text(std::string_view text, const ParseOptions& options = {},
                                          std::vector<std::string>* warnings = nullptr);
void write_corpus(const std::filesystem::path& path, std::span<const CrashReport> reports);

std::string normalize_frame(const StackFrame& frame, FrameGranularity granularity);
std::string normalize_function(std::string_view function, FrameGranularity granularity);
std::vector<std::string> frame_tokens(const StackTrace& trace, FrameGranularity granularity);

/// Corpus-level frame statistics. Immutable once built.
class CorpusStats {
 public:
  CorpusStats() = default;

  std::size_t n_traces() const { return n_traces_; }
  FrameGranularity granularity() const { return granularity_; }
  std::size_t vocabulary_size() const { return tokens_.size(); }

  /// Tokens in index order (lexicographic, so the table is independent of input order).
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<std::size_t> index_of(std::string_view token) const;
  std::size_t doc_frequency(std::string_view token) const;  ///< 0 for unseen tokens

  /// ln(N / df); unseen tokens are floored at df = 1.
  double idf(std::string_view token) const;
  /// Upper bound of idf over any token, known or not: ln N.
  double max_idf() const;

  /// Digest over tokens and frequencies; binds families and models to a vocabulary.
  std::string digest() const;

  std::string to_json() const;
  static CorpusStats from_json(std::string_view text);

  friend CorpusStats build_corpus(std::span<const CrashReport> reports, FrameGranularity granularity);

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  void rebuild_lookup();

  std::size_t n_traces_ = 0;
  FrameGranularity granularity_ = FrameGranularity::Method;
  std::vector<std::string> tokens_;
  std::vector<std::size_t> df_;
  std::vector<double> idf_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> lookup_;
};

/// Throws EmptyCorpus on an empty list and DuplicateId on repeated ids.
CorpusStats build_corpus(std::span<const CrashReport> reports,
                         FrameGranularity granularity = FrameGranularity::Method);

}  // namespace dlsh
