#include "dlsh/trace_model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dlsh/digest.hpp"
#include "dlsh/errors.hpp"
#include "json.hpp"

namespace dlsh {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_function_name(std::string_view name) {
  if (name.empty()) return false;
  return std::none_of(name.begin(), name.end(), [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')';
  });
}

std::optional<std::string> optional_string(const json& record, const char* key) {
  auto it = record.find(key);
  if (it == record.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw MalformedReport(std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

void put_optional(json& record, const char* key, const std::optional<std::string>& value) {
  if (value) record[key] = *value;
}

}  // namespace

std::string_view to_string(FrameGranularity g) {
  switch (g) {
    case FrameGranularity::Method: return "Method";
    case FrameGranularity::Class: return "Class";
    case FrameGranularity::Package: return "Package";
  }
  return "Method";
}

FrameGranularity granularity_from_string(std::string_view name) {
  if (name == "Method") return FrameGranularity::Method;
  if (name == "Class") return FrameGranularity::Class;
  if (name == "Package") return FrameGranularity::Package;
  throw Error("unknown frame granularity '" + std::string(name) + "'");
}

StackFrame parse_frame_line(std::string_view line) {
  auto body = trim(line);
  if (body.substr(0, 3) != "at ") throw MalformedFrame("expected 'at ' prefix: " + std::string(line));
  body = trim(body.substr(3));

  StackFrame frame;
  const auto open = body.find('(');
  if (open == std::string_view::npos) {
    if (!valid_function_name(body)) throw MalformedFrame("bad function name: " + std::string(line));
    frame.function = std::string(body);
    return frame;
  }
  if (body.back() != ')' || body.find('(', open + 1) != std::string_view::npos) {
    throw MalformedFrame("unbalanced location: " + std::string(line));
  }
  const auto function = trim(body.substr(0, open));
  if (!valid_function_name(function)) throw MalformedFrame("bad function name: " + std::string(line));
  frame.function = std::string(function);

  const auto location = trim(body.substr(open + 1, body.size() - open - 2));
  if (location.empty()) return frame;
  const auto colon = location.rfind(':');
  if (colon == std::string_view::npos) {
    frame.source_file = std::string(location);
    return frame;
  }
  const auto digits = location.substr(colon + 1);
  std::uint32_t number = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), number);
  if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size()) {
    throw MalformedFrame("bad line number: " + std::string(line));
  }
  frame.source_file = std::string(location.substr(0, colon));
  frame.line = number;
  return frame;
}

CrashReport parse_report(std::string_view json_line, const ParseOptions& options,
                         std::vector<std::string>* warnings) {
  json record;
  try {
    record = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw MalformedReport(std::string("invalid JSON: ") + e.what());
  }
  if (!record.is_object()) throw MalformedReport("record is not an object");

  CrashReport report;
  auto id = optional_string(record, "id");
  if (!id || id->empty()) throw MalformedReport("missing id");
  report.id = *id;
  report.session_id = optional_string(record, "sessionId");
  report.version = optional_string(record, "version");
  report.timestamp = optional_string(record, "timestamp");
  report.error_type = optional_string(record, "typeError");
  report.functionality = optional_string(record, "functionality");
  report.message = optional_string(record, "message");
  report.user_message = optional_string(record, "userMessage");

  auto& frames = report.trace.frames;
  if (auto it = record.find("frames"); it != record.end()) {
    if (!it->is_array()) throw MalformedReport(report.id + ": 'frames' is not a list");
    for (const auto& entry : *it) {
      if (!entry.is_object() || !entry.contains("function") || !entry["function"].is_string()) {
        throw MalformedReport(report.id + ": frame without function");
      }
      StackFrame frame;
      const auto function = trim(entry["function"].get_ref<const std::string&>());
      if (!valid_function_name(function)) {
        const std::string msg = report.id + ": bad function name '" + std::string(function) + "'";
        if (options.strict) throw MalformedFrame(msg);
        if (warnings) warnings->push_back(msg);
        continue;
      }
      frame.function = std::string(function);
      if (auto f = entry.find("file"); f != entry.end() && f->is_string()) frame.source_file = f->get<std::string>();
      if (auto l = entry.find("line"); l != entry.end() && !l->is_null()) {
        if (!l->is_number_unsigned()) throw MalformedReport(report.id + ": frame line must be a non-negative integer");
        frame.line = l->get<std::uint32_t>();
      }
      frames.push_back(std::move(frame));
    }
  } else if (auto detail = optional_string(record, "detail")) {
    std::istringstream lines(*detail);
    std::string raw;
    while (std::getline(lines, raw)) {
      const auto line = trim(raw);
      // Exception headers, "... N more" and similar lines carry no frame.
      if (line.substr(0, 3) != "at ") continue;
      try {
        frames.push_back(parse_frame_line(line));
      } catch (const MalformedFrame& e) {
        if (options.strict) throw;
        if (warnings) warnings->push_back(report.id + ": " + e.what());
      }
    }
  }
  if (frames.empty()) throw MalformedReport(report.id + ": empty trace");
  if (options.max_frames > 0 && frames.size() > options.max_frames) frames.resize(options.max_frames);
  return report;
}

std::string to_json_line(const CrashReport& report) {
  json record = json::object();
  record["id"] = report.id;
  put_optional(record, "sessionId", report.session_id);
  put_optional(record, "version", report.version);
  put_optional(record, "timestamp", report.timestamp);
  put_optional(record, "typeError", report.error_type);
  put_optional(record, "functionality", report.functionality);
  put_optional(record, "message", report.message);
  put_optional(record, "userMessage", report.user_message);
  json frames = json::array();
  for (const auto& f : report.trace.frames) {
    json entry = {{"function", f.function}};
    if (f.source_file) entry["file"] = *f.source_file;
    if (f.line) entry["line"] = *f.line;
    frames.push_back(std::move(entry));
  }
  record["frames"] = std::move(frames);
  return record.dump();
}

std::string render_detail(const StackTrace& trace) {
  std::string out;
  for (const auto& f : trace.frames) {
    if (!out.empty()) out += '\n';
    out += "at " + f.function;
    if (f.source_file) {
      out += '(' + *f.source_file;
      if (f.line) out += ':' + std::to_string(*f.line);
      out += ')';
    }
  }
  return out;
}

std::vector<CrashReport> read_corpus_text(std::string_view text, const ParseOptions& options,
                                          std::vector<std::string>* warnings) {
  std::vector<CrashReport> reports;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty()) continue;
    try {
      reports.push_back(parse_report(line, options, warnings));
    } catch (const Error& e) {
      if (options.strict) throw;
      if (warnings) warnings->push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return reports;
}

std::vector<CrashReport> read_corpus(const std::filesystem::path& path, const ParseOptions& options,
                                     std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return read_corpus_text(buffer.str(), options, warnings);
}

void write_corpus(const std::filesystem::path& path, std::span<const CrashReport> reports) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write corpus file " + path.string());
  for (const auto& r : reports) out << to_json_line(r) << '\n';
}

std::string normalize_function(std::string_view function, FrameGranularity granularity) {
  auto name = trim(function);
  auto drop_last_segment = [](std::string_view s) {
    const auto dot = s.rfind('.');
    return dot == std::string_view::npos || dot == 0 ? s : s.substr(0, dot);
  };
  switch (granularity) {
    case FrameGranularity::Method:
      break;
    case FrameGranularity::Class:
      name = drop_last_segment(name);
      break;
    case FrameGranularity::Package:
      name = drop_last_segment(drop_last_segment(name));
      break;
  }
  return std::string(name);
}

std::string normalize_frame(const StackFrame& frame, FrameGranularity granularity) {
  return normalize_function(frame.function, granularity);
}

std::vector<std::string> frame_tokens(const StackTrace& trace, FrameGranularity granularity) {
  std::vector<std::string> out;
  out.reserve(trace.frames.size());
  for (const auto& f : trace.frames) out.push_back(normalize_frame(f, granularity));
  return out;
}

// --- CorpusStats -----------------------------------------------------------

std::optional<std::size_t> CorpusStats::index_of(std::string_view token) const {
  auto it = lookup_.find(token);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t CorpusStats::doc_frequency(std::string_view token) const {
  auto idx = index_of(token);
  return idx ? df_[*idx] : 0;
}

double CorpusStats::idf(std::string_view token) const {
  if (auto idx = index_of(token)) return idf_[*idx];
  return max_idf();
}

double CorpusStats::max_idf() const { return n_traces_ > 0 ? std::log(static_cast<double>(n_traces_)) : 0.0; }

std::string CorpusStats::digest() const {
  Fnv1a h;
  h.update_pod(static_cast<std::uint64_t>(n_traces_));
  h.update(to_string(granularity_));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    h.update(tokens_[i]).update("\0", 1).update_pod(static_cast<std::uint64_t>(df_[i]));
  }
  return h.hex();
}

void CorpusStats::rebuild_lookup() {
  lookup_.clear();
  idf_.resize(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    lookup_.emplace(tokens_[i], i);
    idf_[i] = std::log(static_cast<double>(n_traces_) / static_cast<double>(df_[i]));
  }
}

std::string CorpusStats::to_json() const {
  json doc;
  doc["n_traces"] = n_traces_;
  doc["granularity"] = to_string(granularity_);
  json entries = json::array();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    entries.push_back({{"token", tokens_[i]}, {"df", df_[i]}, {"idf", idf_[i]}});
  }
  doc["vocabulary"] = std::move(entries);
  return doc.dump(1);
}

CorpusStats CorpusStats::from_json(std::string_view text) {
  CorpusStats stats;
  try {
    const auto doc = json::parse(text);
    stats.n_traces_ = doc.at("n_traces").get<std::size_t>();
    stats.granularity_ = granularity_from_string(doc.at("granularity").get<std::string>());
    for (const auto& e : doc.at("vocabulary")) {
      stats.tokens_.push_back(e.at("token").get<std::string>());
      stats.df_.push_back(e.at("df").get<std::size_t>());
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("corpus stats: ") + e.what());
  }
  if (!std::is_sorted(stats.tokens_.begin(), stats.tokens_.end())) throw FormatError("corpus stats: vocabulary not sorted");
  for (auto df : stats.df_) {
    if (df < 1 || df > stats.n_traces_) throw FormatError("corpus stats: document frequency out of range");
  }
  stats.rebuild_lookup();
  return stats;
}

CorpusStats build_corpus(std::span<const CrashReport> reports, FrameGranularity granularity) {
  if (reports.empty()) throw EmptyCorpus("no reports");
  std::set<std::string_view> ids;
  std::map<std::string, std::size_t> df;
  for (const auto& r : reports) {
    if (!ids.insert(r.id).second) throw DuplicateId(r.id);
    auto toks = frame_tokens(r.trace, granularity);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (auto& t : toks) ++df[std::move(t)];
  }
  CorpusStats stats;
  stats.n_traces_ = reports.size();
  stats.granularity_ = granularity;
  stats.tokens_.reserve(df.size());
  stats.df_.reserve(df.size());
  for (auto& [token, count] : df) {
    stats.tokens_.push_back(token);
    stats.df_.push_back(count);
  }
  stats.rebuild_lookup();
  return stats;
}

}  // namespace dlsh
