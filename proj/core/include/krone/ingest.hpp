#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "krone/types.hpp"

namespace krone {

/// Literal wildcard token in template text.
inline constexpr std::string_view kWildcard = "<*>";

struct LogTemplate {
  LogKey key;
  std::string text;

  friend bool operator==(const LogTemplate&, const LogTemplate&) = default;
};

struct TemplateMatch {
  LogKey key;
  std::vector<std::string> params;
};

/// Immutable-after-load set of templates indexed by key and by token count.
class TemplateCatalog {
 public:
  TemplateCatalog() = default;

  /// Throws DuplicateKeyError on a repeated key and ContractError when the
  /// text is empty or a wildcard is embedded inside a token.
  void add(LogTemplate tmpl);

  const LogTemplate* find(std::string_view key) const;
  const LogTemplate& at(std::string_view key) const;
  bool contains(std::string_view key) const { return find(key) != nullptr; }

  std::size_t size() const noexcept { return templates_.size(); }
  bool empty() const noexcept { return templates_.empty(); }
  const std::vector<LogTemplate>& templates() const noexcept { return templates_; }

  /// Position-wise token match. Among several matching templates the one with
  /// fewest wildcards wins, then the lexicographically smallest key.
  std::optional<TemplateMatch> match(std::string_view message) const;

 private:
  struct Compiled {
    std::size_t index;
    std::vector<std::string> tokens;
    std::size_t wildcards;
  };

  std::vector<LogTemplate> templates_;
  std::unordered_map<std::string, std::size_t> by_key_;
  std::unordered_map<std::size_t, std::vector<Compiled>> by_length_;
};

/// Loads `.csv` (key,template; optional header) or `.jsonl` ({"key","template"}).
TemplateCatalog load_template_catalog(const std::filesystem::path& path);
void save_template_catalog(const TemplateCatalog& catalog, const std::filesystem::path& path);

std::vector<std::string> tokenize(std::string_view text);

struct RawLogRecord {
  std::optional<std::int64_t> timestamp;
  std::optional<std::string> group_id;
  std::string message;
  std::optional<bool> label;
};

/// One JSON object per line: {"timestamp", "group_id", "message", "label"}.
/// Plain-text files are read as one message per line without metadata.
std::vector<RawLogRecord> load_raw_logs(const std::filesystem::path& path);

/// A parsed log line: its template key plus the metadata partitioning needs.
struct ParsedRecord {
  LogKey key;
  std::optional<std::int64_t> timestamp;
  std::optional<std::string> group_id;
  std::optional<bool> label;
};

struct LogEvent {
  LogKey key;
  std::string template_text;

  friend bool operator==(const LogEvent&, const LogEvent&) = default;
};

struct LogSequence {
  std::string id;
  std::vector<LogEvent> events;
  std::optional<bool> label;

  KeyList keys() const;
  friend bool operator==(const LogSequence&, const LogSequence&) = default;
};

struct PartitionSpec {
  enum class Mode { identifier, count_window, time_window };
  Mode mode = Mode::identifier;
  std::int64_t window_size = 0;
  std::int64_t stride = 0;

  static PartitionSpec identifier() { return {}; }
  static PartitionSpec count(std::int64_t size, std::int64_t stride);
  static PartitionSpec time(std::int64_t duration, std::int64_t stride);

  /// Parses `identifier`, `count:N[:S]` or `time:D[:S]`; stride defaults to the window.
  static PartitionSpec parse(std::string_view text);
};

/// Sequence label: abnormal iff any event is labeled abnormal.
bool label_sequence(std::span<const bool> event_labels);

/// Splits records into sequences. Template text is filled from `catalog`.
std::vector<LogSequence> partition(std::span<const ParsedRecord> records, const PartitionSpec& spec,
                                   const TemplateCatalog& catalog);

struct SkippedRecord {
  std::size_t index;
  std::string message;
};

struct ParseResult {
  std::vector<ParsedRecord> records;
  std::vector<SkippedRecord> skipped;
};

/// Matches every raw message; unmatched ones are collected, never fatal.
ParseResult parse_records(std::span<const RawLogRecord> raw, const TemplateCatalog& catalog);

/// Parsed-sequence file: one JSON object per line {"id", "keys", "label"?}.
std::vector<LogSequence> load_sequences(const std::filesystem::path& path,
                                        const TemplateCatalog* catalog = nullptr);
void save_sequences(std::span<const LogSequence> sequences, const std::filesystem::path& path);

}  // namespace krone
