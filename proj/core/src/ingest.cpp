#include "krone/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "krone/error.hpp"
#include "io_util.hpp"

namespace krone {

using json = nlohmann::json;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

void TemplateCatalog::add(LogTemplate tmpl) {
  if (tmpl.text.empty()) throw ContractError("template " + tmpl.key + " has empty text");
  if (by_key_.contains(tmpl.key)) throw DuplicateKeyError(tmpl.key);

  Compiled compiled{templates_.size(), tokenize(tmpl.text), 0};
  if (compiled.tokens.empty()) throw ContractError("template " + tmpl.key + " has no tokens");
  for (const auto& tok : compiled.tokens) {
    if (tok == kWildcard) {
      ++compiled.wildcards;
    } else if (tok.find(kWildcard) != std::string::npos) {
      throw ContractError("template " + tmpl.key + ": wildcard inside token '" + tok + "'");
    }
  }
  by_key_.emplace(tmpl.key, templates_.size());
  by_length_[compiled.tokens.size()].push_back(std::move(compiled));
  templates_.push_back(std::move(tmpl));
}

const LogTemplate* TemplateCatalog::find(std::string_view key) const {
  auto it = by_key_.find(std::string(key));
  return it == by_key_.end() ? nullptr : &templates_[it->second];
}

const LogTemplate& TemplateCatalog::at(std::string_view key) const {
  if (const auto* t = find(key)) return *t;
  throw LookupError(std::string(key), "not in template catalog");
}

std::optional<TemplateMatch> TemplateCatalog::match(std::string_view message) const {
  const auto tokens = tokenize(message);
  auto bucket = by_length_.find(tokens.size());
  if (bucket == by_length_.end()) return std::nullopt;

  const Compiled* best = nullptr;
  for (const auto& cand : bucket->second) {
    bool ok = true;
    for (std::size_t i = 0; i < tokens.size() && ok; ++i) {
      ok = cand.tokens[i] == kWildcard || cand.tokens[i] == tokens[i];
    }
    if (!ok) continue;
    if (!best || cand.wildcards < best->wildcards ||
        (cand.wildcards == best->wildcards &&
         templates_[cand.index].key < templates_[best->index].key)) {
      best = &cand;
    }
  }
  if (!best) return std::nullopt;

  TemplateMatch m{templates_[best->index].key, {}};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (best->tokens[i] == kWildcard) m.params.push_back(tokens[i]);
  }
  return m;
}

namespace {

// Splits one CSV line with RFC4180-style double-quote escaping.
std::vector<std::string> split_csv(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quote", line_no);
  fields.push_back(std::move(cur));
  return fields;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

TemplateCatalog load_template_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open template catalog " + path.string());

  const bool jsonl = path.extension() == ".jsonl" || path.extension() == ".json";
  TemplateCatalog catalog;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;

    LogTemplate tmpl;
    if (jsonl) {
      json row;
      try {
        row = json::parse(line);
        tmpl.key = json_scalar_to_string(row.at("key"));
        tmpl.text = row.at("template").get<std::string>();
      } catch (const json::exception& e) {
        throw ParseError(std::string("bad template record: ") + e.what(), line_no);
      }
    } else {
      auto fields = split_csv(line, line_no);
      if (fields.size() < 2) throw ParseError("expected key,template", line_no);
      if (line_no == 1) {
        const auto head = lower(trim(fields[0]));
        if (head == "key" || head == "eventid") continue;
      }
      tmpl.key = trim(fields[0]);
      tmpl.text = trim(fields[1]);
    }
    if (tmpl.key.empty()) throw ParseError("empty template key", line_no);
    try {
      catalog.add(std::move(tmpl));
    } catch (const ContractError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return catalog;
}

void save_template_catalog(const TemplateCatalog& catalog, const std::filesystem::path& path) {
  std::ostringstream out;
  if (path.extension() == ".jsonl") {
    for (const auto& t : catalog.templates()) {
      out << json{{"key", t.key}, {"template", t.text}}.dump() << '\n';
    }
  } else {
    out << "key,template\n";
    for (const auto& t : catalog.templates()) out << csv_quote(t.key) << ',' << csv_quote(t.text) << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<RawLogRecord> load_raw_logs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open log file " + path.string());
  const bool jsonl = path.extension() == ".jsonl";

  std::vector<RawLogRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    RawLogRecord rec;
    if (jsonl) {
      try {
        auto row = json::parse(line);
        rec.message = row.at("message").get<std::string>();
        if (auto it = row.find("timestamp"); it != row.end() && !it->is_null())
          rec.timestamp = it->get<std::int64_t>();
        if (auto it = row.find("group_id"); it != row.end() && !it->is_null())
          rec.group_id = json_scalar_to_string(*it);
        if (auto it = row.find("label"); it != row.end() && !it->is_null())
          rec.label = it->get<bool>();
      } catch (const json::exception& e) {
        throw ParseError(std::string("bad log record: ") + e.what(), line_no);
      }
    } else {
      rec.message = line;
    }
    if (trim(rec.message).empty()) throw ParseError("empty log message", line_no);
    records.push_back(std::move(rec));
  }
  return records;
}

KeyList LogSequence::keys() const {
  KeyList out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(e.key);
  return out;
}

PartitionSpec PartitionSpec::count(std::int64_t size, std::int64_t stride) {
  if (size <= 0 || stride <= 0 || stride > size)
    throw ContractError("count window needs 0 < stride <= size");
  return {Mode::count_window, size, stride};
}

PartitionSpec PartitionSpec::time(std::int64_t duration, std::int64_t stride) {
  if (duration <= 0 || stride <= 0 || stride > duration)
    throw ContractError("time window needs 0 < stride <= duration");
  return {Mode::time_window, duration, stride};
}

PartitionSpec PartitionSpec::parse(std::string_view text) {
  if (text == "identifier") return identifier();
  auto parts = split(text, ':');
  if (parts.size() < 2 || parts.size() > 3 || (parts[0] != "count" && parts[0] != "time"))
    throw ContractError("bad partition spec '" + std::string(text) + "'");
  std::int64_t size = 0;
  std::int64_t stride = 0;
  try {
    size = std::stoll(parts[1]);
    stride = parts.size() == 3 ? std::stoll(parts[2]) : size;
  } catch (const std::exception&) {
    throw ContractError("bad partition spec '" + std::string(text) + "'");
  }
  return parts[0] == "count" ? count(size, stride) : time(size, stride);
}

bool label_sequence(std::span<const bool> event_labels) {
  return std::any_of(event_labels.begin(), event_labels.end(), [](bool b) { return b; });
}

namespace {

LogSequence make_sequence(std::string id, std::span<const ParsedRecord* const> recs,
                          const TemplateCatalog& catalog) {
  LogSequence seq{std::move(id), {}, std::nullopt};
  seq.events.reserve(recs.size());
  bool any_label = false;
  bool abnormal = false;
  for (const auto* r : recs) {
    seq.events.push_back({r->key, catalog.at(r->key).text});
    if (r->label) {
      any_label = true;
      abnormal = abnormal || *r->label;
    }
  }
  if (any_label) seq.label = abnormal;
  return seq;
}

}  // namespace

std::vector<LogSequence> partition(std::span<const ParsedRecord> records, const PartitionSpec& spec,
                                   const TemplateCatalog& catalog) {
  std::vector<LogSequence> out;
  if (records.empty()) return out;

  switch (spec.mode) {
    case PartitionSpec::Mode::identifier: {
      std::vector<std::string> order;
      std::unordered_map<std::string, std::vector<const ParsedRecord*>> groups;
      for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!r.group_id)
          throw ContractError("record " + std::to_string(i) + " has no group_id");
        auto [it, inserted] = groups.try_emplace(*r.group_id);
        if (inserted) order.push_back(*r.group_id);
        it->second.push_back(&r);
      }
      for (const auto& id : order) out.push_back(make_sequence(id, groups[id], catalog));
      break;
    }
    case PartitionSpec::Mode::count_window: {
      if (spec.window_size <= 0 || spec.stride <= 0)
        throw ContractError("count window requires positive size and stride");
      const auto n = records.size();
      if (n == 0) break;
      const auto w = static_cast<std::size_t>(spec.window_size);
      const auto s = static_cast<std::size_t>(spec.stride);
      std::vector<const ParsedRecord*> window;
      for (std::size_t start = 0, idx = 0;; start += s, ++idx) {
        const auto end = std::min(start + w, n);
        window.clear();
        for (std::size_t i = start; i < end; ++i) window.push_back(&records[i]);
        out.push_back(make_sequence("w" + std::to_string(idx), window, catalog));
        if (start + w >= n) break;
      }
      break;
    }
    case PartitionSpec::Mode::time_window: {
      if (spec.window_size <= 0 || spec.stride <= 0)
        throw ContractError("time window requires positive duration and stride");
      std::vector<const ParsedRecord*> sorted;
      sorted.reserve(records.size());
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].timestamp)
          throw ContractError("record " + std::to_string(i) + " has no timestamp");
        sorted.push_back(&records[i]);
      }
      std::stable_sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
        return *a->timestamp < *b->timestamp;
      });
      const auto first = *sorted.front()->timestamp;
      const auto last = *sorted.back()->timestamp;
      std::size_t lo = 0;
      std::size_t idx = 0;
      std::vector<const ParsedRecord*> window;
      for (auto start = first; start <= last; start += spec.stride) {
        while (lo < sorted.size() && *sorted[lo]->timestamp < start) ++lo;
        window.clear();
        for (auto i = lo; i < sorted.size() && *sorted[i]->timestamp < start + spec.window_size; ++i)
          window.push_back(sorted[i]);
        if (!window.empty()) out.push_back(make_sequence("t" + std::to_string(idx++), window, catalog));
      }
      break;
    }
  }
  return out;
}

ParseResult parse_records(std::span<const RawLogRecord> raw, const TemplateCatalog& catalog) {
  ParseResult result;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    if (auto m = catalog.match(r.message)) {
      result.records.push_back({std::move(m->key), r.timestamp, r.group_id, r.label});
    } else {
      result.skipped.push_back({i, r.message});
    }
  }
  return result;
}

std::vector<LogSequence> load_sequences(const std::filesystem::path& path,
                                        const TemplateCatalog* catalog) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open sequence file " + path.string());
  std::vector<LogSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    LogSequence seq;
    try {
      auto row = json::parse(line);
      seq.id = json_scalar_to_string(row.at("id"));
      for (const auto& k : row.at("keys")) {
        LogKey key = json_scalar_to_string(k);
        std::string text;
        if (catalog) {
          const auto* t = catalog->find(key);
          if (!t) throw LookupError(key, "sequence " + seq.id + ", line " + std::to_string(line_no));
          text = t->text;
        }
        seq.events.push_back({std::move(key), std::move(text)});
      }
      if (auto it = row.find("label"); it != row.end() && !it->is_null()) seq.label = it->get<bool>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad sequence record: ") + e.what(), line_no);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void save_sequences(std::span<const LogSequence> sequences, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& s : sequences) {
    json row{{"id", s.id}, {"keys", s.keys()}};
    if (s.label) row["label"] = *s.label;
    out << row.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

}  // namespace krone
