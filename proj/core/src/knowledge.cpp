#include "krone/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <nlohmann/json.hpp>

#include "io_util.hpp"
#include "krone/error.hpp"

namespace krone {

using json = nlohmann::json;

namespace {

constexpr int kKbFormatVersion = 1;

json optional_name(const std::optional<std::string>& n) { return n ? json(*n) : json(nullptr); }

std::optional<std::string> read_optional_name(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::string>();
}

json parse_kb_file(const std::filesystem::path& path, std::string_view role) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError("knowledge base " + path.string() + " is not valid JSON: " + e.what());
  } catch (const Error& e) {
    throw FormatError("cannot read knowledge base " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("format_version", -1) != kKbFormatVersion)
    throw FormatError("knowledge base " + path.string() + " has an unsupported format_version");
  if (doc.value("role", "") != role)
    throw FormatError("knowledge base " + path.string() + " is not a " + std::string(role) + " KB");
  return doc;
}

}  // namespace

std::string_view to_string(VerdictSource source) noexcept {
  switch (source) {
    case VerdictSource::pattern_match: return "pattern_match";
    case VerdictSource::automaton: return "automaton";
    case VerdictSource::llm: return "llm";
    case VerdictSource::cache: return "cache";
  }
  return "?";
}

VerdictSource parse_verdict_source(std::string_view text) {
  if (text == "pattern_match") return VerdictSource::pattern_match;
  if (text == "automaton") return VerdictSource::automaton;
  if (text == "llm") return VerdictSource::llm;
  if (text == "cache") return VerdictSource::cache;
  throw ContractError("unknown verdict source: " + std::string(text));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw RetrievalError("embedding dimensions differ");
  double dot = 0;
  double na = 0;
  double nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------- train KB

TrainKnowledgeBase::TrainKnowledgeBase(Level level) : level_(level) {}

TrainKnowledgeBase::TrainKnowledgeBase(const TrainKnowledgeBase& other) {
  std::shared_lock lock(other.mutex_);
  level_ = other.level_;
  entries_ = other.entries_;
  transitions_ = other.transitions_;
  by_parent_ = other.by_parent_;
}

TrainKnowledgeBase& TrainKnowledgeBase::operator=(const TrainKnowledgeBase& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  level_ = other.level_;
  entries_ = other.entries_;
  transitions_ = other.transitions_;
  by_parent_ = other.by_parent_;
  return *this;
}

bool operator==(const TrainKnowledgeBase& a, const TrainKnowledgeBase& b) {
  if (&a == &b) return true;
  std::shared_lock la(a.mutex_);
  std::shared_lock lb(b.mutex_);
  return a.level_ == b.level_ && a.entries_ == b.entries_ && a.transitions_ == b.transitions_;
}

void TrainKnowledgeBase::insert(const KroneSeq& seq) {
  if (seq.level != level_)
    throw ContractError("cannot insert a " + std::string(to_string(seq.level)) + " Seq into the " +
                        std::string(to_string(level_)) + " KB");
  const auto parent = parent_key(seq.parent_names);
  std::unique_lock lock(mutex_);
  auto [it, inserted] = entries_.try_emplace(seq.signature);
  if (inserted) {
    it->second = {seq.signature, seq.parent_names, seq.node_names, seq.chunk, 0, std::nullopt, std::nullopt};
    by_parent_[parent].push_back(seq.signature);
  }
  ++it->second.occurrence_count;

  auto& trans = transitions_[parent];
  std::optional<std::string> prev;
  for (const auto& name : seq.node_names) {
    trans.emplace(prev, name);
    prev = name;
  }
  trans.emplace(prev, std::nullopt);
}

bool TrainKnowledgeBase::contains(std::string_view signature) const {
  std::shared_lock lock(mutex_);
  return entries_.find(signature) != entries_.end();
}

std::optional<TrainEntry> TrainKnowledgeBase::get(std::string_view signature) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(signature);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t TrainKnowledgeBase::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<TrainEntry> TrainKnowledgeBase::entries() const {
  std::shared_lock lock(mutex_);
  std::vector<TrainEntry> out;
  out.reserve(entries_.size());
  for (const auto& [_, e] : entries_) out.push_back(e);
  return out;
}

bool TrainKnowledgeBase::accepts(std::string_view parent, std::span<const std::string> nodes) const {
  std::shared_lock lock(mutex_);
  auto it = transitions_.find(parent);
  if (it == transitions_.end()) return false;
  const auto& trans = it->second;
  std::optional<std::string> prev;
  for (const auto& name : nodes) {
    if (!trans.contains({prev, name})) return false;
    prev = name;
  }
  return trans.contains({prev, std::nullopt});
}

std::set<Transition> TrainKnowledgeBase::transitions(std::string_view parent) const {
  std::shared_lock lock(mutex_);
  auto it = transitions_.find(parent);
  return it == transitions_.end() ? std::set<Transition>{} : it->second;
}

std::vector<TrainEntry> TrainKnowledgeBase::retrieve_similar(std::string_view parent, std::span<const double> query,
                                                             std::size_t m) const {
  std::shared_lock lock(mutex_);
  auto it = by_parent_.find(parent);
  if (it == by_parent_.end() || m == 0) return {};

  struct Scored {
    double score;
    const TrainEntry* entry;
  };
  std::vector<Scored> scored;
  scored.reserve(it->second.size());
  for (const auto& sig : it->second) {
    const auto& e = entries_.find(sig)->second;
    if (!e.embedding)
      throw RetrievalError("train entry " + sig + " has no embedding; re-embed the " +
                           std::string(to_string(level_)) + " KB");
    scored.push_back({cosine_similarity(*e.embedding, query), &e});
  }
  const auto k = std::min(m, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const Scored& a, const Scored& b) {
                      if (a.score != b.score) return a.score > b.score;
                      if (a.entry->occurrence_count != b.entry->occurrence_count)
                        return a.entry->occurrence_count > b.entry->occurrence_count;
                      return a.entry->signature < b.entry->signature;
                    });
  std::vector<TrainEntry> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(*scored[i].entry);
  return out;
}

TrainEntry& TrainKnowledgeBase::entry_locked(std::string_view signature) {
  auto it = entries_.find(signature);
  if (it == entries_.end()) throw ContractError("no train entry " + std::string(signature));
  return it->second;
}

void TrainKnowledgeBase::set_summary(std::string_view signature, std::string summary) {
  std::unique_lock lock(mutex_);
  entry_locked(signature).summary = std::move(summary);
}

void TrainKnowledgeBase::set_embedding(std::string_view signature, Embedding embedding) {
  std::unique_lock lock(mutex_);
  entry_locked(signature).embedding = std::move(embedding);
}

void TrainKnowledgeBase::save(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  json entries = json::array();
  for (const auto& [sig, e] : entries_) {
    json row{{"signature", e.signature},
             {"parent_path", e.parent_path},
             {"nodes", e.nodes},
             {"example_chunk", e.example_chunk},
             {"occurrence_count", e.occurrence_count}};
    if (e.summary) row["summary"] = *e.summary;
    if (e.embedding) row["embedding"] = *e.embedding;
    entries.push_back(std::move(row));
  }
  json transitions = json::object();
  for (const auto& [parent, set] : transitions_) {
    json pairs = json::array();
    for (const auto& [from, to] : set) pairs.push_back(json::array({optional_name(from), optional_name(to)}));
    transitions[parent] = std::move(pairs);
  }
  json doc{{"format_version", kKbFormatVersion},
           {"role", "train"},
           {"level", to_string(level_)},
           {"entries", std::move(entries)},
           {"transitions", std::move(transitions)}};
  write_file_atomic(path, doc.dump(1) + "\n");
}

TrainKnowledgeBase TrainKnowledgeBase::load(const std::filesystem::path& path) {
  const auto doc = parse_kb_file(path, "train");
  try {
    TrainKnowledgeBase kb(parse_level(doc.at("level").get<std::string>()));
    for (const auto& row : doc.at("entries")) {
      TrainEntry e;
      e.signature = row.at("signature").get<std::string>();
      e.parent_path = row.at("parent_path").get<std::vector<std::string>>();
      e.nodes = row.at("nodes").get<std::vector<std::string>>();
      e.example_chunk = row.at("example_chunk").get<KeyList>();
      e.occurrence_count = row.at("occurrence_count").get<std::size_t>();
      if (row.contains("summary")) e.summary = row.at("summary").get<std::string>();
      if (row.contains("embedding")) e.embedding = row.at("embedding").get<Embedding>();
      if (e.occurrence_count == 0) throw FormatError("entry " + e.signature + " has a zero count");
      if (seq_signature(e.parent_path, e.nodes) != e.signature)
        throw FormatError("entry " + e.signature + " disagrees with its parent path and nodes");
      kb.by_parent_[parent_key(e.parent_path)].push_back(e.signature);
      auto sig = e.signature;
      kb.entries_.emplace(std::move(sig), std::move(e));
    }
    for (const auto& [parent, pairs] : doc.at("transitions").items()) {
      auto& set = kb.transitions_[parent];
      for (const auto& p : pairs) set.emplace(read_optional_name(p.at(0)), read_optional_name(p.at(1)));
    }
    return kb;
  } catch (const json::exception& e) {
    throw FormatError("knowledge base " + path.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw FormatError("knowledge base " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- test KB

TestKnowledgeBase::TestKnowledgeBase(Level level) : level_(level) {}

TestKnowledgeBase::TestKnowledgeBase(const TestKnowledgeBase& other) {
  std::shared_lock lock(other.mutex_);
  level_ = other.level_;
  entries_ = other.entries_;
}

TestKnowledgeBase& TestKnowledgeBase::operator=(const TestKnowledgeBase& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  level_ = other.level_;
  entries_ = other.entries_;
  return *this;
}

bool operator==(const TestKnowledgeBase& a, const TestKnowledgeBase& b) {
  if (&a == &b) return true;
  std::shared_lock la(a.mutex_);
  std::shared_lock lb(b.mutex_);
  return a.level_ == b.level_ && a.entries_ == b.entries_;
}

std::optional<TestEntry> TestKnowledgeBase::lookup(std::string_view key) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void TestKnowledgeBase::store(TestEntry entry) {
  std::unique_lock lock(mutex_);
  auto key = entry.chunk_key;
  entries_.insert_or_assign(std::move(key), std::move(entry));
}

std::size_t TestKnowledgeBase::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<TestEntry> TestKnowledgeBase::entries() const {
  std::shared_lock lock(mutex_);
  std::vector<TestEntry> out;
  for (const auto& [_, e] : entries_) out.push_back(e);
  return out;
}

void TestKnowledgeBase::clear() {
  std::unique_lock lock(mutex_);
  entries_.clear();
}

void TestKnowledgeBase::save(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  json entries = json::array();
  for (const auto& [_, e] : entries_) {
    json row{{"signature", e.signature},
             {"chunk_key", e.chunk_key},
             {"verdict", to_string(e.verdict)},
             {"source", to_string(e.source)},
             {"low_confidence", e.low_confidence}};
    if (e.explanation) row["explanation"] = *e.explanation;
    if (e.summary) row["summary"] = *e.summary;
    if (e.embedding) row["embedding"] = *e.embedding;
    entries.push_back(std::move(row));
  }
  json doc{{"format_version", kKbFormatVersion},
           {"role", "test"},
           {"level", to_string(level_)},
           {"entries", std::move(entries)}};
  write_file_atomic(path, doc.dump(1) + "\n");
}

TestKnowledgeBase TestKnowledgeBase::load(const std::filesystem::path& path) {
  const auto doc = parse_kb_file(path, "test");
  try {
    TestKnowledgeBase kb(parse_level(doc.at("level").get<std::string>()));
    for (const auto& row : doc.at("entries")) {
      TestEntry e;
      e.signature = row.at("signature").get<std::string>();
      e.chunk_key = row.at("chunk_key").get<std::string>();
      e.verdict = parse_verdict(row.at("verdict").get<std::string>());
      e.source = parse_verdict_source(row.at("source").get<std::string>());
      e.low_confidence = row.value("low_confidence", false);
      if (row.contains("explanation")) e.explanation = row.at("explanation").get<std::string>();
      if (row.contains("summary")) e.summary = row.at("summary").get<std::string>();
      if (row.contains("embedding")) e.embedding = row.at("embedding").get<Embedding>();
      auto key = e.chunk_key;
      if (!kb.entries_.emplace(std::move(key), std::move(e)).second)
        throw FormatError("duplicate chunk key in " + path.string());
    }
    return kb;
  } catch (const json::exception& e) {
    throw FormatError("knowledge base " + path.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw FormatError("knowledge base " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- set

std::filesystem::path kb_file(const std::filesystem::path& dir, std::string_view role, Level level) {
  return dir / (std::string(role) + "_" + std::string(to_string(level)) + ".json");
}

void KbSet::insert(const DecompositionResult& result) {
  for (const auto* seq : bottom_up(result)) train_kb(seq->level).insert(*seq);
}

void KbSet::save(const std::filesystem::path& dir) const {
  for (auto level : kBottomUpLevels) train_kb(level).save(kb_file(dir, "train", level));
  save_test(dir);
}

void KbSet::save_test(const std::filesystem::path& dir) const {
  for (auto level : kBottomUpLevels) test_kb(level).save(kb_file(dir, "test", level));
}

KbSet KbSet::load(const std::filesystem::path& dir) {
  KbSet set;
  for (auto level : kBottomUpLevels) {
    auto train = TrainKnowledgeBase::load(kb_file(dir, "train", level));
    if (train.level() != level) throw FormatError("train KB file for " + std::string(to_string(level)) + " has the wrong level");
    set.train_kb(level) = train;
    const auto test_path = kb_file(dir, "test", level);
    if (std::filesystem::exists(test_path)) {
      auto test = TestKnowledgeBase::load(test_path);
      if (test.level() != level) throw FormatError("test KB file for " + std::string(to_string(level)) + " has the wrong level");
      set.test_kb(level) = test;
    }
  }
  return set;
}

void kb_insert_train(TrainKnowledgeBase& kb, const KroneSeq& seq) { kb.insert(seq); }

bool kb_contains(const TrainKnowledgeBase& kb, std::string_view signature) { return kb.contains(signature); }

std::vector<TrainEntry> kb_retrieve_similar(const TrainKnowledgeBase& kb, std::span<const std::string> parent_path,
                                            std::span<const double> query, std::size_t m) {
  return kb.retrieve_similar(parent_key(parent_path), query, m);
}

std::optional<TestEntry> test_kb_lookup(const TestKnowledgeBase& kb, std::string_view key) { return kb.lookup(key); }

void test_kb_store(TestKnowledgeBase& kb, TestEntry entry) {
  if (entry.chunk_key.empty()) throw ContractError("test entry needs a chunk key");
  kb.store(std::move(entry));
}

}  // namespace krone
