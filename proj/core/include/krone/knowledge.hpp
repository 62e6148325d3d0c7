#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "krone/decompose.hpp"
#include "krone/types.hpp"

namespace krone {

using Embedding = std::vector<double>;

/// A node-name transition under one parent; nullopt marks start or end.
using Transition = std::pair<std::optional<std::string>, std::optional<std::string>>;

struct TrainEntry {
  std::string signature;
  std::vector<std::string> parent_path;
  std::vector<std::string> nodes;
  KeyList example_chunk;
  std::size_t occurrence_count = 0;
  std::optional<std::string> summary;
  std::optional<Embedding> embedding;

  friend bool operator==(const TrainEntry&, const TrainEntry&) = default;
};

enum class VerdictSource : std::uint8_t { pattern_match, automaton, llm, cache };

std::string_view to_string(VerdictSource source) noexcept;
VerdictSource parse_verdict_source(std::string_view text);

struct TestEntry {
  std::string signature;
  std::string chunk_key;
  Verdict verdict = Verdict::normal;
  std::optional<std::string> explanation;
  std::optional<std::string> summary;
  std::optional<Embedding> embedding;
  VerdictSource source = VerdictSource::pattern_match;
  bool low_confidence = false;

  friend bool operator==(const TestEntry&, const TestEntry&) = default;
};

/// Normal Seqs of one level, deduplicated by signature, plus the per-parent
/// transition sets used by the automaton detector. Reads may run concurrently;
/// writes are serialised internally.
class TrainKnowledgeBase {
 public:
  explicit TrainKnowledgeBase(Level level = Level::entity);
  TrainKnowledgeBase(const TrainKnowledgeBase& other);
  TrainKnowledgeBase& operator=(const TrainKnowledgeBase& other);

  Level level() const noexcept { return level_; }

  /// New signature: entry with count 1 and this chunk as its example.
  /// Known signature: count + 1. Throws ContractError on a level mismatch.
  void insert(const KroneSeq& seq);
  bool contains(std::string_view signature) const;
  std::optional<TrainEntry> get(std::string_view signature) const;
  std::size_t size() const;
  bool empty() const { return size() == 0; }
  /// Entries ordered by signature.
  std::vector<TrainEntry> entries() const;

  /// True iff start->first, every adjacent pair and last->end were observed
  /// under `parent_key`.
  bool accepts(std::string_view parent_key, std::span<const std::string> nodes) const;
  std::set<Transition> transitions(std::string_view parent_key) const;

  /// Up to `m` entries under the same parent by descending cosine similarity;
  /// ties go to the higher count, then the smaller signature. Throws
  /// RetrievalError if a sibling has no embedding.
  std::vector<TrainEntry> retrieve_similar(std::string_view parent_key, std::span<const double> query,
                                           std::size_t m) const;

  void set_summary(std::string_view signature, std::string summary);
  void set_embedding(std::string_view signature, Embedding embedding);

  void save(const std::filesystem::path& path) const;
  static TrainKnowledgeBase load(const std::filesystem::path& path);

  friend bool operator==(const TrainKnowledgeBase& a, const TrainKnowledgeBase& b);

 private:
  TrainEntry& entry_locked(std::string_view signature);

  Level level_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, TrainEntry, std::less<>> entries_;
  std::map<std::string, std::set<Transition>, std::less<>> transitions_;
  std::map<std::string, std::vector<std::string>, std::less<>> by_parent_;
};

/// Chunk-keyed cache of test-time verdicts for one level.
class TestKnowledgeBase {
 public:
  explicit TestKnowledgeBase(Level level = Level::entity);
  TestKnowledgeBase(const TestKnowledgeBase& other);
  TestKnowledgeBase& operator=(const TestKnowledgeBase& other);

  Level level() const noexcept { return level_; }
  std::optional<TestEntry> lookup(std::string_view chunk_key) const;
  /// Inserts or replaces the entry for `entry.chunk_key`.
  void store(TestEntry entry);
  std::size_t size() const;
  std::vector<TestEntry> entries() const;
  void clear();

  void save(const std::filesystem::path& path) const;
  static TestKnowledgeBase load(const std::filesystem::path& path);

  friend bool operator==(const TestKnowledgeBase& a, const TestKnowledgeBase& b);

 private:
  Level level_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, TestEntry, std::less<>> entries_;
};

/// Train and test KBs for the three detection levels.
struct KbSet {
  std::array<TrainKnowledgeBase, 3> train{TrainKnowledgeBase(Level::status), TrainKnowledgeBase(Level::action),
                                          TrainKnowledgeBase(Level::entity)};
  std::array<TestKnowledgeBase, 3> test{TestKnowledgeBase(Level::status), TestKnowledgeBase(Level::action),
                                        TestKnowledgeBase(Level::entity)};

  TrainKnowledgeBase& train_kb(Level level) { return train[level_slot(level)]; }
  const TrainKnowledgeBase& train_kb(Level level) const { return train[level_slot(level)]; }
  TestKnowledgeBase& test_kb(Level level) { return test[level_slot(level)]; }
  const TestKnowledgeBase& test_kb(Level level) const { return test[level_slot(level)]; }

  /// Inserts every Seq of a decomposition into its level's train KB.
  void insert(const DecompositionResult& result);

  /// Writes kb/train_<level>.json and kb/test_<level>.json under `dir`.
  void save(const std::filesystem::path& dir) const;
  void save_test(const std::filesystem::path& dir) const;
  /// Train files are required; missing test files give empty caches.
  static KbSet load(const std::filesystem::path& dir);

  friend bool operator==(const KbSet&, const KbSet&) = default;
};

std::filesystem::path kb_file(const std::filesystem::path& dir, std::string_view role, Level level);

void kb_insert_train(TrainKnowledgeBase& kb, const KroneSeq& seq);
bool kb_contains(const TrainKnowledgeBase& kb, std::string_view signature);
std::vector<TrainEntry> kb_retrieve_similar(const TrainKnowledgeBase& kb, std::span<const std::string> parent_path,
                                            std::span<const double> query, std::size_t m);
std::optional<TestEntry> test_kb_lookup(const TestKnowledgeBase& kb, std::string_view chunk_key);
void test_kb_store(TestKnowledgeBase& kb, TestEntry entry);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace krone
