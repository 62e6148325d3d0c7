#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "krone/ingest.hpp"
#include "krone/types.hpp"

namespace krone {

class LlmProvider;
class PromptLibrary;

/// (entity, action, status) extracted from one template.
struct TopicTriple {
  LogKey key;
  std::string entity;
  std::string action;
  std::string status{kNoneStatus};

  friend bool operator==(const TopicTriple&, const TopicTriple&) = default;
};

std::vector<TopicTriple> load_triples(const std::filesystem::path& path);
void save_triples(std::span<const TopicTriple> triples, const std::filesystem::path& path);

struct KroneNode {
  NodeId id{};
  Level level = Level::root;
  std::string name;
  std::optional<NodeId> parent;
  std::optional<LogKey> key;  // status nodes only
  std::vector<NodeId> children;

  friend bool operator==(const KroneNode&, const KroneNode&) = default;
};

/// Rooted three-level hierarchy root -> entities -> actions -> statuses, each
/// status bound to exactly one log key. Immutable once built.
class KroneTree {
 public:
  KroneTree();

  /// Builds the tree with hash indexes in time linear in |triples|. Throws
  /// DuplicateKeyError when two triples share a key and ContractError on an
  /// empty entity or action. Distinct keys that share an (entity, action,
  /// status) triple get status names suffixed with `_<key>` so the
  /// status-to-key mapping stays one-to-one.
  static KroneTree build(std::span<const TopicTriple> triples);

  const KroneNode& root() const { return nodes_.front(); }
  const KroneNode& node(NodeId id) const;
  std::span<const KroneNode> nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t count(Level level) const;

  bool contains_key(std::string_view key) const;
  /// Status node for `status`, its parent for `action`, grandparent for
  /// `entity`, root for `root`. Throws LookupError on an unknown key.
  const KroneNode& lookup(std::string_view key, Level level) const;
  /// Child of `parent` at `level` named `name`, or nullptr.
  const KroneNode* find(Level level, NodeId parent, std::string_view name) const;

  /// Names from the root down to and including `id`.
  std::vector<std::string> path_names(NodeId id) const;

  /// Throws IntegrityError if any structural invariant is broken.
  void validate() const;

  /// Recovers the triple of every key (status names as stored in the tree).
  std::vector<TopicTriple> triples() const;

  void save(const std::filesystem::path& path) const;
  static KroneTree load(const std::filesystem::path& path);

  friend bool operator==(const KroneTree& a, const KroneTree& b) { return a.nodes_ == b.nodes_; }

 private:
  NodeId add_node(Level level, std::string name, NodeId parent, std::optional<LogKey> key);
  static std::string index_key(Level level, NodeId parent, std::string_view name);

  std::vector<KroneNode> nodes_;
  std::unordered_map<std::string, NodeId> key_index_;
  std::unordered_map<std::string, NodeId> name_index_;
};

/// Deterministic extraction rules loaded from JSON:
/// {"entities": {"session": "Session"}, "actions": {...}, "statuses": {...},
///  "synonyms": {...}, "stopwords": [...], "default_entity": "System"}.
/// Keys are lower-case surface phrases of up to three tokens.
struct Lexicon {
  std::map<std::string, std::string> entities;
  std::map<std::string, std::string> actions;
  std::map<std::string, std::string> statuses;
  std::map<std::string, std::string> synonyms;
  std::set<std::string> stopwords;
  std::string default_entity = "System";
  bool trailing_status = true;

  static Lexicon load(const std::filesystem::path& path);
};

struct ExtractorConfig {
  enum class Kind { fixture, lexicon, llm };
  Kind kind = Kind::fixture;
  std::filesystem::path fixture_path;
  std::filesystem::path lexicon_path;
  std::filesystem::path prompt_dir;
  bool refinement_enabled = true;
  std::size_t parallelism = 4;
  /// Synonym table for deterministic refinement (lower-case name -> canonical).
  std::map<std::string, std::string> synonyms;

  static Kind parse_kind(std::string_view text);
};

/// Entity first, then action given the entity, then status given the action.
/// Throws ExtractionError listing every key that could not be extracted.
std::vector<TopicTriple> extract_topics(const TemplateCatalog& catalog, const ExtractorConfig& config,
                                        LlmProvider* provider = nullptr);

/// Lexicon rules for a single template.
TopicTriple extract_with_lexicon(const LogTemplate& tmpl, const Lexicon& lexicon);

/// Refinement pass. Statuses are never touched. With a provider, entities are
/// selected-or-generated from the pooled entity set, then actions from that
/// entity's pooled actions. Without one, names are canonicalised: grouped by
/// case-folded form (after `synonyms`), each group taking its most frequent
/// spelling, ties to the lexicographically smallest.
std::vector<TopicTriple> refine_topics(std::vector<TopicTriple> triples,
                                       const std::map<std::string, std::string>& synonyms = {},
                                       LlmProvider* provider = nullptr,
                                       const TemplateCatalog* catalog = nullptr,
                                       const PromptLibrary* prompts = nullptr);

}  // namespace krone
