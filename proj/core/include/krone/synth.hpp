#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "krone/hierarchy.hpp"
#include "krone/ingest.hpp"

namespace krone {

/// Login/web system corpus generator. Normal behaviour is composed from 20
/// status-level patterns, per-entity action patterns and five entity
/// workflows; anomalies are injected at exactly one level each.
struct SynthConfig {
  std::size_t train = 200;
  std::size_t test = 800;
  /// Fraction of test sequences carrying an anomaly at each level.
  double status_rate = 0.1;
  double action_rate = 0.1;
  double entity_rate = 0.1;
  /// Fraction of test sequences (kept normal) with an unseen but benign
  /// status pattern.
  double benign_rate = 0.0;
  std::uint64_t seed = 42;
};

enum class Injection : std::uint8_t { none, status, action, entity, benign };

std::string_view to_string(Injection injection) noexcept;

struct Corpus {
  TemplateCatalog catalog;
  std::vector<TopicTriple> triples;
  std::vector<LogSequence> train;
  std::vector<LogSequence> test;
  std::vector<Injection> test_injection;
  /// Signatures of the benign unseen status Seqs (for scripting a mock LLM).
  std::vector<std::string> benign_signatures;
  /// The normal status-level key patterns, as (entity, action, keys).
  struct Pattern {
    std::string entity;
    std::string action;
    KeyList keys;
  };
  std::vector<Pattern> atomic_patterns;
};

Corpus generate_corpus(const SynthConfig& config);

/// Writes templates.csv, triples.jsonl, train.jsonl and test.jsonl (parsed
/// sequences) plus train_logs.jsonl and test_logs.jsonl (raw records grouped
/// by sequence id) under `dir`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir, std::uint64_t seed = 7);

}  // namespace krone
