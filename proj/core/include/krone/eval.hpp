#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "krone/decompose.hpp"
#include "krone/detect.hpp"
#include "krone/hierarchy.hpp"
#include "krone/knowledge.hpp"

namespace krone {

struct MetricsReport {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;

  /// Precision is 0 when tp + fp = 0, recall 0 when tp + fn = 0 and F1 0
  /// when precision + recall = 0.
  static MetricsReport from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
  nlohmann::json to_json() const;
};

/// `true` means abnormal in both spans. Throws ContractError on a length
/// mismatch.
MetricsReport compute_metrics(std::span<const bool> predictions, std::span<const bool> labels);
/// Uses every report that carries a label.
MetricsReport compute_metrics(std::span<const SequenceReport> reports);

struct LevelStructure {
  std::size_t nodes = 0;
  std::size_t unique_seqs = 0;
  std::size_t occurrences = 0;
  /// occurrences / unique_seqs, 0 for an empty level.
  double reuse = 0;
};

/// Cardinality, reuse and resource tallies. Key counts are indexed by level
/// set: 0 = S, 1 = SA, 2 = SAE.
struct StructureReport {
  std::array<LevelStructure, 3> levels;  // by level_slot
  std::size_t raw_test_keys = 0;
  std::size_t test_sequences = 0;
  /// Σ|chunk| over every Seq of the decomposed test sequences.
  std::array<std::size_t, 3> key_counts{};
  /// Σ|chunk| over distinct (level, chunk) pairs, i.e. after test-KB reuse.
  std::array<std::size_t, 3> unique_key_counts{};
  /// Σ keys_processed from detect reports (early exit and levels applied).
  std::array<std::size_t, 3> evaluated_key_counts{};
  std::size_t llm_calls = 0;
  double llm_call_ratio = 0;

  nlohmann::json to_json() const;
};

StructureReport structure_report(const KbSet& kbs, const KroneTree& tree,
                                 std::span<const DecompositionResult> test_decompositions,
                                 std::span<const SequenceReport> reports);

/// For each labelled-abnormal report, the set of levels that flagged it, as
/// a bucket name ("S", "A", "E", "S+A", "S+E", "A+E", "S+A+E" or "none").
struct AttributionReport {
  std::map<std::string, std::size_t> buckets;
  std::size_t anomalies = 0;

  double fraction(const std::string& bucket) const;
  nlohmann::json to_json() const;
};

std::string attribution_bucket(std::span<const Level> levels);
AttributionReport attribution_report(std::span<const SequenceReport> reports);

/// Fixed-width summary table for standard output.
std::string format_summary(const MetricsReport& metrics, const StructureReport* structure = nullptr);

}  // namespace krone
