#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "krone/decompose.hpp"
#include "krone/hierarchy.hpp"
#include "krone/ingest.hpp"
#include "krone/knowledge.hpp"
#include "krone/prompts.hpp"
#include "krone/provider.hpp"
#include "krone/semantics.hpp"

namespace krone {

enum class LocalDetector : std::uint8_t { exact, automaton };

std::string_view to_string(LocalDetector d) noexcept;
LocalDetector parse_local_detector(std::string_view text);

struct DetectConfig {
  /// Indexed by level_slot: status, action, entity.
  std::array<bool, 3> levels_enabled{true, true, true};
  std::array<LocalDetector, 3> detector{LocalDetector::exact, LocalDetector::exact, LocalDetector::exact};
  bool llm_enabled = false;
  std::size_t m = 5;
  bool early_exit = true;
  double llm_phase_fraction = 1.0;
  /// Maximum LLM detection calls per run; nullopt is unlimited.
  std::optional<std::size_t> llm_budget;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  int llm_retry_limit = 2;

  bool level_enabled(Level level) const { return levels_enabled[level_slot(level)]; }
  LocalDetector detector_for(Level level) const { return detector[level_slot(level)]; }

  /// "S", "SA" or "SAE".
  void set_levels(std::string_view preset);
  std::string levels_string() const;
  /// "exact", "automaton", "automaton:level=entity" or "automaton:level=E,A".
  /// Levels not listed fall back to exact.
  void set_detector(std::string_view spec);

  /// Throws ContractError for a preset without status, a fraction outside
  /// [0,1] or m above 7.
  void validate() const;
};

enum class Confidence : std::uint8_t { normal, low };

struct SeqVerdict {
  std::string signature;
  Level level = Level::status;
  std::string chunk_key;
  Verdict verdict = Verdict::normal;
  VerdictSource source = VerdictSource::pattern_match;
  std::optional<std::string> explanation;
  Confidence confidence = Confidence::normal;

  friend bool operator==(const SeqVerdict&, const SeqVerdict&) = default;
};

struct DetectCounters {
  std::size_t pattern_checks = 0;
  std::size_t cache_hits = 0;
  std::size_t llm_calls = 0;
  std::size_t provider_errors = 0;
  /// Indexed by level_slot.
  std::array<std::size_t, 3> seqs_evaluated{};
  std::array<std::size_t, 3> keys_processed{};

  friend bool operator==(const DetectCounters&, const DetectCounters&) = default;
};

struct SequenceReport {
  std::string sequence_id;
  bool final_verdict = false;  // true = abnormal
  std::optional<bool> label;
  std::vector<SeqVerdict> verdicts;
  std::optional<Level> first_abnormal_level;
  DetectCounters counters;
  std::optional<std::string> error;

  /// Levels with at least one abnormal Seq, bottom-up.
  std::vector<Level> abnormal_levels() const;

  friend bool operator==(const SequenceReport&, const SequenceReport&) = default;
};

SeqVerdict detect_local_exact(const KroneSeq& seq, const TrainKnowledgeBase& kb);
SeqVerdict detect_local_automaton(const KroneSeq& seq, const TrainKnowledgeBase& kb);

/// Computes missing summaries and embeddings of train entries by decomposing
/// each example chunk again.
void enrich_train_kbs(KbSet& kbs, const KroneTree& tree, Summarizer& summarizer, std::size_t embedding_dim);

/// Decomposes normal sequences into the train KBs. With a summarizer the
/// entries also get summaries and embeddings. Throws Error listing every
/// sequence that failed to decompose.
KbSet train(std::span<const LogSequence> sequences, const KroneTree& tree, const DetectConfig& config,
            Summarizer* summarizer = nullptr);

/// Hybrid detection over shared KBs. Not thread-safe across concurrent
/// detect_sequence calls on one instance; KB writes are serialised by the KBs.
class Detector {
 public:
  Detector(const KroneTree& tree, KbSet& kbs, DetectConfig config, LlmProvider* provider = nullptr,
           const TemplateCatalog* catalog = nullptr, const PromptLibrary& prompts = PromptLibrary::defaults());

  /// Cache, then the Local-Context detector, then the LLM when enabled,
  /// allowed and within budget. Every outcome is stored in the test KB.
  SeqVerdict detect_seq(const KroneSeq& seq, const DecompositionResult& result, bool llm_allowed,
                        DetectCounters& counters);

  /// Status Seqs, then action, then entity, restricted to enabled levels.
  SequenceReport detect_sequence(const LogSequence& sequence, bool llm_allowed = true);

  /// Train entries get summaries and embeddings before the first LLM call.
  /// Applies llm_phase_fraction: only the first floor(fraction * n)
  /// sequences may call the LLM.
  std::vector<SequenceReport> detect_all(std::span<const LogSequence> sequences);

  std::size_t llm_calls() const noexcept { return llm_calls_; }
  const DetectConfig& config() const noexcept { return config_; }

 private:
  const KroneTree& tree_;
  KbSet& kbs_;
  DetectConfig config_;
  LlmProvider* provider_;
  const PromptLibrary& prompts_;
  std::optional<Summarizer> summarizer_;
  std::size_t llm_calls_ = 0;
  bool enriched_ = false;
};

SequenceReport detect_sequence(const LogSequence& sequence, const KroneTree& tree, KbSet& kbs,
                               LlmProvider* provider, const DetectConfig& config);

/// First line: {"type":"metadata", ...}; then one record per sequence.
void write_reports(const std::filesystem::path& path, std::span<const SequenceReport> reports,
                   const nlohmann::json& metadata);
std::vector<SequenceReport> read_reports(const std::filesystem::path& path);
nlohmann::json report_to_json(const SequenceReport& report);
SequenceReport report_from_json(const nlohmann::json& row);

}  // namespace krone
