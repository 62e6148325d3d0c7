#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "krone/detect.hpp"
#include "krone/eval.hpp"
#include "krone/hierarchy.hpp"
#include "krone/ingest.hpp"
#include "krone/provider.hpp"

namespace krone {

/// Parsed pipeline config. JSON with sections "ingest", "hierarchy", "train",
/// "detect" and "eval"; relative paths resolve against the config's folder.
struct PipelineConfig {
  std::filesystem::path base_dir;
  std::filesystem::path workdir = "out";
  /// Stages to run; the rest load their artifacts from `workdir`.
  std::set<std::string> stages{"ingest", "hierarchy", "train", "detect", "eval"};

  // ingest
  std::filesystem::path templates;
  std::filesystem::path train_logs;
  std::filesystem::path test_logs;
  std::filesystem::path train_sequences;
  std::filesystem::path test_sequences;
  std::string partition = "identifier";

  // hierarchy
  ExtractorConfig extractor;
  std::optional<ProviderConfig> hierarchy_provider;

  // train / detect
  DetectConfig detect;
  std::optional<ProviderConfig> provider;
  bool reuse_test_kb = true;

  // eval
  bool attribution = true;

  /// Throws ContractError (exit code 2 territory) on a malformed config.
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
};

struct PipelineResult {
  MetricsReport metrics;
  StructureReport structure;
  std::optional<AttributionReport> attribution;
  std::size_t llm_calls = 0;
  std::string summary;
};

/// Runs ingest, hierarchy, train, detect and eval in order, writing every
/// artifact under the workdir. Failures are rethrown as StageError.
PipelineResult run_pipeline(const PipelineConfig& config);

/// Artifact locations inside a workdir.
struct PipelinePaths {
  std::filesystem::path root;
  std::filesystem::path train_sequences() const { return root / "train.jsonl"; }
  std::filesystem::path test_sequences() const { return root / "test.jsonl"; }
  std::filesystem::path skipped() const { return root / "skipped.jsonl"; }
  std::filesystem::path triples() const { return root / "triples.jsonl"; }
  std::filesystem::path tree() const { return root / "tree.json"; }
  std::filesystem::path kb_dir() const { return root / "kb"; }
  std::filesystem::path report() const { return root / "report.jsonl"; }
  std::filesystem::path decompositions() const { return root / "decompositions.jsonl"; }
  std::filesystem::path metrics() const { return root / "metrics.json"; }
  std::filesystem::path structure() const { return root / "structure.json"; }
  std::filesystem::path attribution() const { return root / "attribution.json"; }
};

}  // namespace krone
