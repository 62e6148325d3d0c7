#include "krone/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <spdlog/spdlog.h>
#include <sstream>

#include "io_util.hpp"
#include "krone/error.hpp"
#include "krone/semantics.hpp"

namespace krone {

using json = nlohmann::json;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::optional<ProviderConfig> provider_from(const json& section, const std::filesystem::path& base) {
  if (!section.contains("provider") || section.at("provider").is_null()) return std::nullopt;
  const auto& p = section.at("provider");
  if (p.is_string()) return ProviderConfig::load(resolve(base, p.get<std::string>()));
  return ProviderConfig::from_json(p, base);
}

template <class F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

// Same entries and counts; enrichments (summaries, embeddings) are ignored.
bool same_structure(const KbSet& a, const KbSet& b) {
  for (auto level : kBottomUpLevels) {
    const auto ea = a.train_kb(level).entries();
    const auto eb = b.train_kb(level).entries();
    if (ea.size() != eb.size()) return false;
    for (std::size_t i = 0; i < ea.size(); ++i) {
      if (ea[i].signature != eb[i].signature || ea[i].occurrence_count != eb[i].occurrence_count ||
          ea[i].example_chunk != eb[i].example_chunk)
        return false;
    }
  }
  return true;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw ContractError("cannot read pipeline config " + path.string() + ": " + e.what());
  }
  return from_json(doc, path.parent_path());
}

PipelineConfig PipelineConfig::from_json(const json& doc, const std::filesystem::path& base) {
  PipelineConfig cfg;
  cfg.base_dir = base;
  try {
    cfg.workdir = resolve(base, doc.value("workdir", std::string("out")));
    if (doc.contains("stages")) {
      cfg.stages.clear();
      for (const auto& s : doc.at("stages")) {
        auto name = s.get<std::string>();
        if (name != "ingest" && name != "hierarchy" && name != "train" && name != "detect" && name != "eval")
          throw ContractError("unknown stage: " + name);
        cfg.stages.insert(name);
      }
    }

    const auto ingest = doc.value("ingest", json::object());
    cfg.templates = resolve(base, ingest.value("templates", ""));
    if (cfg.templates.empty()) throw ContractError("ingest.templates is required");
    cfg.train_logs = resolve(base, ingest.value("train_logs", ""));
    cfg.test_logs = resolve(base, ingest.value("test_logs", ""));
    cfg.train_sequences = resolve(base, ingest.value("train_sequences", ""));
    cfg.test_sequences = resolve(base, ingest.value("test_sequences", ""));
    cfg.partition = ingest.value("partition", cfg.partition);
    PartitionSpec::parse(cfg.partition);
    if (cfg.train_logs.empty() == cfg.train_sequences.empty())
      throw ContractError("ingest needs exactly one of train_logs and train_sequences");
    if (cfg.test_logs.empty() == cfg.test_sequences.empty())
      throw ContractError("ingest needs exactly one of test_logs and test_sequences");

    const auto hier = doc.value("hierarchy", json::object());
    cfg.extractor.kind = ExtractorConfig::parse_kind(hier.value("extractor", std::string("fixture")));
    cfg.extractor.fixture_path = resolve(base, hier.value("fixture", ""));
    cfg.extractor.lexicon_path = resolve(base, hier.value("lexicon", ""));
    cfg.extractor.prompt_dir = resolve(base, hier.value("prompts", ""));
    cfg.extractor.refinement_enabled = hier.value("refine", true);
    cfg.extractor.parallelism = hier.value("parallelism", std::size_t{4});
    if (hier.contains("synonyms"))
      cfg.extractor.synonyms = hier.at("synonyms").get<std::map<std::string, std::string>>();
    cfg.hierarchy_provider = provider_from(hier, base);
    if (cfg.extractor.kind == ExtractorConfig::Kind::fixture && cfg.extractor.fixture_path.empty())
      throw ContractError("hierarchy.fixture is required for the fixture extractor");
    if (cfg.extractor.kind == ExtractorConfig::Kind::lexicon && cfg.extractor.lexicon_path.empty())
      throw ContractError("hierarchy.lexicon is required for the lexicon extractor");
    if (cfg.extractor.kind == ExtractorConfig::Kind::llm && !cfg.hierarchy_provider)
      throw ContractError("hierarchy.provider is required for the llm extractor");

    const auto train = doc.value("train", json::object());
    cfg.detect.embedding_dim = train.value("embedding_dim", kDefaultEmbeddingDim);

    const auto det = doc.value("detect", json::object());
    cfg.detect.set_levels(det.value("levels", std::string("SAE")));
    cfg.detect.set_detector(det.value("detector", std::string("exact")));
    cfg.detect.llm_enabled = det.value("llm", false);
    cfg.detect.m = det.value("m", std::size_t{5});
    cfg.detect.early_exit = det.value("early_exit", true);
    cfg.detect.llm_phase_fraction = det.value("llm_fraction", 1.0);
    cfg.detect.llm_retry_limit = det.value("retry_limit", 2);
    if (det.contains("llm_budget") && !det.at("llm_budget").is_null())
      cfg.detect.llm_budget = det.at("llm_budget").get<std::size_t>();
    cfg.reuse_test_kb = det.value("reuse_test_kb", true);
    cfg.provider = provider_from(det, base);
    if (cfg.detect.llm_enabled && !cfg.provider) throw ContractError("detect.provider is required when llm is on");
    cfg.detect.validate();

    const auto ev = doc.value("eval", json::object());
    cfg.attribution = ev.value("attribution", true);
  } catch (const json::exception& e) {
    throw ContractError(std::string("malformed pipeline config: ") + e.what());
  } catch (const ParseError& e) {
    throw ContractError(std::string("malformed pipeline config: ") + e.what());
  }
  return cfg;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  const PipelinePaths paths{config.workdir};
  std::filesystem::create_directories(paths.root);
  auto runs = [&](const char* s) { return config.stages.contains(s); };

  const auto catalog = stage("ingest", [&] { return load_template_catalog(config.templates); });

  // ---- ingest
  std::vector<LogSequence> train_seqs;
  std::vector<LogSequence> test_seqs;
  stage("ingest", [&] {
    if (!runs("ingest")) {
      train_seqs = load_sequences(paths.train_sequences(), &catalog);
      test_seqs = load_sequences(paths.test_sequences(), &catalog);
      return;
    }
    const auto spec = PartitionSpec::parse(config.partition);
    std::vector<SkippedRecord> skipped;
    auto from_logs = [&](const std::filesystem::path& logs) {
      const auto raw = load_raw_logs(logs);
      auto parsed = parse_records(raw, catalog);
      skipped.insert(skipped.end(), parsed.skipped.begin(), parsed.skipped.end());
      return partition(parsed.records, spec, catalog);
    };
    train_seqs = config.train_logs.empty() ? load_sequences(config.train_sequences, &catalog) : from_logs(config.train_logs);
    test_seqs = config.test_logs.empty() ? load_sequences(config.test_sequences, &catalog) : from_logs(config.test_logs);
    std::ostringstream skipped_out;
    for (const auto& s : skipped) skipped_out << json{{"index", s.index}, {"message", s.message}}.dump() << '\n';
    write_file_atomic(paths.skipped(), skipped_out.str());
    if (!skipped.empty()) spdlog::warn("{} log lines matched no template", skipped.size());
    save_sequences(train_seqs, paths.train_sequences());
    save_sequences(test_seqs, paths.test_sequences());
  });

  // ---- hierarchy
  const auto tree = stage("hierarchy", [&] {
    if (!runs("hierarchy")) return KroneTree::load(paths.tree());
    std::unique_ptr<LlmProvider> provider;
    if (config.hierarchy_provider) provider = make_provider(*config.hierarchy_provider);
    auto triples = extract_topics(catalog, config.extractor, provider.get());
    if (config.extractor.refinement_enabled) {
      const bool llm = config.extractor.kind == ExtractorConfig::Kind::llm;
      PromptLibrary prompts;
      if (!config.extractor.prompt_dir.empty()) prompts.load_overrides(config.extractor.prompt_dir);
      triples = refine_topics(std::move(triples), config.extractor.synonyms, llm ? provider.get() : nullptr, &catalog,
                              &prompts);
    }
    save_triples(triples, paths.triples());
    auto built = KroneTree::build(triples);
    built.validate();
    built.save(paths.tree());
    return built;
  });

  std::unique_ptr<LlmProvider> provider;
  if (config.detect.llm_enabled) provider = stage("detect", [&] { return make_provider(*config.provider); });
  std::optional<Summarizer> summarizer;
  if (provider) summarizer.emplace(*provider, &catalog);

  // ---- train
  auto kbs = stage("train", [&] {
    if (!runs("train")) return KbSet::load(paths.kb_dir());
    auto fresh = train(train_seqs, tree, config.detect);
    if (std::filesystem::exists(kb_file(paths.kb_dir(), "train", Level::entity))) {
      try {
        auto previous = KbSet::load(paths.kb_dir());
        if (same_structure(previous, fresh)) fresh = std::move(previous);
      } catch (const Error& e) {
        spdlog::warn("ignoring unreadable knowledge bases: {}", e.what());
      }
    }
    if (!config.reuse_test_kb)
      for (auto& t : fresh.test) t.clear();
    if (summarizer) enrich_train_kbs(fresh, tree, *summarizer, config.detect.embedding_dim);
    fresh.save(paths.kb_dir());
    return fresh;
  });

  // ---- detect
  std::vector<SequenceReport> reports = stage("detect", [&] {
    if (!runs("detect")) return read_reports(paths.report());
    if (!config.reuse_test_kb)
      for (auto& t : kbs.test) t.clear();
    Detector detector(tree, kbs, config.detect, provider.get(), &catalog);
    auto out = detector.detect_all(test_seqs);
    json meta{{"created_at", utc_now()},
              {"levels", config.detect.levels_string()},
              {"llm", config.detect.llm_enabled},
              {"early_exit", config.detect.early_exit},
              {"m", config.detect.m},
              {"llm_fraction", config.detect.llm_phase_fraction}};
    write_reports(paths.report(), out, meta);
    kbs.save(paths.kb_dir());
    return out;
  });

  // ---- eval
  return stage("eval", [&] {
    PipelineResult result;
    std::vector<DecompositionResult> decomps;
    std::vector<std::string> ids;
    for (const auto& seq : test_seqs) {
      try {
        decomps.push_back(top_down_decompose(seq.keys(), tree));
        ids.push_back(seq.id);
      } catch (const LookupError& e) {
        spdlog::warn("test sequence {} left out of the structure report: {}", seq.id, e.what());
      }
    }
    result.metrics = compute_metrics(reports);
    result.structure = structure_report(kbs, tree, decomps, reports);
    for (const auto& r : reports) result.llm_calls += r.counters.llm_calls;
    if (runs("eval")) {
      dump_decompositions(ids, decomps, paths.decompositions());
      write_file_atomic(paths.metrics(), result.metrics.to_json().dump(1) + "\n");
      write_file_atomic(paths.structure(), result.structure.to_json().dump(1) + "\n");
      if (config.attribution) {
        result.attribution = attribution_report(reports);
        if (config.detect.early_exit)
          spdlog::warn("attribution with early exit on only sees the first abnormal level");
        auto doc = result.attribution->to_json();
        doc["early_exit"] = config.detect.early_exit;
        write_file_atomic(paths.attribution(), doc.dump(1) + "\n");
      }
    }
    result.summary = format_summary(result.metrics, &result.structure);
    return result;
  });
}

}  // namespace krone
