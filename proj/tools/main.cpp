#include <CLI11.hpp>
#include <iostream>
#include <spdlog/spdlog.h>

#include "krone/decompose.hpp"
#include "krone/detect.hpp"
#include "krone/error.hpp"
#include "krone/eval.hpp"
#include "krone/hierarchy.hpp"
#include "krone/ingest.hpp"
#include "krone/pipeline.hpp"
#include "krone/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kStageFailure = 1;
constexpr int kConfigError = 2;

bool on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw krone::ContractError("expected on|off, got: " + v);
}

std::unique_ptr<krone::LlmProvider> provider_or_null(const std::string& path) {
  if (path.empty()) return nullptr;
  return krone::make_provider(krone::ProviderConfig::load(path));
}

void write_json(const fs::path& path, const json& doc) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream(path) << doc.dump(1) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Krone log anomaly detection"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Match raw logs to templates and partition them into sequences");
  std::string templates, logs, partition = "identifier", out, skipped_out;
  ingest->add_option("--templates", templates)->required();
  ingest->add_option("--logs", logs)->required();
  ingest->add_option("--partition", partition, "identifier | count:N[:S] | time:D[:S]");
  ingest->add_option("--out", out)->required();
  ingest->add_option("--skipped", skipped_out, "Write unmatched lines here");

  // hierarchy
  auto* hierarchy = app.add_subcommand("hierarchy", "Extract topic triples and build the tree");
  hierarchy->require_subcommand(1);
  auto* extract = hierarchy->add_subcommand("extract", "Extract (entity, action, status) per template");
  std::string extractor = "fixture", fixture, lexicon, provider_cfg, prompt_dir;
  bool no_refine = false;
  extract->add_option("--templates", templates)->required();
  extract->add_option("--extractor", extractor)->check(CLI::IsMember({"fixture", "lexicon", "llm"}));
  extract->add_option("--fixture", fixture, "Triples file for the fixture extractor");
  extract->add_option("--lexicon", lexicon, "Lexicon file for the lexicon extractor");
  extract->add_option("--provider", provider_cfg, "Provider config for the llm extractor");
  extract->add_option("--prompts", prompt_dir, "Prompt override directory");
  extract->add_flag("--no-refine", no_refine);
  extract->add_option("--out", out)->required();
  auto* build = hierarchy->add_subcommand("build", "Build the tree from triples");
  std::string triples_path;
  build->add_option("--triples", triples_path)->required();
  build->add_option("--out", out)->required();

  // decompose
  auto* decompose = app.add_subcommand("decompose", "Dump the Krone Seqs of every sequence");
  std::string tree_path, sequences;
  decompose->add_option("--tree", tree_path)->required();
  decompose->add_option("--sequences", sequences)->required();
  decompose->add_option("--out", out)->required();

  // train
  auto* train = app.add_subcommand("train", "Build the training knowledge bases");
  std::string kb_dir, train_path, llm = "off";
  std::size_t dim = krone::kDefaultEmbeddingDim;
  train->add_option("--tree", tree_path)->required();
  train->add_option("--train", train_path)->required();
  train->add_option("--kb-dir", kb_dir)->required();
  train->add_option("--llm", llm, "Also summarize and embed entries")->check(CLI::IsMember({"on", "off"}));
  train->add_option("--provider", provider_cfg);
  train->add_option("--templates", templates);
  train->add_option("--embedding-dim", dim);

  // detect
  auto* detect = app.add_subcommand("detect", "Run hybrid detection on test sequences");
  std::string test_path, levels = "SAE", detector_spec = "exact", early_exit = "on", report_path;
  std::size_t m = 5;
  double fraction = 1.0;
  std::optional<std::size_t> budget;
  bool fresh_cache = false;
  detect->add_option("--tree", tree_path)->required();
  detect->add_option("--kb-dir", kb_dir)->required();
  detect->add_option("--test", test_path)->required();
  detect->add_option("--levels", levels)->check(CLI::IsMember({"S", "SA", "SAE"}));
  detect->add_option("--detector", detector_spec, "exact | automaton[:level=E,A,S]");
  detect->add_option("--llm", llm)->check(CLI::IsMember({"on", "off"}));
  detect->add_option("--m", m)->check(CLI::Range(0, 7));
  detect->add_option("--early-exit", early_exit)->check(CLI::IsMember({"on", "off"}));
  detect->add_option("--llm-fraction", fraction)->check(CLI::Range(0.0, 1.0));
  detect->add_option("--llm-budget", budget);
  detect->add_option("--provider", provider_cfg);
  detect->add_option("--templates", templates, "Catalog for template-based summaries");
  detect->add_flag("--fresh-cache", fresh_cache, "Ignore the persisted test knowledge bases");
  detect->add_option("--report", report_path)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Metrics, structure and attribution reports");
  std::string out_dir;
  eval->add_option("--report", report_path)->required();
  eval->add_option("--tree", tree_path);
  eval->add_option("--kb-dir", kb_dir);
  eval->add_option("--test", test_path);
  eval->add_option("--out-dir", out_dir, "Write metrics.json, structure.json, attribution.json here");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage from one config file");
  std::string config_path;
  pipeline->add_option("--config", config_path)->required();

  // generate
  auto* generate = app.add_subcommand("generate", "Write the synthetic login/web corpus");
  krone::SynthConfig synth;
  generate->add_option("--out", out)->required();
  generate->add_option("--train", synth.train);
  generate->add_option("--test", synth.test);
  generate->add_option("--seed", synth.seed);
  generate->add_option("--status-rate", synth.status_rate);
  generate->add_option("--action-rate", synth.action_rate);
  generate->add_option("--entity-rate", synth.entity_rate);
  generate->add_option("--benign-rate", synth.benign_rate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (*ingest) {
      const auto catalog = krone::load_template_catalog(templates);
      const auto spec = krone::PartitionSpec::parse(partition);
      const auto raw = krone::load_raw_logs(logs);
      const auto parsed = krone::parse_records(raw, catalog);
      const auto seqs = krone::partition(parsed.records, spec, catalog);
      krone::save_sequences(seqs, out);
      if (!skipped_out.empty()) {
        std::ofstream s(skipped_out);
        for (const auto& r : parsed.skipped) s << json{{"index", r.index}, {"message", r.message}}.dump() << '\n';
      }
      std::cout << seqs.size() << " sequences, " << parsed.skipped.size() << " unmatched lines\n";
    } else if (*extract) {
      const auto catalog = krone::load_template_catalog(templates);
      krone::ExtractorConfig cfg;
      cfg.kind = krone::ExtractorConfig::parse_kind(extractor);
      cfg.fixture_path = fixture;
      cfg.lexicon_path = lexicon;
      cfg.prompt_dir = prompt_dir;
      cfg.refinement_enabled = !no_refine;
      auto provider = provider_or_null(provider_cfg);
      auto triples = krone::extract_topics(catalog, cfg, provider.get());
      if (cfg.refinement_enabled) {
        const bool use_llm = cfg.kind == krone::ExtractorConfig::Kind::llm;
        triples = krone::refine_topics(std::move(triples), {}, use_llm ? provider.get() : nullptr, &catalog);
      }
      krone::save_triples(triples, out);
      std::cout << triples.size() << " triples\n";
    } else if (*build) {
      const auto tree = krone::KroneTree::build(krone::load_triples(triples_path));
      tree.validate();
      tree.save(out);
      std::cout << tree.count(krone::Level::entity) << " entities, " << tree.count(krone::Level::action)
                << " actions, " << tree.count(krone::Level::status) << " statuses\n";
    } else if (*decompose) {
      const auto tree = krone::KroneTree::load(tree_path);
      const auto seqs = krone::load_sequences(sequences);
      std::vector<std::string> ids;
      std::vector<krone::DecompositionResult> results;
      for (const auto& s : seqs) {
        ids.push_back(s.id);
        results.push_back(krone::top_down_decompose(s.keys(), tree));
      }
      krone::dump_decompositions(ids, results, out);
    } else if (*train) {
      const auto tree = krone::KroneTree::load(tree_path);
      const auto seqs = krone::load_sequences(train_path);
      krone::DetectConfig cfg;
      cfg.embedding_dim = dim;
      std::unique_ptr<krone::LlmProvider> provider;
      std::optional<krone::TemplateCatalog> catalog;
      std::optional<krone::Summarizer> summarizer;
      if (on_off(llm)) {
        if (provider_cfg.empty()) throw krone::ContractError("--llm on needs --provider");
        provider = provider_or_null(provider_cfg);
        if (!templates.empty()) catalog = krone::load_template_catalog(templates);
        summarizer.emplace(*provider, catalog ? &*catalog : nullptr);
      }
      const auto kbs = krone::train(seqs, tree, cfg, summarizer ? &*summarizer : nullptr);
      kbs.save(kb_dir);
      std::cout << "train KB sizes S=" << kbs.train[0].size() << " A=" << kbs.train[1].size()
                << " E=" << kbs.train[2].size() << "\n";
    } else if (*detect) {
      const auto tree = krone::KroneTree::load(tree_path);
      auto kbs = krone::KbSet::load(kb_dir);
      if (fresh_cache)
        for (auto& t : kbs.test) t.clear();
      const auto seqs = krone::load_sequences(test_path);
      krone::DetectConfig cfg;
      cfg.set_levels(levels);
      cfg.set_detector(detector_spec);
      cfg.llm_enabled = on_off(llm);
      cfg.m = m;
      cfg.early_exit = on_off(early_exit);
      cfg.llm_phase_fraction = fraction;
      cfg.llm_budget = budget;
      auto provider = provider_or_null(provider_cfg);
      if (cfg.llm_enabled && !provider) throw krone::ContractError("--llm on needs --provider");
      std::optional<krone::TemplateCatalog> catalog;
      if (!templates.empty()) catalog = krone::load_template_catalog(templates);
      krone::Detector detector(tree, kbs, cfg, provider.get(), catalog ? &*catalog : nullptr);
      const auto reports = detector.detect_all(seqs);
      krone::write_reports(report_path, reports,
                           {{"levels", levels}, {"detector", detector_spec}, {"llm", cfg.llm_enabled}});
      kbs.save(kb_dir);
      const auto flagged = std::count_if(reports.begin(), reports.end(), [](const auto& r) { return r.final_verdict; });
      std::cout << flagged << " of " << reports.size() << " sequences abnormal, " << detector.llm_calls()
                << " llm calls\n";
    } else if (*eval) {
      const auto reports = krone::read_reports(report_path);
      const auto metrics = krone::compute_metrics(reports);
      std::optional<krone::StructureReport> structure;
      if (!tree_path.empty() && !kb_dir.empty() && !test_path.empty()) {
        const auto tree = krone::KroneTree::load(tree_path);
        const auto kbs = krone::KbSet::load(kb_dir);
        std::vector<krone::DecompositionResult> decomps;
        for (const auto& s : krone::load_sequences(test_path)) decomps.push_back(krone::top_down_decompose(s.keys(), tree));
        structure = krone::structure_report(kbs, tree, decomps, reports);
      }
      const auto attribution = krone::attribution_report(reports);
      if (!out_dir.empty()) {
        write_json(fs::path(out_dir) / "metrics.json", metrics.to_json());
        if (structure) write_json(fs::path(out_dir) / "structure.json", structure->to_json());
        write_json(fs::path(out_dir) / "attribution.json", attribution.to_json());
      }
      std::cout << krone::format_summary(metrics, structure ? &*structure : nullptr);
      for (const auto& [bucket, count] : attribution.buckets) std::cout << "  " << bucket << ": " << count << "\n";
    } else if (*pipeline) {
      krone::PipelineConfig cfg;
      try {
        cfg = krone::PipelineConfig::load(config_path);
      } catch (const krone::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
      }
      const auto result = krone::run_pipeline(cfg);
      std::cout << result.summary;
    } else if (*generate) {
      const auto corpus = krone::generate_corpus(synth);
      fs::create_directories(out);
      krone::write_corpus(corpus, out);
      std::cout << corpus.train.size() << " train, " << corpus.test.size() << " test sequences\n";
    }
  } catch (const krone::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageFailure;
  } catch (const krone::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageFailure;
  }
  return 0;
}
