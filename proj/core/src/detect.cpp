#include "krone/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <spdlog/spdlog.h>
#include <sstream>

#include "io_util.hpp"
#include "krone/error.hpp"

namespace krone {

using json = nlohmann::json;

std::string_view to_string(LocalDetector d) noexcept { return d == LocalDetector::exact ? "exact" : "automaton"; }

LocalDetector parse_local_detector(std::string_view text) {
  if (text == "exact") return LocalDetector::exact;
  if (text == "automaton") return LocalDetector::automaton;
  throw ContractError("unknown detector: " + std::string(text));
}

void DetectConfig::set_levels(std::string_view preset) {
  if (preset == "S") {
    levels_enabled = {true, false, false};
  } else if (preset == "SA") {
    levels_enabled = {true, true, false};
  } else if (preset == "SAE") {
    levels_enabled = {true, true, true};
  } else {
    throw ContractError("level preset must be S, SA or SAE, got: " + std::string(preset));
  }
}

std::string DetectConfig::levels_string() const {
  std::string out;
  if (levels_enabled[0]) out += 'S';
  if (levels_enabled[1]) out += 'A';
  if (levels_enabled[2]) out += 'E';
  return out;
}

void DetectConfig::set_detector(std::string_view spec) {
  const auto colon = spec.find(':');
  const auto kind = parse_local_detector(spec.substr(0, colon));
  if (colon == std::string_view::npos) {
    detector.fill(kind);
    return;
  }
  auto rest = spec.substr(colon + 1);
  if (rest.rfind("level=", 0) != 0) throw ContractError("detector spec must look like kind:level=L1,L2");
  detector.fill(LocalDetector::exact);
  for (const auto& name : split(rest.substr(6), ',')) {
    const auto level = parse_level(trim(name));
    if (level == Level::root) throw ContractError("root is not a detection level");
    detector[level_slot(level)] = kind;
  }
}

void DetectConfig::validate() const {
  const bool any = levels_enabled[0] || levels_enabled[1] || levels_enabled[2];
  if (any && !levels_enabled[0]) throw ContractError("enabled levels must include status");
  if (levels_enabled[2] && !levels_enabled[1]) throw ContractError("entity level requires the action level");
  if (!(llm_phase_fraction >= 0.0 && llm_phase_fraction <= 1.0))
    throw ContractError("llm_phase_fraction must lie in [0,1]");
  if (m > 7) throw ContractError("m must lie in 0..7");
  if (embedding_dim == 0) throw ContractError("embedding dimension must be positive");
  if (llm_retry_limit < 0) throw ContractError("retry limit must be non-negative");
}

std::vector<Level> SequenceReport::abnormal_levels() const {
  std::vector<Level> out;
  for (auto level : kBottomUpLevels) {
    if (std::any_of(verdicts.begin(), verdicts.end(),
                    [&](const SeqVerdict& v) { return v.level == level && v.verdict == Verdict::abnormal; }))
      out.push_back(level);
  }
  return out;
}

// ---------------------------------------------------------------- local

SeqVerdict detect_local_exact(const KroneSeq& seq, const TrainKnowledgeBase& kb) {
  return {seq.signature, seq.level, chunk_key(seq.chunk),
          kb.contains(seq.signature) ? Verdict::normal : Verdict::abnormal,
          VerdictSource::pattern_match, std::nullopt, Confidence::normal};
}

SeqVerdict detect_local_automaton(const KroneSeq& seq, const TrainKnowledgeBase& kb) {
  return {seq.signature, seq.level, chunk_key(seq.chunk),
          kb.accepts(parent_key(seq.parent_names), seq.node_names) ? Verdict::normal : Verdict::abnormal,
          VerdictSource::automaton, std::nullopt, Confidence::normal};
}

// ---------------------------------------------------------------- training

namespace {

const KroneSeq& seq_at_level(const DecompositionResult& d, Level level) {
  switch (level) {
    case Level::entity: return d.e_seq;
    case Level::action: return d.a_seqs.at(0);
    case Level::status: return d.s_seqs.at(0);
    case Level::root: break;
  }
  throw ContractError("root has no Seq");
}

const std::vector<KroneSeq>& seqs_at_level(const DecompositionResult& d, Level level) {
  return level == Level::action ? d.a_seqs : d.s_seqs;
}

}  // namespace

void enrich_train_kbs(KbSet& kbs, const KroneTree& tree, Summarizer& summarizer, std::size_t embedding_dim) {
  // Bottom-up so parent summaries reuse cached child summaries.
  for (auto level : kBottomUpLevels) {
    auto& kb = kbs.train_kb(level);
    for (const auto& entry : kb.entries()) {
      if (entry.summary && entry.embedding && entry.embedding->size() == embedding_dim) continue;
      const auto d = top_down_decompose(entry.example_chunk, tree);
      const auto& seq = seq_at_level(d, level);
      if (seq.signature != entry.signature)
        throw IntegrityError("example chunk of " + entry.signature + " decomposes to " + seq.signature);
      if (!entry.summary) kb.set_summary(entry.signature, summarizer.summarize(seq, d));
      if (!entry.embedding || entry.embedding->size() != embedding_dim)
        kb.set_embedding(entry.signature, embed_chunk(entry.example_chunk, embedding_dim));
    }
  }
}

KbSet train(std::span<const LogSequence> sequences, const KroneTree& tree, const DetectConfig& config,
            Summarizer* summarizer) {
  KbSet kbs;
  std::vector<std::string> failures;
  for (const auto& seq : sequences) {
    const auto keys = seq.keys();
    if (keys.empty()) {
      spdlog::warn("training sequence {} is empty", seq.id);
      continue;
    }
    try {
      kbs.insert(top_down_decompose(keys, tree));
    } catch (const LookupError& e) {
      failures.push_back(seq.id + ": " + e.what());
    }
  }
  if (!failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " training sequences failed to decompose";
    for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 5); ++i) msg += "; " + failures[i];
    throw Error(msg);
  }
  if (summarizer) enrich_train_kbs(kbs, tree, *summarizer, config.embedding_dim);
  return kbs;
}

// ---------------------------------------------------------------- hybrid

Detector::Detector(const KroneTree& tree, KbSet& kbs, DetectConfig config, LlmProvider* provider,
                   const TemplateCatalog* catalog, const PromptLibrary& prompts)
    : tree_(tree), kbs_(kbs), config_(std::move(config)), provider_(provider), prompts_(prompts) {
  config_.validate();
  if (config_.llm_enabled) {
    if (!provider_) throw ContractError("llm detection requires a provider");
    summarizer_.emplace(*provider_, catalog, prompts_);
  }
}

SeqVerdict Detector::detect_seq(const KroneSeq& seq, const DecompositionResult& result, bool llm_allowed,
                                DetectCounters& counters) {
  const auto slot = level_slot(seq.level);
  ++counters.seqs_evaluated[slot];
  counters.keys_processed[slot] += seq.chunk.size();

  const auto ck = chunk_key(seq.chunk);
  auto& cache = kbs_.test_kb(seq.level);
  const auto local_kind = config_.detector_for(seq.level);
  const auto local_source = local_kind == LocalDetector::exact ? VerdictSource::pattern_match : VerdictSource::automaton;
  const bool llm_ok = config_.llm_enabled && llm_allowed && provider_ &&
                      (!config_.llm_budget || llm_calls_ < *config_.llm_budget);

  if (auto hit = cache.lookup(ck); hit && hit->signature == seq.signature) {
    // A cached local "abnormal" is only final when the LLM could not refine it.
    const bool usable = hit->source == VerdictSource::llm ||
                        (hit->source == local_source && (hit->verdict == Verdict::normal || !llm_ok));
    if (usable) {
      ++counters.cache_hits;
      return {seq.signature, seq.level, ck, hit->verdict, VerdictSource::cache,
              hit->source == VerdictSource::llm ? hit->explanation : std::nullopt,
              hit->low_confidence ? Confidence::low : Confidence::normal};
    }
  }

  ++counters.pattern_checks;
  const auto& train_kb = kbs_.train_kb(seq.level);
  auto verdict = local_kind == LocalDetector::exact ? detect_local_exact(seq, train_kb)
                                                    : detect_local_automaton(seq, train_kb);
  if (verdict.verdict == Verdict::normal || !llm_ok) {
    cache.store({seq.signature, ck, verdict.verdict, std::nullopt, std::nullopt, std::nullopt, local_source, false});
    return verdict;
  }

  TestEntry entry{seq.signature, ck, Verdict::abnormal, std::nullopt, std::nullopt, std::nullopt,
                  VerdictSource::llm, false};
  ++llm_calls_;
  ++counters.llm_calls;
  try {
    if (!enriched_) {
      enrich_train_kbs(kbs_, tree_, *summarizer_, config_.embedding_dim);
      enriched_ = true;
    }
    entry.summary = summarizer_->summarize(seq, result);
    entry.embedding = embed_chunk(seq.chunk, config_.embedding_dim);
    DetectionPrompt prompt;
    prompt.target_summary = *entry.summary;
    prompt.level = seq.level;
    prompt.signature = seq.signature;
    prompt.chunk_key = ck;
    for (std::size_t i = 0; i < seq.parent_names.size(); ++i)
      prompt.parent_context += (i ? " > " : "") + seq.parent_names[i];
    if (config_.m > 0) {
      for (const auto& ex : train_kb.retrieve_similar(parent_key(seq.parent_names), *entry.embedding, config_.m))
        prompt.example_summaries.push_back(ex.summary.value_or(ex.signature));
    }
    const auto answer = llm_detect(prompt, *provider_, config_.llm_retry_limit, prompts_);
    entry.verdict = answer.verdict;
    entry.explanation = answer.explanation;
    entry.low_confidence = answer.low_confidence;
  } catch (const ProviderError& e) {
    ++counters.provider_errors;
    spdlog::warn("provider failure on {}: {}", seq.signature, e.what());
    entry.verdict = Verdict::abnormal;
    entry.explanation = std::string("undecided, provider error: ") + e.what();
    entry.low_confidence = true;
  }
  cache.store(entry);
  return {seq.signature, seq.level, ck, entry.verdict, VerdictSource::llm, entry.explanation,
          entry.low_confidence ? Confidence::low : Confidence::normal};
}

SequenceReport Detector::detect_sequence(const LogSequence& sequence, bool llm_allowed) {
  SequenceReport report;
  report.sequence_id = sequence.id;
  report.label = sequence.label;
  const auto keys = sequence.keys();
  if (keys.empty()) {
    spdlog::warn("sequence {} is empty; treated as normal", sequence.id);
    return report;
  }
  DecompositionResult d;
  try {
    d = top_down_decompose(keys, tree_);
  } catch (const LookupError& e) {
    // An unseen key cannot be placed in the hierarchy; flag the sequence.
    report.error = e.what();
    report.final_verdict = true;
    return report;
  }

  for (auto level : kBottomUpLevels) {
    if (!config_.level_enabled(level)) continue;
    auto run = [&](const KroneSeq& seq) {
      auto v = detect_seq(seq, d, llm_allowed, report.counters);
      const bool abnormal = v.verdict == Verdict::abnormal;
      report.verdicts.push_back(std::move(v));
      if (abnormal) {
        if (!report.first_abnormal_level) report.first_abnormal_level = level;
        report.final_verdict = true;
      }
      return abnormal && config_.early_exit;
    };
    if (level == Level::entity) {
      if (run(d.e_seq)) return report;
    } else {
      for (const auto& seq : seqs_at_level(d, level))
        if (run(seq)) return report;
    }
  }
  return report;
}

std::vector<SequenceReport> Detector::detect_all(std::span<const LogSequence> sequences) {
  if (config_.llm_enabled && summarizer_ && !enriched_) {
    enrich_train_kbs(kbs_, tree_, *summarizer_, config_.embedding_dim);
    enriched_ = true;
  }
  const auto cutoff = static_cast<std::size_t>(std::floor(config_.llm_phase_fraction * static_cast<double>(sequences.size())));
  std::vector<SequenceReport> out;
  out.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) out.push_back(detect_sequence(sequences[i], i < cutoff));
  return out;
}

SequenceReport detect_sequence(const LogSequence& sequence, const KroneTree& tree, KbSet& kbs, LlmProvider* provider,
                               const DetectConfig& config) {
  Detector detector(tree, kbs, config, provider);
  return detector.detect_sequence(sequence);
}

// ---------------------------------------------------------------- reports

json report_to_json(const SequenceReport& r) {
  json seqs = json::array();
  for (const auto& v : r.verdicts) {
    json row{{"signature", v.signature},
             {"level", to_string(v.level)},
             {"chunk_key", v.chunk_key},
             {"verdict", to_string(v.verdict)},
             {"source", to_string(v.source)},
             {"confidence", v.confidence == Confidence::low ? "low" : "normal"}};
    if (v.explanation) row["explanation"] = *v.explanation;
    seqs.push_back(std::move(row));
  }
  const auto& c = r.counters;
  json counters{{"pattern_checks", c.pattern_checks},
                {"cache_hits", c.cache_hits},
                {"llm_calls", c.llm_calls},
                {"provider_errors", c.provider_errors},
                {"seqs_evaluated", {{"status", c.seqs_evaluated[0]}, {"action", c.seqs_evaluated[1]}, {"entity", c.seqs_evaluated[2]}}},
                {"keys_processed", {{"status", c.keys_processed[0]}, {"action", c.keys_processed[1]}, {"entity", c.keys_processed[2]}}}};
  json row{{"sequence_id", r.sequence_id},
           {"verdict", r.final_verdict ? "abnormal" : "normal"},
           {"label", r.label ? json(*r.label) : json(nullptr)},
           {"first_abnormal_level", r.first_abnormal_level ? json(to_string(*r.first_abnormal_level)) : json(nullptr)},
           {"counters", std::move(counters)},
           {"seqs", std::move(seqs)}};
  if (r.error) row["error"] = *r.error;
  return row;
}

SequenceReport report_from_json(const json& row) {
  SequenceReport r;
  r.sequence_id = row.at("sequence_id").get<std::string>();
  r.final_verdict = parse_verdict(row.at("verdict").get<std::string>()) == Verdict::abnormal;
  if (!row.at("label").is_null()) r.label = row.at("label").get<bool>();
  if (!row.at("first_abnormal_level").is_null())
    r.first_abnormal_level = parse_level(row.at("first_abnormal_level").get<std::string>());
  const auto& c = row.at("counters");
  r.counters.pattern_checks = c.at("pattern_checks");
  r.counters.cache_hits = c.at("cache_hits");
  r.counters.llm_calls = c.at("llm_calls");
  r.counters.provider_errors = c.at("provider_errors");
  for (auto level : kBottomUpLevels) {
    const auto name = std::string(to_string(level));
    r.counters.seqs_evaluated[level_slot(level)] = c.at("seqs_evaluated").at(name);
    r.counters.keys_processed[level_slot(level)] = c.at("keys_processed").at(name);
  }
  for (const auto& s : row.at("seqs")) {
    SeqVerdict v;
    v.signature = s.at("signature").get<std::string>();
    v.level = parse_level(s.at("level").get<std::string>());
    v.chunk_key = s.at("chunk_key").get<std::string>();
    v.verdict = parse_verdict(s.at("verdict").get<std::string>());
    v.source = parse_verdict_source(s.at("source").get<std::string>());
    v.confidence = s.at("confidence") == "low" ? Confidence::low : Confidence::normal;
    if (s.contains("explanation")) v.explanation = s.at("explanation").get<std::string>();
    r.verdicts.push_back(std::move(v));
  }
  if (row.contains("error")) r.error = row.at("error").get<std::string>();
  return r;
}

void write_reports(const std::filesystem::path& path, std::span<const SequenceReport> reports, const json& metadata) {
  std::ostringstream out;
  json header = metadata.is_object() ? metadata : json::object();
  header["type"] = "metadata";
  out << header.dump() << '\n';
  for (const auto& r : reports) out << report_to_json(r).dump() << '\n';
  write_file_atomic(path, out.str());
}

std::vector<SequenceReport> read_reports(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open report " + path.string());
  std::vector<SequenceReport> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto row = json::parse(line);
      if (row.value("type", "") == "metadata") continue;
      out.push_back(report_from_json(row));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad report record: ") + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace krone
