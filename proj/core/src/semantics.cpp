#include "krone/semantics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <spdlog/spdlog.h>
#include <unordered_map>

#include "io_util.hpp"
#include "krone/error.hpp"

namespace krone {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string join_names(std::span<const std::string> names, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += sep;
    out += names[i];
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string level_tag(Level level) {
  switch (level) {
    case Level::status: return "S";
    case Level::action: return "A";
    case Level::entity: return "E";
    case Level::root: break;
  }
  return "R";
}

}  // namespace

Embedding embed_chunk(std::span<const LogKey> chunk, std::size_t dimension) {
  if (chunk.empty()) throw ContractError("cannot embed an empty chunk");
  if (dimension == 0) throw ContractError("embedding dimension must be positive");
  Embedding v(dimension, 0.0);
  std::unordered_map<std::size_t, std::string_view> owner;
  for (const auto& key : chunk) {
    const auto slot = static_cast<std::size_t>(fnv1a(key) % dimension);
    auto [it, fresh] = owner.emplace(slot, key);
    if (!fresh && it->second != key)
      spdlog::debug("embedding collision: keys '{}' and '{}' share bucket {}", it->second, key, slot);
    v[slot] += 1.0;
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::string mock_digest(const KroneSeq& seq, std::span<const std::string> child_summaries) {
  auto digest = level_tag(seq.level) + ":" + join_names(seq.node_names, ">");
  if (seq.level != Level::status) digest += "[" + join_names(child_summaries, ";") + "]";
  return digest;
}

// ---------------------------------------------------------------- summarizer

Summarizer::Summarizer(LlmProvider& provider, const TemplateCatalog* catalog, const PromptLibrary& prompts)
    : provider_(provider), catalog_(catalog), prompts_(prompts) {}

std::size_t Summarizer::cache_size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

std::string Summarizer::cached_call(const std::string& cache_key, ChatRequest request, const std::string& signature) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(cache_key); it != cache_.end()) return it->second;
  }
  std::string summary;
  try {
    summary = trim(provider_.complete(request));
  } catch (const ProviderError& e) {
    throw ProviderError("summarizing " + signature + ": " + e.what());
  }
  std::lock_guard lock(mutex_);
  return cache_.emplace(cache_key, std::move(summary)).first->second;
}

std::string Summarizer::summarize_s_seq(const KroneSeq& seq) {
  if (seq.level != Level::status) throw ContractError("summarize_s_seq needs a status-level Seq");
  std::string templates;
  for (const auto& key : seq.chunk) {
    templates += "- ";
    templates += catalog_ ? catalog_->at(key).text : key;
    templates += '\n';
  }
  ChatRequest req{PromptTask::summarize, prompts_.get("system"),
                  prompts_.render("summarize_status", {{"parent", join_names(seq.parent_names, " > ")},
                                                       {"templates", templates}}),
                  {{"signature", seq.signature}, {"digest", mock_digest(seq, {})}}};
  return cached_call("S\x1f" + seq.signature, std::move(req), seq.signature);
}

std::string Summarizer::summarize_parent(const KroneSeq& seq, std::span<const std::string> child_summaries) {
  if (seq.level == Level::status) throw ContractError("summarize_parent needs an action or entity Seq");
  if (child_summaries.size() != seq.nodes.size())
    throw ContractError("seq " + seq.signature + " expects " + std::to_string(seq.nodes.size()) +
                        " child summaries, got " + std::to_string(child_summaries.size()));
  std::string listed;
  std::string cache_key = level_tag(seq.level) + "\x1f" + seq.signature;
  for (std::size_t i = 0; i < child_summaries.size(); ++i) {
    if (child_summaries[i].empty())
      throw ContractError("missing summary for child " + std::to_string(i) + " (" + seq.node_names[i] + ") of " +
                          seq.signature);
    listed += std::to_string(i + 1) + ". " + child_summaries[i] + "\n";
    cache_key += "\x1f" + child_summaries[i];
  }
  ChatRequest req{PromptTask::summarize, prompts_.get("system"),
                  prompts_.render("summarize_parent", {{"parent", join_names(seq.parent_names, " > ")},
                                                       {"level", std::string(to_string(seq.level))},
                                                       {"child_summaries", listed}}),
                  {{"signature", seq.signature}, {"digest", mock_digest(seq, child_summaries)}}};
  return cached_call(cache_key, std::move(req), seq.signature);
}

std::string Summarizer::summarize(const KroneSeq& seq, const DecompositionResult& result) {
  if (seq.level == Level::status) return summarize_s_seq(seq);
  const auto& lower_level = seq.level == Level::entity ? result.a_seqs : result.s_seqs;
  std::vector<std::string> children;
  children.reserve(seq.children.size());
  for (auto idx : seq.children) {
    if (idx >= lower_level.size()) throw IntegrityError("dangling child index in " + seq.signature);
    children.push_back(summarize(lower_level[idx], result));
  }
  return summarize_parent(seq, children);
}

Summarizer::Summaries Summarizer::summarize_all(const DecompositionResult& result) {
  Summaries out;
  if (result.empty()) return out;
  for (const auto& s : result.s_seqs) out.s_seqs.push_back(summarize_s_seq(s));
  for (const auto& a : result.a_seqs) {
    std::vector<std::string> children;
    for (auto idx : a.children) children.push_back(out.s_seqs.at(idx));
    out.a_seqs.push_back(summarize_parent(a, children));
  }
  std::vector<std::string> children;
  for (auto idx : result.e_seq.children) children.push_back(out.a_seqs.at(idx));
  out.e_seq = summarize_parent(result.e_seq, children);
  return out;
}

// ---------------------------------------------------------------- detection

ChatRequest DetectionPrompt::to_request(const PromptLibrary& prompts) const {
  std::string examples;
  if (example_summaries.empty()) examples = "(none)\n";
  for (std::size_t i = 0; i < example_summaries.size(); ++i)
    examples += std::to_string(i + 1) + ". " + example_summaries[i] + "\n";
  return ChatRequest{PromptTask::detect, prompts.get("system"),
                     prompts.render("detect", {{"parent", parent_context},
                                               {"level", std::string(to_string(level))},
                                               {"examples", examples},
                                               {"target", target_summary}}),
                     {{"signature", signature}, {"chunk_key", chunk_key}}};
}

std::optional<ParsedVerdict> parse_detection_response(std::string_view response) {
  const auto text = trim(response);
  const auto lowered = lower(text);

  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    auto line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) line_end = text.size();
    const auto line = trim(std::string_view(lowered).substr(line_start, line_end - line_start));
    if (line.rfind("verdict:", 0) == 0) {
      const auto value = trim(std::string_view(line).substr(8));
      std::optional<Verdict> v;
      if (value == "normal") v = Verdict::normal;
      if (value == "abnormal") v = Verdict::abnormal;
      if (v) {
        std::string rest = std::string(text.substr(0, line_start)) +
                           (line_end < text.size() ? std::string(text.substr(line_end + 1)) : std::string());
        return ParsedVerdict{*v, trim(rest)};
      }
    }
    line_start = line_end + 1;
  }

  for (auto [prefix, verdict] : {std::pair{std::string_view("abnormal:"), Verdict::abnormal},
                                 std::pair{std::string_view("normal:"), Verdict::normal}}) {
    if (lowered.rfind(prefix, 0) == 0) return ParsedVerdict{verdict, trim(std::string_view(text).substr(prefix.size()))};
  }
  return std::nullopt;
}

LlmVerdict llm_detect(const DetectionPrompt& prompt, LlmProvider& provider, int retry_limit,
                      const PromptLibrary& prompts) {
  const auto request = prompt.to_request(prompts);
  std::string last;
  for (int attempt = 0; attempt <= std::max(0, retry_limit); ++attempt) {
    last = provider.complete(request);
    if (auto parsed = parse_detection_response(last)) return {parsed->verdict, parsed->explanation, false};
    spdlog::warn("unparseable detection answer for {} (attempt {})", prompt.signature, attempt + 1);
  }
  return {Verdict::abnormal, "unparseable answer: " + trim(last), true};
}

}  // namespace krone
