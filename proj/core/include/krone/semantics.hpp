#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "krone/decompose.hpp"
#include "krone/ingest.hpp"
#include "krone/knowledge.hpp"
#include "krone/prompts.hpp"
#include "krone/provider.hpp"

namespace krone {

inline constexpr std::size_t kDefaultEmbeddingDim = 256;

/// Hashed bag-of-keys: FNV-1a of each key modulo `dimension`, counted and
/// scaled to unit length. Order-insensitive by construction. Throws
/// ContractError on an empty chunk or zero dimension.
Embedding embed_chunk(std::span<const LogKey> chunk, std::size_t dimension = kDefaultEmbeddingDim);

/// Canonical digest the mock provider echoes back for a summary request.
std::string mock_digest(const KroneSeq& seq, std::span<const std::string> child_summaries);

/// Bottom-up summarizer with a cache keyed by the exact summary inputs, so a
/// Seq whose inputs were already summarized costs no further provider call.
class Summarizer {
 public:
  Summarizer(LlmProvider& provider, const TemplateCatalog* catalog = nullptr,
             const PromptLibrary& prompts = PromptLibrary::defaults());

  /// One call over the concatenated templates of the chunk.
  std::string summarize_s_seq(const KroneSeq& seq);
  /// One call over the child summaries. Throws ContractError naming the first
  /// missing child.
  std::string summarize_parent(const KroneSeq& seq, std::span<const std::string> child_summaries);

  struct Summaries {
    std::string e_seq;
    std::vector<std::string> a_seqs;
    std::vector<std::string> s_seqs;
  };
  Summaries summarize_all(const DecompositionResult& result);
  /// Summary of one Seq of `result`, computing its descendants first.
  std::string summarize(const KroneSeq& seq, const DecompositionResult& result);

  std::size_t cache_size() const;

 private:
  std::string cached_call(const std::string& cache_key, ChatRequest request, const std::string& signature);

  LlmProvider& provider_;
  const TemplateCatalog* catalog_;
  const PromptLibrary& prompts_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> cache_;
};

struct DetectionPrompt {
  std::string target_summary;
  std::vector<std::string> example_summaries;
  std::string parent_context;
  Level level = Level::status;
  std::string signature;
  std::string chunk_key;

  ChatRequest to_request(const PromptLibrary& prompts = PromptLibrary::defaults()) const;
};

struct ParsedVerdict {
  Verdict verdict = Verdict::abnormal;
  std::string explanation;
};

/// Accepts a `VERDICT: NORMAL|ABNORMAL` line anywhere (case-insensitive) or a
/// leading "normal:" / "abnormal:" prefix. The explanation is the remaining
/// text, trimmed.
std::optional<ParsedVerdict> parse_detection_response(std::string_view response);

struct LlmVerdict {
  Verdict verdict = Verdict::abnormal;
  std::string explanation;
  bool low_confidence = false;
};

/// Unparseable answers are re-asked up to `retry_limit` times, then resolve
/// to abnormal with the low-confidence flag. Transport failures escape as
/// ProviderError.
LlmVerdict llm_detect(const DetectionPrompt& prompt, LlmProvider& provider, int retry_limit = 2,
                      const PromptLibrary& prompts = PromptLibrary::defaults());

}  // namespace krone
