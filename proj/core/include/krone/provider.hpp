#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace krone {

enum class PromptTask { extract, refine, summarize, detect };

std::string_view to_string(PromptTask task) noexcept;

/// One chat-completion request. `attributes` is local metadata (signature,
/// chunk key, canonical digest) that scripted providers key on; it is never
/// sent over the wire and never part of the request hash.
struct ChatRequest {
  PromptTask task = PromptTask::detect;
  std::string system;
  std::string prompt;
  std::map<std::string, std::string> attributes;

  /// Stable hex digest over (system, prompt), used by recorded fixtures.
  std::string hash() const;
};

/// Chat-completion backend. Thread-safe; calls may be issued concurrently.
/// Transport failures are retried up to `retry_limit` extra attempts before a
/// ProviderError escapes.
class LlmProvider {
 public:
  explicit LlmProvider(int retry_limit = 2) : retry_limit_(retry_limit) {}
  virtual ~LlmProvider() = default;
  LlmProvider(const LlmProvider&) = delete;
  LlmProvider& operator=(const LlmProvider&) = delete;

  std::string complete(const ChatRequest& request);

  /// Backend invocations, including retries.
  std::size_t call_count() const noexcept { return calls_.load(); }
  std::size_t call_count(PromptTask task) const noexcept;
  void reset_counters() noexcept;
  int retry_limit() const noexcept { return retry_limit_; }

 private:
  virtual std::string do_complete(const ChatRequest& request) = 0;

  int retry_limit_;
  std::atomic<std::size_t> calls_{0};
  std::array<std::atomic<std::size_t>, 4> per_task_{};
};

/// Scripted in-process provider.
///
/// Responses are resolved in order: a queued response (FIFO), a scripted answer
/// keyed by the request's `signature`, `chunk_key` or `key` attribute, a custom
/// responder, then the built-in default:
///   - summarize: returns the `digest` attribute verbatim,
///   - detect: `default_detect` (initially "VERDICT: ABNORMAL"),
///   - extract/refine: the `expected` attribute if present, else an error.
class MockProvider : public LlmProvider {
 public:
  using Responder = std::function<std::optional<std::string>(const ChatRequest&)>;

  explicit MockProvider(int retry_limit = 2) : LlmProvider(retry_limit) {}

  /// JSON fixture: {"detect": {"<signature or chunk key>": "<answer>"},
  ///                "default_detect": "...", "extract": {"<key>": "<answer>"}}
  static std::unique_ptr<MockProvider> from_fixture(const std::filesystem::path& path,
                                                    int retry_limit = 2);

  void script(PromptTask task, std::string match_key, std::string response);
  void queue_response(std::string response);
  /// Queued failure: the next backend call throws ProviderError.
  void queue_failure(std::string message);
  void set_default_detect(std::string response);
  void set_responder(Responder responder);

  std::optional<ChatRequest> last_request() const;

 private:
  std::string do_complete(const ChatRequest& request) override;

  mutable std::mutex mutex_;
  std::vector<std::pair<bool, std::string>> queue_;  // (is_failure, payload)
  std::size_t queue_head_ = 0;
  std::map<std::pair<PromptTask, std::string>, std::string> scripted_;
  std::string default_detect_ = "VERDICT: ABNORMAL\nSequence deviates from known normal behaviour.";
  Responder responder_;
  std::optional<ChatRequest> last_;
};

/// Replays (request-hash, response) pairs from an append-only JSONL fixture.
/// With an inner provider it records: misses are forwarded and appended.
class RecordedProvider : public LlmProvider {
 public:
  RecordedProvider(std::filesystem::path fixture, std::unique_ptr<LlmProvider> inner = nullptr,
                   int retry_limit = 0);

  std::size_t entries() const;
  std::size_t misses() const noexcept { return misses_.load(); }

 private:
  std::string do_complete(const ChatRequest& request) override;

  std::filesystem::path fixture_;
  std::unique_ptr<LlmProvider> inner_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::string> responses_;
  std::atomic<std::size_t> misses_{0};
};

struct HttpChatSettings {
  std::string endpoint;  // e.g. https://api.openai.com/v1/chat/completions
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string auth_header = "Authorization";
  std::chrono::milliseconds timeout{30000};
  double temperature = 0.0;
};

/// Generic JSON chat-completion client ({"model", "messages"} request,
/// `choices[0].message.content` response).
class HttpChatProvider : public LlmProvider {
 public:
  explicit HttpChatProvider(HttpChatSettings settings, int retry_limit = 2);

 private:
  std::string do_complete(const ChatRequest& request) override;

  HttpChatSettings settings_;
  std::string scheme_host_;
  std::string path_;
};

struct ProviderConfig {
  enum class Kind { mock, recorded, http_chat };
  Kind kind = Kind::mock;
  std::filesystem::path fixture;
  /// recorded only: "replay" or "record" (record requires `inner`).
  std::string mode = "replay";
  std::shared_ptr<ProviderConfig> inner;
  HttpChatSettings http;
  int retry_limit = 2;

  /// Reads a JSON config; relative fixture paths resolve against its directory.
  static ProviderConfig load(const std::filesystem::path& path);
  static ProviderConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base);
};

std::unique_ptr<LlmProvider> make_provider(const ProviderConfig& config);

}  // namespace krone
