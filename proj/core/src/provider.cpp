#include "krone/provider.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "io_util.hpp"
#include "krone/error.hpp"

namespace krone {

using json = nlohmann::json;

std::string_view to_string(PromptTask task) noexcept {
  switch (task) {
    case PromptTask::extract: return "extract";
    case PromptTask::refine: return "refine";
    case PromptTask::summarize: return "summarize";
    case PromptTask::detect: return "detect";
  }
  return "?";
}

std::string ChatRequest::hash() const {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  static constexpr char kSep = '\x1e';
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), system.data(), system.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), &kSep, 1) != 1 ||
      EVP_DigestUpdate(ctx.get(), prompt.data(), prompt.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string LlmProvider::complete(const ChatRequest& request) {
  for (int attempt = 0;; ++attempt) {
    ++calls_;
    ++per_task_[static_cast<std::size_t>(request.task)];
    try {
      return do_complete(request);
    } catch (const ProviderError& e) {
      if (attempt >= retry_limit_) throw;
      spdlog::warn("provider call failed (attempt {}): {}", attempt + 1, e.what());
    }
  }
}

std::size_t LlmProvider::call_count(PromptTask task) const noexcept {
  return per_task_[static_cast<std::size_t>(task)].load();
}

void LlmProvider::reset_counters() noexcept {
  calls_ = 0;
  for (auto& c : per_task_) c = 0;
}

// ---------------------------------------------------------------- mock

std::unique_ptr<MockProvider> MockProvider::from_fixture(const std::filesystem::path& path,
                                                         int retry_limit) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError("bad mock fixture " + path.string() + ": " + e.what());
  }
  auto mock = std::make_unique<MockProvider>(retry_limit);
  const std::pair<const char*, PromptTask> sections[] = {{"detect", PromptTask::detect},
                                                         {"extract", PromptTask::extract},
                                                         {"refine", PromptTask::refine},
                                                         {"summarize", PromptTask::summarize}};
  for (const auto& [name, task] : sections) {
    if (!doc.contains(name)) continue;
    for (const auto& [k, v] : doc.at(name).items()) mock->script(task, k, v.get<std::string>());
  }
  if (doc.contains("default_detect")) mock->set_default_detect(doc.at("default_detect").get<std::string>());
  return mock;
}

void MockProvider::script(PromptTask task, std::string match_key, std::string response) {
  std::lock_guard lock(mutex_);
  scripted_[{task, std::move(match_key)}] = std::move(response);
}

void MockProvider::queue_response(std::string response) {
  std::lock_guard lock(mutex_);
  queue_.emplace_back(false, std::move(response));
}

void MockProvider::queue_failure(std::string message) {
  std::lock_guard lock(mutex_);
  queue_.emplace_back(true, std::move(message));
}

void MockProvider::set_default_detect(std::string response) {
  std::lock_guard lock(mutex_);
  default_detect_ = std::move(response);
}

void MockProvider::set_responder(Responder responder) {
  std::lock_guard lock(mutex_);
  responder_ = std::move(responder);
}

std::optional<ChatRequest> MockProvider::last_request() const {
  std::lock_guard lock(mutex_);
  return last_;
}

std::string MockProvider::do_complete(const ChatRequest& request) {
  std::unique_lock lock(mutex_);
  last_ = request;
  if (queue_head_ < queue_.size()) {
    auto [failure, payload] = queue_[queue_head_++];
    if (failure) throw ProviderError(payload);
    return payload;
  }
  for (const char* attr : {"signature", "chunk_key", "key"}) {
    auto a = request.attributes.find(attr);
    if (a == request.attributes.end()) continue;
    if (auto it = scripted_.find({request.task, a->second}); it != scripted_.end()) return it->second;
  }
  if (responder_) {
    auto responder = responder_;
    lock.unlock();
    if (auto r = responder(request)) return *r;
    lock.lock();
  }
  switch (request.task) {
    case PromptTask::summarize:
      if (auto it = request.attributes.find("digest"); it != request.attributes.end()) return it->second;
      break;
    case PromptTask::detect:
      return default_detect_;
    case PromptTask::extract:
    case PromptTask::refine:
      if (auto it = request.attributes.find("expected"); it != request.attributes.end()) return it->second;
      break;
  }
  throw ProviderError(std::string("mock provider has no answer for ") + std::string(to_string(request.task)) +
                      " request");
}

// ---------------------------------------------------------------- recorded

RecordedProvider::RecordedProvider(std::filesystem::path fixture, std::unique_ptr<LlmProvider> inner,
                                   int retry_limit)
    : LlmProvider(retry_limit), fixture_(std::move(fixture)), inner_(std::move(inner)) {
  std::ifstream in(fixture_);
  if (!in) {
    if (!inner_) throw ProviderError("recorded fixture missing: " + fixture_.string());
    return;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto row = json::parse(line);
      responses_[row.at("request_hash").get<std::string>()] = row.at("response").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad recorded fixture row: ") + e.what(), line_no);
    }
  }
}

std::size_t RecordedProvider::entries() const {
  std::lock_guard lock(mutex_);
  return responses_.size();
}

std::string RecordedProvider::do_complete(const ChatRequest& request) {
  const auto h = request.hash();
  {
    std::lock_guard lock(mutex_);
    if (auto it = responses_.find(h); it != responses_.end()) return it->second;
    ++misses_;
  }
  if (!inner_) throw ProviderError("no recorded response for request " + h);
  auto response = inner_->complete(request);
  std::lock_guard lock(mutex_);
  if (responses_.emplace(h, response).second) {
    if (fixture_.has_parent_path()) std::filesystem::create_directories(fixture_.parent_path());
    std::ofstream out(fixture_, std::ios::app);
    out << json{{"request_hash", h}, {"response", response}}.dump() << '\n';
  }
  return response;
}

// ---------------------------------------------------------------- http

HttpChatProvider::HttpChatProvider(HttpChatSettings settings, int retry_limit)
    : LlmProvider(retry_limit), settings_(std::move(settings)) {
  const auto scheme_end = settings_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw ContractError("endpoint needs a scheme: " + settings_.endpoint);
  const auto path_start = settings_.endpoint.find('/', scheme_end + 3);
  scheme_host_ = settings_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : settings_.endpoint.substr(path_start);
}

std::string HttpChatProvider::do_complete(const ChatRequest& request) {
  httplib::Client client(scheme_host_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(settings_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(settings_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!settings_.api_key_env.empty()) {
    if (const char* key = std::getenv(settings_.api_key_env.c_str()); key && *key)
      headers.emplace(settings_.auth_header, std::string("Bearer ") + key);
  }
  json messages = json::array();
  if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
  messages.push_back({{"role", "user"}, {"content", request.prompt}});
  json body{{"model", settings_.model}, {"messages", messages}, {"temperature", settings_.temperature}};

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw ProviderError("http transport error: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw ProviderError("http status " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  try {
    auto doc = json::parse(res->body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed chat response: ") + e.what());
  }
}

// ---------------------------------------------------------------- config

ProviderConfig ProviderConfig::from_json(const json& doc, const std::filesystem::path& base) {
  ProviderConfig cfg;
  const auto kind = doc.at("kind").get<std::string>();
  if (kind == "mock") {
    cfg.kind = ProviderConfig::Kind::mock;
  } else if (kind == "recorded") {
    cfg.kind = ProviderConfig::Kind::recorded;
  } else if (kind == "http_chat") {
    cfg.kind = ProviderConfig::Kind::http_chat;
  } else {
    throw ContractError("unknown provider kind: " + kind);
  }
  if (doc.contains("fixture")) {
    std::filesystem::path p = doc.at("fixture").get<std::string>();
    cfg.fixture = p.is_absolute() ? p : base / p;
  }
  cfg.mode = doc.value("mode", std::string("replay"));
  cfg.retry_limit = doc.value("retry_limit", 2);
  if (cfg.retry_limit < 0) throw ContractError("retry_limit must be >= 0");
  if (doc.contains("inner")) cfg.inner = std::make_shared<ProviderConfig>(from_json(doc.at("inner"), base));
  if (cfg.kind == ProviderConfig::Kind::http_chat) {
    cfg.http.endpoint = doc.at("endpoint").get<std::string>();
    cfg.http.model = doc.value("model", cfg.http.model);
    cfg.http.api_key_env = doc.value("api_key_env", cfg.http.api_key_env);
    cfg.http.auth_header = doc.value("auth_header", cfg.http.auth_header);
    cfg.http.timeout = std::chrono::milliseconds(doc.value("timeout_ms", 30000));
    cfg.http.temperature = doc.value("temperature", 0.0);
  }
  return cfg;
}

ProviderConfig ProviderConfig::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)), path.parent_path());
  } catch (const json::exception& e) {
    throw ParseError("bad provider config " + path.string() + ": " + e.what());
  }
}

std::unique_ptr<LlmProvider> make_provider(const ProviderConfig& config) {
  switch (config.kind) {
    case ProviderConfig::Kind::mock:
      if (config.fixture.empty()) return std::make_unique<MockProvider>(config.retry_limit);
      return MockProvider::from_fixture(config.fixture, config.retry_limit);
    case ProviderConfig::Kind::recorded: {
      std::unique_ptr<LlmProvider> inner;
      if (config.mode == "record") {
        if (!config.inner) throw ContractError("record mode needs an inner provider");
        inner = make_provider(*config.inner);
      } else if (config.mode != "replay") {
        throw ContractError("recorded mode must be replay or record");
      }
      return std::make_unique<RecordedProvider>(config.fixture, std::move(inner), config.retry_limit);
    }
    case ProviderConfig::Kind::http_chat:
      return std::make_unique<HttpChatProvider>(config.http, config.retry_limit);
  }
  throw ContractError("unknown provider kind");
}

}  // namespace krone
