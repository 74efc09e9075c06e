#pragma once

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "sceval/corpus.hpp"
#include "sceval/detail/digest.hpp"
#include "sceval/detail/jsonl.hpp"
#include "sceval/error.hpp"
#include "sceval/generation.hpp"
#include "sceval/postprocess.hpp"
#include "sceval/templating.hpp"

namespace sceval {

struct CompletionRequest {
  std::string example_id;  // used by the oracle and predictions providers
  std::string prompt;
  DecodingParams params;
};

struct CompletionResult {
  std::string text;
  long latency_ms = 0;  // wall time of a live call; 0 for cached/offline providers
};

// Providers must be safe under concurrent complete() calls.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
  virtual std::string id() const = 0;
};

// Digest over (model_id, decoding params, prompt bytes); any byte change in
// the prompt or any parameter change yields a different key.
inline std::string cache_key(const DecodingParams& params, std::string_view prompt) {
  char tbuf[64];
  std::snprintf(tbuf, sizeof tbuf, "%.17g", params.temperature);
  std::string material = params.model_id;
  material += '\x1f';
  material += tbuf;
  material += '\x1f';
  material += std::to_string(params.max_new_tokens);
  material += '\x1f';
  material.append(prompt.data(), prompt.size());
  return detail::sha256_hex(material);
}

namespace detail {

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// Append-only JSONL of {key, model_id, prompt, params, completion, timestamp}.
// Lookups come from memory; writes are serialized and flushed per entry.
class ReplayCache {
 public:
  explicit ReplayCache(std::filesystem::path path, bool must_exist)
      : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
      detail::for_each_jsonl(path_, [&](std::size_t lineno, const nlohmann::json& obj) {
        if (!obj.contains("key") || !obj.contains("completion"))
          throw ValidationError(detail::jsonl_context(path_, lineno) +
                                ": cache entry needs 'key' and 'completion'");
        entries_.emplace(obj["key"].get<std::string>(), obj["completion"].get<std::string>());
      });
    } else if (must_exist) {
      throw ValidationError("replay cache " + path_.string() + " does not exist");
    }
  }

  std::optional<std::string> lookup(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& key, const CompletionRequest& request,
           const std::string& completion) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (!entries_.emplace(key, completion).second) return;  // already recorded
    if (!out_.is_open()) {
      if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
      out_.open(path_, std::ios::app | std::ios::binary);
      if (!out_) throw BackendError("cannot append to replay cache " + path_.string());
    }
    nlohmann::json obj{{"key", key},
                       {"model_id", request.params.model_id},
                       {"prompt", request.prompt},
                       {"params",
                        {{"temperature", request.params.temperature},
                         {"max_new_tokens", request.params.max_new_tokens}}},
                       {"completion", completion},
                       {"timestamp", detail::utc_timestamp()}};
    out_ << obj.dump() << "\n";
    out_.flush();
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.size();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::string> entries_;
  std::ofstream out_;
};

// Answers every prompt with the example's first gold reference.
class OracleBackend : public Backend {
 public:
  explicit OracleBackend(const Corpus& corpus) {
    for (const CompressionExample& ex : corpus.examples)
      references_.emplace(ex.id, ex.gold_references[0]);
  }

  CompletionResult complete(const CompletionRequest& request) override {
    auto it = references_.find(request.example_id);
    if (it == references_.end())
      throw BackendError("oracle backend: unknown example id '" + request.example_id + "'");
    return {it->second, 0};
  }

  std::string id() const override { return "oracle"; }

 private:
  std::unordered_map<std::string, std::string> references_;
};

// Scores externally produced outputs: JSONL of {id, completion}.
class PredictionsBackend : public Backend {
 public:
  explicit PredictionsBackend(const std::filesystem::path& path) {
    detail::for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& obj) {
      const std::string ctx = detail::jsonl_context(path, lineno);
      if (!obj.contains("id") || !obj["id"].is_string())
        throw ValidationError(ctx + ": missing string field 'id'");
      if (!obj.contains("completion") || !obj["completion"].is_string())
        throw ValidationError(ctx + ": missing string field 'completion'");
      auto [it, inserted] =
          completions_.emplace(obj["id"].get<std::string>(), obj["completion"].get<std::string>());
      if (!inserted) throw ValidationError(ctx + ": duplicate prediction id '" + it->first + "'");
    });
  }

  CompletionResult complete(const CompletionRequest& request) override {
    auto it = completions_.find(request.example_id);
    if (it == completions_.end())
      throw BackendError("predictions backend: no completion for example id '" +
                         request.example_id + "'");
    return {it->second, 0};
  }

  std::string id() const override { return "predictions"; }

 private:
  std::unordered_map<std::string, std::string> completions_;
};

// Serves completions from a cache only. strict misses are errors; otherwise a
// miss yields an empty completion.
class ReplayBackend : public Backend {
 public:
  ReplayBackend(std::shared_ptr<ReplayCache> cache, bool strict)
      : cache_(std::move(cache)), strict_(strict) {}

  CompletionResult complete(const CompletionRequest& request) override {
    const std::string key = cache_key(request.params, request.prompt);
    if (auto hit = cache_->lookup(key)) return {*hit, 0};
    if (strict_)
      throw BackendError("replay cache miss for example '" + request.example_id + "' (key " + key +
                         ")");
    return {"", 0};
  }

  std::string id() const override { return "replay"; }

 private:
  std::shared_ptr<ReplayCache> cache_;
  bool strict_;
};

struct HttpBackendConfig {
  std::string endpoint;  // base URL, e.g. https://api.openai.com/v1
  std::string api_key_env = "OPENAI_API_KEY";
  int max_retries = 3;        // transient-failure retries per request
  int timeout_ms = 120000;
  int backoff_initial_ms = 250;  // doubles per retry
};

// OpenAI-compatible chat-completions client: single user turn, bearer token
// from the configured environment variable, exponential backoff on transient
// failures.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw ValidationError("http backend needs an endpoint URL");
    std::size_t scheme = config_.endpoint.find("://");
    if (scheme == std::string::npos)
      throw ValidationError("endpoint '" + config_.endpoint + "' has no scheme");
    std::size_t path_start = config_.endpoint.find('/', scheme + 3);
    if (path_start == std::string::npos) {
      host_ = config_.endpoint;
    } else {
      host_ = config_.endpoint.substr(0, path_start);
      base_path_ = config_.endpoint.substr(path_start);
      while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
    }
    const char* token = std::getenv(config_.api_key_env.c_str());
    if (token) bearer_ = token;
  }

  CompletionResult complete(const CompletionRequest& request) override {
    nlohmann::json body{{"model", request.params.model_id},
                        {"messages",
                         nlohmann::json::array(
                             {nlohmann::json{{"role", "user"}, {"content", request.prompt}}})},
                        {"temperature", request.params.temperature},
                        {"max_tokens", request.params.max_new_tokens}};
    const std::string payload = body.dump();
    const std::string path =
        base_path_.ends_with("/chat/completions") ? base_path_ : base_path_ + "/chat/completions";

    const auto start = std::chrono::steady_clock::now();
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        ++retries_;
        std::this_thread::sleep_for(
            std::chrono::milliseconds(config_.backoff_initial_ms << (attempt - 1)));
      }
      httplib::Client client(host_);
      client.set_connection_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
      client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
      httplib::Headers headers;
      if (!bearer_.empty()) headers.emplace("Authorization", "Bearer " + bearer_);
      auto res = client.Post(path, headers, payload, "application/json");
      if (!res) {
        last_error = "connection error (" + httplib::to_string(res.error()) + ")";
        continue;
      }
      if (is_transient(res->status)) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status < 200 || res->status >= 300)
        throw BackendError("provider returned HTTP " + std::to_string(res->status) + ": " +
                           res->body);
      return {parse_completion(res->body),
              std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - start)
                  .count()};
    }
    throw BackendError("request failed after " + std::to_string(config_.max_retries) +
                       " retries: " + last_error);
  }

  std::string id() const override { return "http"; }

  long retry_count() const { return retries_.load(); }

 private:
  static bool is_transient(int status) {
    return status == 408 || status == 429 || status == 500 || status == 502 || status == 503 ||
           status == 504;
  }

  static std::string parse_completion(const std::string& body) {
    nlohmann::json obj = nlohmann::json::parse(body, nullptr, false);
    if (obj.is_discarded()) throw BackendError("provider response is not JSON: " + body);
    if (obj.contains("error"))
      throw BackendError("provider error: " + obj["error"].dump());
    if (!obj.contains("choices") || !obj["choices"].is_array() || obj["choices"].empty())
      throw BackendError("provider response has no choices: " + body);
    const nlohmann::json& choice = obj["choices"][0];
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string())
      return choice["message"]["content"].get<std::string>();
    if (choice.contains("text") && choice["text"].is_string())
      return choice["text"].get<std::string>();
    throw BackendError("provider response has no message content: " + body);
  }

  HttpBackendConfig config_;
  std::string host_;
  std::string base_path_;
  std::string bearer_;
  std::atomic<long> retries_{0};
};

// Write-through cache around any provider: hits replay from the cache, misses
// go to the inner provider and are recorded before returning.
class CachingBackend : public Backend {
 public:
  CachingBackend(std::unique_ptr<Backend> inner, std::shared_ptr<ReplayCache> cache)
      : inner_(std::move(inner)), cache_(std::move(cache)) {}

  CompletionResult complete(const CompletionRequest& request) override {
    const std::string key = cache_key(request.params, request.prompt);
    if (auto hit = cache_->lookup(key)) return {*hit, 0};
    CompletionResult result = inner_->complete(request);
    cache_->put(key, request, result.text);
    return result;
  }

  std::string id() const override { return inner_->id(); }

  Backend& inner() { return *inner_; }

 private:
  std::unique_ptr<Backend> inner_;
  std::shared_ptr<ReplayCache> cache_;
};

struct BatchOptions {
  int parallelism = 1;
  bool skip_failures = false;
  // Called in corpus order as records complete; used for incremental persistence.
  std::function<void(const GenerationRecord&)> on_record;
};

struct BatchFailure {
  std::string example_id;
  std::string message;
};

struct BatchResult {
  std::vector<GenerationRecord> records;  // one per example, corpus order
  std::vector<BatchFailure> failures;
};

// Dispatches every example against the backend with at most
// options.parallelism requests in flight. Output order always matches corpus
// order; per-example failures are collected, not thrown.
inline BatchResult run_batch(const Corpus& corpus, const InstructionTemplate& tmpl,
                             const LengthPolicy& policy, const DecodingParams& params,
                             Backend& backend, const ExtractionConfig& extraction,
                             const BatchOptions& options = {}) {
  if (options.parallelism < 1) throw ValidationError("parallelism must be >= 1");
  const bool needs_spec = uses_length_placeholders(tmpl);
  if (needs_spec && policy.mode == LengthMode::none)
    throw ValidationError("template '" + tmpl.name +
                          "' uses length placeholders but the length policy is 'none'");

  std::vector<std::string> prompts;
  prompts.reserve(corpus.examples.size());
  for (const CompressionExample& ex : corpus.examples) {
    std::optional<LengthSpec> spec;
    if (needs_spec) spec = compute_length_spec(ex, policy);
    prompts.push_back(render(tmpl, ex, spec));
  }

  BatchResult result;
  result.records.reserve(corpus.examples.size());
  std::deque<std::future<GenerationRecord>> inflight;
  const std::string backend_id = backend.id();

  auto drain_one = [&] {
    GenerationRecord rec = inflight.front().get();
    inflight.pop_front();
    if (!rec.error.empty()) result.failures.push_back({rec.example_id, rec.error});
    if (options.on_record) options.on_record(rec);
    result.records.push_back(std::move(rec));
  };

  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    while (inflight.size() >= static_cast<std::size_t>(options.parallelism)) drain_one();
    CompletionRequest request{corpus.examples[i].id, prompts[i], params};
    inflight.push_back(std::async(
        std::launch::async,
        [request = std::move(request), &backend, &extraction, &tmpl, &backend_id] {
          GenerationRecord rec;
          rec.example_id = request.example_id;
          rec.template_name = tmpl.name;
          rec.prompt = request.prompt;
          rec.backend_id = backend_id;
          try {
            CompletionResult res = backend.complete(request);
            rec.raw_completion = res.text;
            rec.extracted = extract(rec.raw_completion, extraction);
            rec.latency_ms = res.latency_ms;
          } catch (const std::exception& e) {
            rec.error = e.what();
          }
          return rec;
        }));
  }
  while (!inflight.empty()) drain_one();
  return result;
}

}  // namespace sceval
