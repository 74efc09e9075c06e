#include "sceval/backend.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "testutil.hpp"

using namespace sceval;

namespace {

DecodingParams params() { return DecodingParams{"test-model", 0.0, 64}; }

BatchResult oracle_batch(const Corpus& corpus, int parallelism = 1) {
  OracleBackend backend(corpus);
  BatchOptions options;
  options.parallelism = parallelism;
  return run_batch(corpus, builtin_template("priming#3"), LengthPolicy::gold(), params(), backend,
                   ExtractionConfig{}, options);
}

}  // namespace

TEST(CacheKeyTest, SensitiveToEveryInput) {
  DecodingParams p = params();
  const std::string prompt = "Sentence:\nabc def\n";
  const std::string base = cache_key(p, prompt);
  EXPECT_EQ(base.size(), 64u);
  EXPECT_EQ(cache_key(p, prompt), base);

  for (std::size_t i = 0; i < prompt.size(); ++i) {
    std::string mutated = prompt;
    mutated[i] ^= 1;
    EXPECT_NE(cache_key(p, mutated), base) << "byte " << i;
  }
  DecodingParams hotter = p;
  hotter.temperature = 0.7;
  EXPECT_NE(cache_key(hotter, prompt), base);
  DecodingParams longer = p;
  longer.max_new_tokens = 65;
  EXPECT_NE(cache_key(longer, prompt), base);
  DecodingParams other = p;
  other.model_id = "test-model2";
  EXPECT_NE(cache_key(other, prompt), base);
}

TEST(OracleBackendTest, ReturnsGoldReferences) {
  Corpus corpus = testutil::synthetic_labeled_corpus(3, 1);
  BatchResult batch = oracle_batch(corpus);
  ASSERT_EQ(batch.records.size(), 3u);
  EXPECT_TRUE(batch.failures.empty());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(batch.records[i].example_id, corpus.examples[i].id);
    EXPECT_EQ(batch.records[i].extracted, corpus.examples[i].gold_references[0]);
    EXPECT_EQ(batch.records[i].backend_id, "oracle");
  }
}

TEST(RunBatchTest, EmptyCorpus) {
  Corpus corpus{"empty", "test", {}};
  BatchResult batch = oracle_batch(corpus);
  EXPECT_TRUE(batch.records.empty());
  EXPECT_TRUE(batch.failures.empty());
}

TEST(RunBatchTest, ParallelismPreservesOrderAndContent) {
  Corpus corpus = testutil::synthetic_labeled_corpus(100, 42);
  BatchResult serial = oracle_batch(corpus, 1);
  BatchResult parallel = oracle_batch(corpus, 4);
  ASSERT_EQ(serial.records.size(), parallel.records.size());
  for (std::size_t i = 0; i < serial.records.size(); ++i) {
    EXPECT_EQ(serial.records[i].example_id, parallel.records[i].example_id);
    EXPECT_EQ(serial.records[i].prompt, parallel.records[i].prompt);
    EXPECT_EQ(serial.records[i].raw_completion, parallel.records[i].raw_completion);
  }
}

TEST(RunBatchTest, OnRecordSeesCorpusOrder) {
  Corpus corpus = testutil::synthetic_labeled_corpus(20, 5);
  OracleBackend backend(corpus);
  std::vector<std::string> seen;
  BatchOptions options;
  options.parallelism = 8;
  options.on_record = [&](const GenerationRecord& rec) { seen.push_back(rec.example_id); };
  run_batch(corpus, builtin_template("plain#1"), LengthPolicy::none(), params(), backend,
            ExtractionConfig{}, options);
  ASSERT_EQ(seen.size(), 20u);
  for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], corpus.examples[i].id);
}

TEST(RunBatchTest, CollectsPerExampleFailures) {
  Corpus corpus = testutil::synthetic_labeled_corpus(3, 6);
  Corpus partial = corpus;
  partial.examples.pop_back();  // oracle knows only the first two
  OracleBackend backend(partial);
  BatchResult batch = run_batch(corpus, builtin_template("plain#1"), LengthPolicy::none(),
                                params(), backend, ExtractionConfig{}, {});
  ASSERT_EQ(batch.records.size(), 3u);
  ASSERT_EQ(batch.failures.size(), 1u);
  EXPECT_EQ(batch.failures[0].example_id, "ex000002");
  EXPECT_FALSE(batch.records[2].error.empty());
}

TEST(PredictionsBackendTest, ServesFileContents) {
  PredictionsBackend backend(testutil::data_dir() / "predictions.jsonl");
  CompletionResult res = backend.complete({"ex000001", "ignored prompt", params()});
  EXPECT_EQ(res.text, "Chinese shares closed lower Wednesday.");
  EXPECT_THROW(backend.complete({"missing", "p", params()}), BackendError);
}

TEST(ReplayBackendTest, HitMissAndStrictness) {
  testutil::TempDir tmp("replay");
  auto cache = std::make_shared<ReplayCache>(tmp.file("cache.jsonl"), false);
  CompletionRequest req{"ex0", "the prompt", params()};
  cache->put(cache_key(req.params, req.prompt), req, "the completion");

  ReplayBackend strict(cache, true);
  EXPECT_EQ(strict.complete(req).text, "the completion");
  CompletionRequest miss{"ex1", "another prompt", params()};
  try {
    strict.complete(miss);
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("ex1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(cache_key(miss.params, miss.prompt)),
              std::string::npos);
  }
  ReplayBackend lenient(cache, false);
  EXPECT_EQ(lenient.complete(miss).text, "");
}

TEST(ReplayCacheTest, PersistsAndReloads) {
  testutil::TempDir tmp("cache_io");
  CompletionRequest req{"ex0", "prompt bytes", params()};
  const std::string key = cache_key(req.params, req.prompt);
  {
    ReplayCache cache(tmp.file("c.jsonl"), false);
    cache.put(key, req, "stored");
    cache.put(key, req, "stored");  // duplicate put keeps one entry
    EXPECT_EQ(cache.size(), 1u);
  }
  ReplayCache reloaded(tmp.file("c.jsonl"), true);
  EXPECT_EQ(reloaded.size(), 1u);
  ASSERT_TRUE(reloaded.lookup(key).has_value());
  EXPECT_EQ(*reloaded.lookup(key), "stored");
  EXPECT_FALSE(reloaded.lookup("0000").has_value());
  EXPECT_THROW(ReplayCache(tmp.file("absent.jsonl"), true), ValidationError);
}

TEST(CachingBackendTest, WritesThroughOnce) {
  Corpus corpus = testutil::synthetic_labeled_corpus(5, 30);
  testutil::TempDir tmp("writethrough");
  auto cache = std::make_shared<ReplayCache>(tmp.file("c.jsonl"), false);
  CachingBackend caching(std::make_unique<OracleBackend>(corpus), cache);
  BatchOptions options;
  run_batch(corpus, builtin_template("plain#1"), LengthPolicy::none(), params(), caching,
            ExtractionConfig{}, options);
  EXPECT_EQ(cache->size(), 5u);
  // replaying from the primed cache matches the oracle run byte for byte
  ReplayBackend replay(cache, true);
  BatchResult replayed = run_batch(corpus, builtin_template("plain#1"), LengthPolicy::none(),
                                   params(), replay, ExtractionConfig{}, options);
  for (std::size_t i = 0; i < corpus.examples.size(); ++i)
    EXPECT_EQ(replayed.records[i].raw_completion, corpus.examples[i].gold_references[0]);
}

namespace {

// Minimal chat-completions endpoint: fails `failures` times with 503, then
// echoes a canned completion. Counts every request it sees.
class FakeProvider {
 public:
  explicit FakeProvider(int failures) : failures_left_(failures) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      ++requests_;
      if (failures_left_.fetch_sub(1) > 0) {
        res.status = 503;
        res.set_content("overloaded", "text/plain");
        return;
      }
      auto body = nlohmann::json::parse(req.body);
      last_auth_ = req.get_header_value("Authorization");
      last_model_ = body["model"].get<std::string>();
      std::string prompt = body["messages"][0]["content"].get<std::string>();
      nlohmann::json reply{
          {"choices",
           nlohmann::json::array(
               {nlohmann::json{{"message", {{"role", "assistant"},
                                            {"content", "echo: " + prompt.substr(0, 10)}}}}})}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeProvider() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int requests() const { return requests_.load(); }
  std::string last_model() const { return last_model_; }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> failures_left_;
  std::atomic<int> requests_{0};
  std::string last_model_, last_auth_;
};

HttpBackendConfig http_config(const FakeProvider& provider) {
  HttpBackendConfig cfg;
  cfg.endpoint = provider.endpoint();
  cfg.api_key_env = "SCEVAL_TEST_TOKEN";
  cfg.max_retries = 3;
  cfg.backoff_initial_ms = 10;
  return cfg;
}

}  // namespace

TEST(HttpBackendTest, RetriesTransientFailuresThenSucceeds) {
  setenv("SCEVAL_TEST_TOKEN", "sekrit", 1);
  FakeProvider provider(2);  // two 503s, then success
  HttpBackend backend(http_config(provider));
  CompletionResult res = backend.complete({"ex0", "Sentence:\nabc\n", params()});
  EXPECT_EQ(res.text.rfind("echo: ", 0), 0u);
  EXPECT_GE(res.latency_ms, 0);
  EXPECT_EQ(provider.requests(), 3);
  EXPECT_EQ(backend.retry_count(), 2);
  EXPECT_EQ(provider.last_model(), "test-model");
  EXPECT_EQ(provider.last_auth(), "Bearer sekrit");
}

TEST(HttpBackendTest, GivesUpAfterRetryBudget) {
  FakeProvider provider(100);
  HttpBackendConfig cfg = http_config(provider);
  cfg.max_retries = 1;
  HttpBackend backend(cfg);
  EXPECT_THROW(backend.complete({"ex0", "p", params()}), BackendError);
  EXPECT_EQ(provider.requests(), 2);  // initial try + one retry
}

TEST(HttpBackendTest, WriteThroughCachePrimesReplay) {
  FakeProvider provider(0);
  testutil::TempDir tmp("http_cache");
  auto cache = std::make_shared<ReplayCache>(tmp.file("c.jsonl"), false);
  CachingBackend caching(std::make_unique<HttpBackend>(http_config(provider)), cache);
  CompletionRequest req{"ex0", "Sentence:\nxyz\n", params()};
  CompletionResult live = caching.complete(req);
  CompletionResult cached = caching.complete(req);
  EXPECT_EQ(live.text, cached.text);
  EXPECT_EQ(cached.latency_ms, 0);
  EXPECT_EQ(provider.requests(), 1);
}

TEST(HttpBackendTest, ProviderErrorBodyIsSurfaced) {
  FakeProvider provider(0);
  HttpBackendConfig cfg = http_config(provider);
  cfg.endpoint = provider.endpoint() + "/missing";  // 404 path, not retried
  HttpBackend backend(cfg);
  try {
    backend.complete({"ex0", "p", params()});
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("404"), std::string::npos);
  }
  EXPECT_EQ(backend.retry_count(), 0);
}
