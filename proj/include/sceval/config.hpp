#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sceval/corpus.hpp"
#include "sceval/detail/digest.hpp"
#include "sceval/detail/jsonl.hpp"
#include "sceval/error.hpp"
#include "sceval/metrics.hpp"
#include "sceval/postprocess.hpp"
#include "sceval/templating.hpp"

namespace sceval {

struct CorpusConfig {
  std::string path;
  CorpusFormat format = CorpusFormat::labeled_tsv;
  std::string name;   // defaults to the file stem
  std::string split = "test";
  std::string origin = "custom";
};

struct TemplateConfig {
  std::string name = "priming#3";  // built-in name; ignored when file is set
  std::string file;                // body loaded verbatim from this path
  std::string prefix;              // raw prefix text; wins over prefix_name
  std::string prefix_name;         // one of the shipped prefixes (cot, tot)
};

struct BackendSpec {
  std::string kind = "oracle";  // oracle | replay | http | predictions
  std::string endpoint;
  std::string model_id = "default";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string cache;        // replay cache path; write-through when kind != replay
  bool strict = true;       // replay: error on cache miss
  std::string predictions;  // predictions backend input
  double temperature = 0.0;
  int max_new_tokens = 256;
  int max_retries = 3;
  int timeout_ms = 120000;
};

// One declarative run manifest; CLI flags override file values which override
// the defaults here.
struct RunConfig {
  CorpusConfig corpus;
  TemplateConfig tmpl;
  LengthPolicy policy = LengthPolicy::gold();
  BackendSpec backend;
  std::string extraction_profile = "default";
  ExtractionConfig extraction;  // the default-constructed config is the "default" profile
  ScoreOptions scoring;
  std::string output_dir = "runs/out";
  std::uint64_t seed = 12345;
  int parallelism = 1;
  bool skip_failures = false;
  std::string setting;  // row label; defaults to the backend kind
};

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json extraction{{"profile", cfg.extraction_profile},
                            {"cue_phrase", cfg.extraction.cue_phrase},
                            {"strip_quotes", cfg.extraction.strip_quotes},
                            {"preamble_patterns", cfg.extraction.preamble_patterns}};
  if (cfg.extraction.truncate_chars) extraction["truncate_chars"] = *cfg.extraction.truncate_chars;
  else extraction["truncate_chars"] = nullptr;

  nlohmann::json policy{{"mode", to_string(cfg.policy.mode)}};
  if (cfg.policy.mode == LengthMode::ratio) policy["ratio"] = cfg.policy.ratio;
  if (cfg.policy.mode == LengthMode::fixed) policy["fixed"] = cfg.policy.fixed;

  return nlohmann::json{
      {"corpus",
       {{"path", cfg.corpus.path},
        {"format", to_string(cfg.corpus.format)},
        {"name", cfg.corpus.name},
        {"split", cfg.corpus.split},
        {"origin", cfg.corpus.origin}}},
      {"template",
       {{"name", cfg.tmpl.name},
        {"file", cfg.tmpl.file},
        {"prefix", cfg.tmpl.prefix},
        {"prefix_name", cfg.tmpl.prefix_name}}},
      {"policy", std::move(policy)},
      {"backend",
       {{"kind", cfg.backend.kind},
        {"endpoint", cfg.backend.endpoint},
        {"model_id", cfg.backend.model_id},
        {"api_key_env", cfg.backend.api_key_env},
        {"cache", cfg.backend.cache},
        {"strict", cfg.backend.strict},
        {"predictions", cfg.backend.predictions},
        {"temperature", cfg.backend.temperature},
        {"max_new_tokens", cfg.backend.max_new_tokens},
        {"max_retries", cfg.backend.max_retries},
        {"timeout_ms", cfg.backend.timeout_ms}}},
      {"extraction", std::move(extraction)},
      {"scoring",
       {{"rouge_mode", to_string(cfg.scoring.rouge_mode)},
        {"reference_aggregation", to_string(cfg.scoring.reference_aggregation)},
        {"stemming", cfg.scoring.stemming}}},
      {"output_dir", cfg.output_dir},
      {"seed", cfg.seed},
      {"parallelism", cfg.parallelism},
      {"skip_failures", cfg.skip_failures},
      {"setting", cfg.setting}};
}

inline RunConfig run_config_from_json(const nlohmann::json& obj) {
  RunConfig cfg;
  if (obj.contains("corpus")) {
    const nlohmann::json& corpus = obj["corpus"];
    cfg.corpus.path = corpus.value("path", "");
    if (corpus.contains("format"))
      cfg.corpus.format = corpus_format_from_string(corpus["format"].get<std::string>());
    cfg.corpus.name = corpus.value("name", "");
    cfg.corpus.split = corpus.value("split", "test");
    cfg.corpus.origin = corpus.value("origin", "custom");
  }
  if (obj.contains("template")) {
    const nlohmann::json& tmpl = obj["template"];
    cfg.tmpl.name = tmpl.value("name", cfg.tmpl.name);
    cfg.tmpl.file = tmpl.value("file", "");
    cfg.tmpl.prefix = tmpl.value("prefix", "");
    cfg.tmpl.prefix_name = tmpl.value("prefix_name", "");
  }
  if (obj.contains("policy")) {
    const nlohmann::json& policy = obj["policy"];
    cfg.policy.mode = length_mode_from_string(policy.value("mode", "gold"));
    cfg.policy.ratio = policy.value("ratio", 0.75);
    cfg.policy.fixed = policy.value("fixed", 11);
  }
  if (obj.contains("backend")) {
    const nlohmann::json& backend = obj["backend"];
    cfg.backend.kind = backend.value("kind", "oracle");
    cfg.backend.endpoint = backend.value("endpoint", "");
    cfg.backend.model_id = backend.value("model_id", "default");
    cfg.backend.api_key_env = backend.value("api_key_env", "OPENAI_API_KEY");
    cfg.backend.cache = backend.value("cache", "");
    cfg.backend.strict = backend.value("strict", true);
    cfg.backend.predictions = backend.value("predictions", "");
    cfg.backend.temperature = backend.value("temperature", 0.0);
    cfg.backend.max_new_tokens = backend.value("max_new_tokens", 256);
    cfg.backend.max_retries = backend.value("max_retries", 3);
    cfg.backend.timeout_ms = backend.value("timeout_ms", 120000);
  }
  if (obj.contains("extraction")) {
    const nlohmann::json& extraction = obj["extraction"];
    cfg.extraction_profile = extraction.value("profile", "default");
    cfg.extraction = extraction_profile(cfg.extraction_profile);
    if (extraction.contains("cue_phrase"))
      cfg.extraction.cue_phrase = extraction["cue_phrase"].get<std::string>();
    if (extraction.contains("strip_quotes"))
      cfg.extraction.strip_quotes = extraction["strip_quotes"].get<bool>();
    if (extraction.contains("preamble_patterns"))
      cfg.extraction.preamble_patterns =
          extraction["preamble_patterns"].get<std::vector<std::string>>();
    if (extraction.contains("truncate_chars") && !extraction["truncate_chars"].is_null())
      cfg.extraction.truncate_chars = extraction["truncate_chars"].get<int>();
  }
  if (obj.contains("scoring")) {
    const nlohmann::json& scoring = obj["scoring"];
    cfg.scoring.rouge_mode = rouge_mode_from_string(scoring.value("rouge_mode", "f1"));
    cfg.scoring.reference_aggregation =
        ref_aggregation_from_string(scoring.value("reference_aggregation", "max"));
    cfg.scoring.stemming = scoring.value("stemming", false);
  }
  cfg.output_dir = obj.value("output_dir", cfg.output_dir);
  cfg.seed = obj.value("seed", cfg.seed);
  cfg.parallelism = obj.value("parallelism", cfg.parallelism);
  cfg.skip_failures = obj.value("skip_failures", cfg.skip_failures);
  cfg.setting = obj.value("setting", "");
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json obj = nlohmann::json::parse(detail::read_file(path), nullptr, false);
  if (obj.is_discarded() || !obj.is_object())
    throw ValidationError("config " + path.string() + " is not a JSON object");
  return run_config_from_json(obj);
}

// Value checks plus path resolution; check_paths=false skips the filesystem
// lookups (used when building configs programmatically before files exist).
inline void validate_run_config(const RunConfig& cfg, bool check_paths = true) {
  if (cfg.seed == 0) throw ValidationError("seed must be positive");
  if (cfg.parallelism < 1) throw ValidationError("parallelism must be >= 1");
  if (cfg.backend.temperature < 0.0) throw ValidationError("temperature must be >= 0");
  if (cfg.backend.max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");
  if (cfg.backend.max_retries < 0) throw ValidationError("max_retries must be >= 0");
  if (cfg.policy.mode == LengthMode::ratio && !(cfg.policy.ratio > 0.0 && cfg.policy.ratio <= 1.0))
    throw ValidationError("length ratio must be in (0, 1]");
  if (cfg.policy.mode == LengthMode::fixed && cfg.policy.fixed < 1)
    throw ValidationError("fixed length must be >= 1");
  if (cfg.extraction.truncate_chars && *cfg.extraction.truncate_chars < 1)
    throw ValidationError("truncate_chars must be >= 1");
  if (cfg.corpus.split != "train" && cfg.corpus.split != "valid" && cfg.corpus.split != "test")
    throw ValidationError("corpus split must be train, valid or test");
  if (cfg.backend.kind != "oracle" && cfg.backend.kind != "replay" && cfg.backend.kind != "http" &&
      cfg.backend.kind != "predictions")
    throw ValidationError("unknown backend kind '" + cfg.backend.kind +
                          "' (expected oracle, replay, http or predictions)");
  if (cfg.backend.kind == "http" && cfg.backend.endpoint.empty())
    throw ValidationError("http backend needs an endpoint URL");
  if (cfg.backend.kind == "replay" && cfg.backend.cache.empty())
    throw ValidationError("replay backend needs a cache path");
  if (cfg.backend.kind == "predictions" && cfg.backend.predictions.empty())
    throw ValidationError("predictions backend needs a predictions file");
  if (!cfg.tmpl.prefix_name.empty() && !builtin_prefixes().count(cfg.tmpl.prefix_name))
    throw ValidationError("unknown prefix name '" + cfg.tmpl.prefix_name +
                          "' (shipped: cot, tot)");

  if (!check_paths) return;
  if (cfg.corpus.path.empty()) throw ValidationError("no corpus path configured");
  if (!std::filesystem::exists(cfg.corpus.path))
    throw ValidationError("corpus file " + cfg.corpus.path + " does not exist");
  if (!cfg.tmpl.file.empty() && !std::filesystem::exists(cfg.tmpl.file))
    throw ValidationError("template file " + cfg.tmpl.file + " does not exist");
  if (cfg.backend.kind == "replay" && !std::filesystem::exists(cfg.backend.cache))
    throw ValidationError("replay cache " + cfg.backend.cache + " does not exist");
  if (cfg.backend.kind == "predictions" && !std::filesystem::exists(cfg.backend.predictions))
    throw ValidationError("predictions file " + cfg.backend.predictions + " does not exist");
}

// Digest of the canonical (key-sorted) config serialization; embedded in
// every artifact the pipeline writes.
inline std::string config_digest(const RunConfig& cfg) {
  return detail::sha256_hex(run_config_to_json(cfg).dump());
}

}  // namespace sceval
