#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sceval/detail/jsonl.hpp"
#include "sceval/error.hpp"

namespace sceval {

struct DecodingParams {
  std::string model_id = "default";
  double temperature = 0.0;  // >= 0; greedy by default
  int max_new_tokens = 256;  // >= 1
};

// One prompt and what came back. prompt is the exact dispatched string and
// raw_completion is stored unmodified; extracted is the post-processed text
// that gets scored. error is empty on success.
struct GenerationRecord {
  std::string example_id;
  std::string template_name;
  std::string prompt;
  std::string raw_completion;
  std::string extracted;
  std::string backend_id;
  long latency_ms = 0;
  std::string error;
};

inline nlohmann::json record_to_json(const GenerationRecord& rec) {
  nlohmann::json obj{{"id", rec.example_id},
                     {"template", rec.template_name},
                     {"prompt", rec.prompt},
                     {"raw_completion", rec.raw_completion},
                     {"extracted", rec.extracted},
                     {"backend", rec.backend_id},
                     {"latency_ms", rec.latency_ms}};
  if (!rec.error.empty()) obj["error"] = rec.error;
  return obj;
}

inline GenerationRecord record_from_json(const nlohmann::json& obj, const std::string& context) {
  if (!obj.contains("id") || !obj["id"].is_string())
    throw ValidationError(context + ": record is missing string field 'id'");
  GenerationRecord rec;
  rec.example_id = obj["id"].get<std::string>();
  rec.template_name = obj.value("template", "");
  rec.prompt = obj.value("prompt", "");
  rec.raw_completion = obj.value("raw_completion", "");
  rec.extracted = obj.value("extracted", "");
  rec.backend_id = obj.value("backend", "");
  rec.latency_ms = obj.value("latency_ms", 0L);
  rec.error = obj.value("error", "");
  return rec;
}

inline std::vector<GenerationRecord> load_records(const std::filesystem::path& path) {
  std::vector<GenerationRecord> records;
  detail::for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& obj) {
    records.push_back(record_from_json(obj, detail::jsonl_context(path, lineno)));
  });
  return records;
}

}  // namespace sceval
