#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sceval/analysis.hpp"
#include "sceval/backend.hpp"
#include "sceval/config.hpp"
#include "sceval/corpus.hpp"
#include "sceval/error.hpp"
#include "sceval/metrics.hpp"
#include "sceval/templating.hpp"

namespace sceval {

struct ResolvedRun {
  RunConfig config;
  std::string digest;
  Corpus corpus;
  InstructionTemplate tmpl;
  ReportLabel label;
  bool needs_length = false;
};

inline std::string prompting_label(const TemplateConfig& tmpl) {
  if (!tmpl.prefix_name.empty()) return tmpl.prefix_name;
  if (!tmpl.prefix.empty()) return "custom";
  return "-";
}

// Validates the config, loads the corpus and resolves the template. Length
// templates require a length policy other than 'none'.
inline ResolvedRun resolve_run(const RunConfig& cfg) {
  validate_run_config(cfg);
  ResolvedRun run;
  run.config = cfg;
  run.digest = config_digest(cfg);

  std::string prefix = cfg.tmpl.prefix;
  if (prefix.empty() && !cfg.tmpl.prefix_name.empty())
    prefix = builtin_prefixes().at(cfg.tmpl.prefix_name);
  run.tmpl = cfg.tmpl.file.empty() ? builtin_template(cfg.tmpl.name, prefix)
                                   : template_from_file(cfg.tmpl.file, prefix);
  run.needs_length = uses_length_placeholders(run.tmpl);
  if (run.needs_length && cfg.policy.mode == LengthMode::none)
    throw ValidationError("template '" + run.tmpl.name +
                          "' uses length placeholders but the length policy is 'none'");

  run.corpus = load_corpus(cfg.corpus.path, cfg.corpus.format, cfg.corpus.name, cfg.corpus.split,
                           cfg.corpus.origin);
  run.label.dataset = run.corpus.name;
  run.label.setting = cfg.setting.empty() ? cfg.backend.kind : cfg.setting;
  run.label.instruction = run.tmpl.name;
  run.label.prompting = prompting_label(cfg.tmpl);
  return run;
}

namespace detail {

inline std::filesystem::path ensure_output_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace detail

struct TransformResult {
  std::filesystem::path prompts_path;
  std::size_t count = 0;
};

// Writes {id, prompt, refs, length_spec, template, config_digest} per example;
// no backend contact. An empty corpus yields an empty file and a warning.
inline TransformResult cmd_transform(const RunConfig& cfg) {
  ResolvedRun run = resolve_run(cfg);
  std::filesystem::path dir = detail::ensure_output_dir(cfg);
  std::filesystem::path path = dir / "prompts.jsonl";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (const CompressionExample& ex : run.corpus.examples) {
    std::optional<LengthSpec> spec;
    if (run.needs_length) spec = compute_length_spec(ex, cfg.policy);
    nlohmann::json line{{"id", ex.id},
                        {"template", run.tmpl.name},
                        {"prompt", render(run.tmpl, ex, spec)},
                        {"refs", ex.gold_references},
                        {"config_digest", run.digest}};
    line["length_spec"] = spec ? nlohmann::json{{"src_len", spec->src_len},
                                                {"keep", spec->keep},
                                                {"del", spec->del}}
                               : nlohmann::json(nullptr);
    out << line.dump() << "\n";
  }
  if (run.corpus.examples.empty())
    std::cerr << "warning: corpus '" << run.corpus.name << "' is empty; wrote empty "
              << path.string() << "\n";
  return {path, run.corpus.examples.size()};
}

struct BackendHandle {
  std::shared_ptr<ReplayCache> cache;
  std::unique_ptr<Backend> backend;
  HttpBackend* http = nullptr;  // non-owning; retry statistics
};

inline BackendHandle make_backend(const RunConfig& cfg, const Corpus& corpus) {
  BackendHandle handle;
  if (!cfg.backend.cache.empty())
    handle.cache = std::make_shared<ReplayCache>(cfg.backend.cache,
                                                 /*must_exist=*/cfg.backend.kind == "replay");
  std::unique_ptr<Backend> inner;
  if (cfg.backend.kind == "oracle") {
    inner = std::make_unique<OracleBackend>(corpus);
  } else if (cfg.backend.kind == "predictions") {
    inner = std::make_unique<PredictionsBackend>(cfg.backend.predictions);
  } else if (cfg.backend.kind == "http") {
    HttpBackendConfig http_cfg;
    http_cfg.endpoint = cfg.backend.endpoint;
    http_cfg.api_key_env = cfg.backend.api_key_env;
    http_cfg.max_retries = cfg.backend.max_retries;
    http_cfg.timeout_ms = cfg.backend.timeout_ms;
    auto http = std::make_unique<HttpBackend>(http_cfg);
    handle.http = http.get();
    inner = std::move(http);
  } else if (cfg.backend.kind == "replay") {
    handle.backend = std::make_unique<ReplayBackend>(handle.cache, cfg.backend.strict);
    return handle;
  } else {
    throw ValidationError("unknown backend kind '" + cfg.backend.kind + "'");
  }
  handle.backend = handle.cache
                       ? std::make_unique<CachingBackend>(std::move(inner), handle.cache)
                       : std::move(inner);
  return handle;
}

struct RunResult {
  std::filesystem::path records_path;
  std::size_t count = 0;
  std::size_t failed = 0;
  long retries = 0;
};

// transform + dispatch. Records are persisted incrementally in corpus order;
// live responses land in the replay cache, so an interrupted run resumes by
// replaying it. Any failed example raises BackendError unless skip_failures.
inline RunResult cmd_run(const RunConfig& cfg) {
  ResolvedRun run = resolve_run(cfg);
  BackendHandle handle = make_backend(cfg, run.corpus);
  std::filesystem::path dir = detail::ensure_output_dir(cfg);
  std::filesystem::path path = dir / "records.jsonl";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());

  DecodingParams params{cfg.backend.model_id, cfg.backend.temperature,
                        cfg.backend.max_new_tokens};
  BatchOptions options;
  options.parallelism = cfg.parallelism;
  options.skip_failures = cfg.skip_failures;
  options.on_record = [&](const GenerationRecord& rec) {
    nlohmann::json obj = record_to_json(rec);
    obj["config_digest"] = run.digest;
    out << obj.dump() << "\n";
    out.flush();
  };
  BatchResult batch =
      run_batch(run.corpus, run.tmpl, cfg.policy, params, *handle.backend, cfg.extraction, options);
  out.close();

  RunResult result{path, batch.records.size(), batch.failures.size(),
                   handle.http ? handle.http->retry_count() : 0};
  if (result.retries > 0)
    std::cerr << "info: " << result.retries << " transient failures were retried\n";
  if (!batch.failures.empty()) {
    std::string msg = std::to_string(batch.failures.size()) + " of " +
                      std::to_string(batch.records.size()) + " examples failed; first: " +
                      batch.failures.front().example_id + ": " + batch.failures.front().message;
    if (!cfg.skip_failures) throw BackendError(msg);
    std::cerr << "warning: " << msg << " (skip_failures set; continuing)\n";
  }
  return result;
}

struct ScoreResult {
  std::filesystem::path json_path;
  std::filesystem::path csv_path;
  MetricReport report;
};

// Re-extracts each record from its raw completion under the configured
// extraction profile, checks the records cover the corpus, scores, and writes
// scores.json / scores.csv.
inline ScoreResult cmd_score(const RunConfig& cfg,
                             std::optional<std::filesystem::path> records_path = std::nullopt) {
  ResolvedRun run = resolve_run(cfg);
  std::filesystem::path path =
      records_path.value_or(std::filesystem::path(cfg.output_dir) / "records.jsonl");
  if (!std::filesystem::exists(path))
    throw ValidationError("records file " + path.string() + " does not exist");
  std::vector<GenerationRecord> records = load_records(path);
  for (GenerationRecord& rec : records) rec.extracted = extract(rec.raw_completion, cfg.extraction);

  std::set<std::string> record_ids;
  for (const GenerationRecord& rec : records) record_ids.insert(rec.example_id);
  std::vector<std::string> missing;
  for (const CompressionExample& ex : run.corpus.examples)
    if (!record_ids.count(ex.id)) missing.push_back(ex.id);
  if (!missing.empty()) {
    std::string msg = "records do not cover corpus '" + run.corpus.name + "': missing " +
                      std::to_string(missing.size()) + " example(s), first '" + missing.front() +
                      "'";
    throw ScoringError(msg);
  }

  MetricReport report = score_run(records, run.corpus, cfg.scoring);
  report.label = run.label;
  report.config_digest = run.digest;
  report.config_echo = run_config_to_json(cfg);

  std::filesystem::path dir = detail::ensure_output_dir(cfg);
  ScoreResult result{dir / "scores.json", dir / "scores.csv", std::move(report)};
  detail::write_file(result.json_path, report_to_json(result.report).dump(2) + "\n");
  detail::write_file(result.csv_path, report_to_csv(result.report));
  return result;
}

inline MetricReport load_report(const std::filesystem::path& path) {
  nlohmann::json obj = nlohmann::json::parse(detail::read_file(path), nullptr, false);
  if (obj.is_discarded() || !obj.is_object())
    throw ValidationError("report " + path.string() + " is not a JSON object");
  return report_from_json(obj);
}

struct AnalyzeRequest {
  RunConfig base;  // corpus + output_dir + seed
  std::vector<std::filesystem::path> report_paths;
  std::string baseline_row;  // row key; required for significance
  int permutations = 10000;
  std::vector<std::string> metrics = {"rouge1", "rouge2", "rougeL", "kept_f1", "delta_cr"};
};

struct AnalyzeResult {
  std::filesystem::path report_md;
  std::filesystem::path report_csv;
  std::filesystem::path report_json;
  std::filesystem::path buckets_csv;
  std::optional<std::filesystem::path> significance_json;
  std::vector<SignificanceResult> significance;
};

// Buckets every report, runs paired randomization tests against the baseline
// row when two or more reports are given, and writes the table documents.
inline AnalyzeResult cmd_analyze(const AnalyzeRequest& request) {
  if (request.report_paths.empty())
    throw ValidationError("analyze needs at least one report path");
  validate_run_config(request.base);
  Corpus corpus = load_corpus(request.base.corpus.path, request.base.corpus.format,
                              request.base.corpus.name, request.base.corpus.split,
                              request.base.corpus.origin);

  std::vector<MetricReport> reports;
  reports.reserve(request.report_paths.size());
  for (const std::filesystem::path& path : request.report_paths)
    reports.push_back(load_report(path));

  for (const MetricReport& report : reports) {
    if (report.per_example.size() != corpus.examples.size())
      throw ValidationError("report '" + report.label.row_key() + "' has " +
                            std::to_string(report.per_example.size()) + " rows but corpus '" +
                            corpus.name + "' has " + std::to_string(corpus.examples.size()));
    if (report.options.rouge_mode != reports[0].options.rouge_mode)
      throw ValidationError("reports mix rouge modes; analyze them separately");
  }

  std::filesystem::path dir(request.base.output_dir);
  std::filesystem::create_directories(dir);

  std::vector<NamedBucketTable> tables;
  for (const MetricReport& report : reports) {
    tables.push_back({report.label.row_key(), report.config_digest,
                      bucket_report(report, corpus, BucketSpec::gold_cr_default())});
    tables.push_back({report.label.row_key(), report.config_digest,
                      bucket_report(report, corpus, BucketSpec::gold_word_count_default())});
  }

  AnalyzeResult result;
  result.buckets_csv = dir / "buckets.csv";
  detail::write_file(result.buckets_csv, buckets_to_csv(tables));

  if (reports.size() >= 2) {
    if (request.baseline_row.empty())
      throw ValidationError("two or more reports: name the baseline row with --baseline");
    const MetricReport* baseline = nullptr;
    for (const MetricReport& report : reports)
      if (report.label.row_key() == request.baseline_row) {
        baseline = &report;
        break;
      }
    if (!baseline)
      throw ValidationError("baseline row '" + request.baseline_row +
                            "' does not match any report");

    std::vector<std::string> id_order;
    id_order.reserve(corpus.examples.size());
    for (const CompressionExample& ex : corpus.examples) id_order.push_back(ex.id);

    for (const MetricReport& report : reports) {
      if (&report == baseline) continue;
      for (const std::string& metric : request.metrics) {
        std::vector<double> a = detail::metric_values(report, id_order, metric);
        std::vector<double> b = detail::metric_values(*baseline, id_order, metric);
        SignificanceResult sig =
            paired_randomization_test(a, b, request.permutations, request.base.seed);
        sig.metric = metric;
        sig.system_a = report.label.row_key();
        sig.system_b = baseline->label.row_key();
        sig.abs_values = metric == "delta_cr";
        sig.digest_a = report.config_digest;
        sig.digest_b = baseline->config_digest;
        result.significance.push_back(std::move(sig));
      }
    }
    nlohmann::json sig_doc = nlohmann::json::array();
    for (const SignificanceResult& s : result.significance)
      sig_doc.push_back(significance_to_json(s));
    result.significance_json = dir / "significance.json";
    detail::write_file(*result.significance_json, sig_doc.dump(2) + "\n");
  }

  result.report_md = dir / "report.md";
  result.report_csv = dir / "report.csv";
  result.report_json = dir / "report.json";
  detail::write_file(result.report_md,
                     emit_tables(reports, result.significance, TableFormat::markdown));
  detail::write_file(result.report_csv, emit_tables(reports, result.significance, TableFormat::csv));
  detail::write_file(result.report_json,
                     emit_tables(reports, result.significance, TableFormat::json));
  return result;
}

struct ReportRequest {
  std::vector<std::filesystem::path> report_paths;
  std::optional<std::filesystem::path> significance_path;
  std::optional<std::filesystem::path> bs_merge_path;  // JSON object {row_key: value}
  TableFormat format = TableFormat::markdown;
  std::optional<std::filesystem::path> out_path;
};

// Formatting only: renders the comparison table from existing artifacts.
inline std::string cmd_report(const ReportRequest& request) {
  if (request.report_paths.empty()) throw ValidationError("report needs at least one report path");
  std::vector<MetricReport> reports;
  for (const std::filesystem::path& path : request.report_paths)
    reports.push_back(load_report(path));

  std::vector<SignificanceResult> significance;
  if (request.significance_path) {
    nlohmann::json arr =
        nlohmann::json::parse(detail::read_file(*request.significance_path), nullptr, false);
    if (arr.is_discarded() || !arr.is_array())
      throw ValidationError("significance file " + request.significance_path->string() +
                            " is not a JSON array");
    for (const nlohmann::json& obj : arr) significance.push_back(significance_from_json(obj));
  }

  std::optional<std::map<std::string, double>> bs_merge;
  if (request.bs_merge_path) {
    nlohmann::json obj =
        nlohmann::json::parse(detail::read_file(*request.bs_merge_path), nullptr, false);
    if (obj.is_discarded() || !obj.is_object())
      throw ValidationError("BS merge file " + request.bs_merge_path->string() +
                            " is not a JSON object");
    bs_merge.emplace();
    for (const auto& [key, value] : obj.items()) (*bs_merge)[key] = value.get<double>();
  }

  std::string doc = emit_tables(reports, significance, request.format, bs_merge);
  if (request.out_path) detail::write_file(*request.out_path, doc);
  return doc;
}

}  // namespace sceval
