// sceval: transform sentence-compression corpora into length-primed
// instruction prompts, run them against a completion backend, score the
// outputs, and analyze the results.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sceval/pipeline.hpp"

namespace {

using sceval::RunConfig;

struct CommonFlags {
  std::string config_path;
  std::string corpus, format, corpus_name, split, origin;
  std::string template_name, template_file, prefix, prefix_name;
  std::string policy;
  double ratio = 0.75;
  int fixed = 11;
  std::string output_dir;
  std::uint64_t seed = 0;
  int parallelism = 0;
  std::string setting;
  std::string extraction_profile, cue;
  int truncate = 0;
  std::string rouge_mode, ref_agg;
  bool stemming = false;

  CLI::Option *o_corpus = nullptr, *o_format = nullptr, *o_corpus_name = nullptr,
              *o_split = nullptr, *o_origin = nullptr, *o_template = nullptr,
              *o_template_file = nullptr, *o_prefix = nullptr, *o_prefix_name = nullptr,
              *o_policy = nullptr, *o_ratio = nullptr, *o_fixed = nullptr, *o_output = nullptr,
              *o_seed = nullptr, *o_parallelism = nullptr, *o_setting = nullptr,
              *o_profile = nullptr, *o_cue = nullptr, *o_truncate = nullptr,
              *o_rouge_mode = nullptr, *o_ref_agg = nullptr, *o_stemming = nullptr;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config_path, "run configuration JSON file");
  f.o_corpus = cmd->add_option("--corpus", f.corpus, "corpus file path");
  f.o_format = cmd->add_option("--format", f.format, "labeled-tsv | pair-jsonl | multiref-jsonl");
  f.o_corpus_name = cmd->add_option("--corpus-name", f.corpus_name, "dataset label");
  f.o_split = cmd->add_option("--split", f.split, "train | valid | test");
  f.o_origin = cmd->add_option("--origin", f.origin, "origin tag for loaded examples");
  f.o_template = cmd->add_option("--template", f.template_name, "built-in template name");
  f.o_template_file = cmd->add_option("--template-file", f.template_file, "custom template body file");
  f.o_prefix = cmd->add_option("--prefix", f.prefix, "verbatim prompt prefix");
  f.o_prefix_name = cmd->add_option("--prefix-name", f.prefix_name, "shipped prefix: cot | tot");
  f.o_policy = cmd->add_option("--policy", f.policy, "length policy: gold | ratio | fixed | none");
  f.o_ratio = cmd->add_option("--ratio", f.ratio, "keep ratio for --policy ratio");
  f.o_fixed = cmd->add_option("--fixed", f.fixed, "keep count for --policy fixed");
  f.o_output = cmd->add_option("-o,--output-dir", f.output_dir, "artifact directory");
  f.o_seed = cmd->add_option("--seed", f.seed, "random seed (positive)");
  f.o_parallelism = cmd->add_option("--parallelism", f.parallelism, "max in-flight requests");
  f.o_setting = cmd->add_option("--setting", f.setting, "row label, e.g. zero-shot");
  f.o_profile = cmd->add_option("--extraction-profile", f.extraction_profile, "default | duc");
  f.o_cue = cmd->add_option("--cue", f.cue, "extraction cue phrase");
  f.o_truncate = cmd->add_option("--truncate", f.truncate, "truncate outputs to N characters");
  f.o_rouge_mode = cmd->add_option("--rouge-mode", f.rouge_mode, "f1 | recall");
  f.o_ref_agg = cmd->add_option("--ref-agg", f.ref_agg, "reference aggregation: first | max");
  f.o_stemming = cmd->add_flag("--stemming", f.stemming, "apply Porter stemming in ROUGE");
}

RunConfig build_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config_path.empty()) cfg = sceval::load_run_config(f.config_path);
  if (f.o_corpus->count()) cfg.corpus.path = f.corpus;
  if (f.o_format->count()) cfg.corpus.format = sceval::corpus_format_from_string(f.format);
  if (f.o_corpus_name->count()) cfg.corpus.name = f.corpus_name;
  if (f.o_split->count()) cfg.corpus.split = f.split;
  if (f.o_origin->count()) cfg.corpus.origin = f.origin;
  if (f.o_template->count()) {
    cfg.tmpl.name = f.template_name;
    cfg.tmpl.file.clear();
  }
  if (f.o_template_file->count()) cfg.tmpl.file = f.template_file;
  if (f.o_prefix->count()) cfg.tmpl.prefix = f.prefix;
  if (f.o_prefix_name->count()) cfg.tmpl.prefix_name = f.prefix_name;
  if (f.o_policy->count()) cfg.policy.mode = sceval::length_mode_from_string(f.policy);
  if (f.o_ratio->count()) cfg.policy.ratio = f.ratio;
  if (f.o_fixed->count()) cfg.policy.fixed = f.fixed;
  if (f.o_output->count()) cfg.output_dir = f.output_dir;
  if (f.o_seed->count()) cfg.seed = f.seed;
  if (f.o_parallelism->count()) cfg.parallelism = f.parallelism;
  if (f.o_setting->count()) cfg.setting = f.setting;
  if (f.o_profile->count()) {
    cfg.extraction_profile = f.extraction_profile;
    cfg.extraction = sceval::extraction_profile(f.extraction_profile);
  }
  if (f.o_cue->count()) cfg.extraction.cue_phrase = f.cue;
  if (f.o_truncate->count()) cfg.extraction.truncate_chars = f.truncate;
  if (f.o_rouge_mode->count()) cfg.scoring.rouge_mode = sceval::rouge_mode_from_string(f.rouge_mode);
  if (f.o_ref_agg->count())
    cfg.scoring.reference_aggregation = sceval::ref_aggregation_from_string(f.ref_agg);
  if (f.o_stemming->count()) cfg.scoring.stemming = f.stemming;
  return cfg;
}

struct BackendFlags {
  std::string kind, endpoint, model, api_key_env, cache, predictions;
  double temperature = 0.0;
  int max_new_tokens = 0, max_retries = -1, timeout_ms = 0;
  bool no_strict = false, skip_failures = false;

  CLI::Option *o_kind = nullptr, *o_endpoint = nullptr, *o_model = nullptr, *o_env = nullptr,
              *o_cache = nullptr, *o_predictions = nullptr, *o_temperature = nullptr,
              *o_max_new = nullptr, *o_retries = nullptr, *o_timeout = nullptr,
              *o_no_strict = nullptr, *o_skip = nullptr;
};

void add_backend_flags(CLI::App* cmd, BackendFlags& f) {
  f.o_kind = cmd->add_option("--backend", f.kind, "oracle | replay | http | predictions");
  f.o_endpoint = cmd->add_option("--endpoint", f.endpoint, "OpenAI-compatible base URL");
  f.o_model = cmd->add_option("--model", f.model, "model id sent to the provider");
  f.o_env = cmd->add_option("--api-key-env", f.api_key_env, "env var holding the bearer token");
  f.o_cache = cmd->add_option("--cache", f.cache, "replay cache JSONL path");
  f.o_predictions = cmd->add_option("--predictions", f.predictions, "predictions JSONL path");
  f.o_temperature = cmd->add_option("--temperature", f.temperature, "sampling temperature");
  f.o_max_new = cmd->add_option("--max-new-tokens", f.max_new_tokens, "completion token budget");
  f.o_retries = cmd->add_option("--max-retries", f.max_retries, "transient-failure retries");
  f.o_timeout = cmd->add_option("--timeout-ms", f.timeout_ms, "request timeout");
  f.o_no_strict = cmd->add_flag("--no-strict", f.no_strict, "replay: empty output on cache miss");
  f.o_skip = cmd->add_flag("--skip-failures", f.skip_failures, "exit 0 even when examples fail");
}

void apply_backend_flags(RunConfig& cfg, const BackendFlags& f) {
  if (f.o_kind->count()) cfg.backend.kind = f.kind;
  if (f.o_endpoint->count()) cfg.backend.endpoint = f.endpoint;
  if (f.o_model->count()) cfg.backend.model_id = f.model;
  if (f.o_env->count()) cfg.backend.api_key_env = f.api_key_env;
  if (f.o_cache->count()) cfg.backend.cache = f.cache;
  if (f.o_predictions->count()) cfg.backend.predictions = f.predictions;
  if (f.o_temperature->count()) cfg.backend.temperature = f.temperature;
  if (f.o_max_new->count()) cfg.backend.max_new_tokens = f.max_new_tokens;
  if (f.o_retries->count()) cfg.backend.max_retries = f.max_retries;
  if (f.o_timeout->count()) cfg.backend.timeout_ms = f.timeout_ms;
  if (f.o_no_strict->count()) cfg.backend.strict = false;
  if (f.o_skip->count()) cfg.skip_failures = true;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const sceval::BackendError*>(&e)) return static_cast<int>(sceval::ExitCode::backend);
  if (dynamic_cast<const sceval::ScoringError*>(&e)) return static_cast<int>(sceval::ExitCode::scoring);
  return static_cast<int>(sceval::ExitCode::validation);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"length-controlled sentence compression evaluation harness"};
  app.require_subcommand(1);

  CommonFlags transform_flags, run_flags, score_flags, analyze_flags;
  BackendFlags run_backend;
  std::string score_records;
  std::vector<std::string> analyze_reports;
  std::string analyze_baseline;
  int analyze_permutations = 10000;

  std::vector<std::string> report_reports;
  std::string report_significance, report_bs, report_format = "markdown", report_out;

  CLI::App* transform = app.add_subcommand("transform", "render instruction prompts to JSONL");
  add_common_flags(transform, transform_flags);

  CLI::App* run = app.add_subcommand("run", "dispatch prompts to a backend and record completions");
  add_common_flags(run, run_flags);
  add_backend_flags(run, run_backend);

  CLI::App* score = app.add_subcommand("score", "score a records file against the corpus");
  add_common_flags(score, score_flags);
  CLI::Option* o_records = score->add_option("--records", score_records, "records JSONL path");

  CLI::App* analyze = app.add_subcommand("analyze", "buckets, significance and report tables");
  add_common_flags(analyze, analyze_flags);
  analyze->add_option("--report", analyze_reports, "scores.json paths (repeatable)")->required();
  analyze->add_option("--baseline", analyze_baseline, "baseline row key for significance");
  analyze->add_option("--permutations", analyze_permutations, "randomization test permutations");

  CLI::App* report = app.add_subcommand("report", "format existing reports as a table document");
  report->add_option("--report", report_reports, "scores.json paths (repeatable)")->required();
  report->add_option("--significance", report_significance, "significance.json path");
  report->add_option("--bs-merge", report_bs, "external BS merge file {row_key: value}");
  report->add_option("--format", report_format, "markdown | csv | json");
  CLI::Option* o_report_out = report->add_option("-o,--out", report_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(sceval::ExitCode::validation);
  }

  try {
    if (transform->parsed()) {
      RunConfig cfg = build_config(transform_flags);
      sceval::TransformResult result = sceval::cmd_transform(cfg);
      std::cout << "wrote " << result.count << " prompts to " << result.prompts_path.string()
                << "\n";
    } else if (run->parsed()) {
      RunConfig cfg = build_config(run_flags);
      apply_backend_flags(cfg, run_backend);
      sceval::RunResult result = sceval::cmd_run(cfg);
      std::cout << "wrote " << result.count << " records to " << result.records_path.string()
                << "\n";
    } else if (score->parsed()) {
      RunConfig cfg = build_config(score_flags);
      std::optional<std::filesystem::path> records;
      if (o_records->count()) records = score_records;
      sceval::ScoreResult result = sceval::cmd_score(cfg, records);
      const sceval::ExampleScores& a = result.report.aggregates;
      std::cout << "scored " << result.report.per_example.size() << " examples -> "
                << result.json_path.string() << "\n";
      std::printf("R-1 %.2f  R-2 %.2f  R-L %.2f  F1 %.2f  dCR %+.2f  novel %.2f\n",
                  result.report.options.rouge_mode == sceval::RougeMode::recall ? a.rouge1_r
                                                                                : a.rouge1_f,
                  result.report.options.rouge_mode == sceval::RougeMode::recall ? a.rouge2_r
                                                                                : a.rouge2_f,
                  result.report.options.rouge_mode == sceval::RougeMode::recall ? a.rougeL_r
                                                                                : a.rougeL_f,
                  a.kept_f1, a.delta_cr_pts, a.novel_pct);
    } else if (analyze->parsed()) {
      sceval::AnalyzeRequest request;
      request.base = build_config(analyze_flags);
      for (const std::string& path : analyze_reports) request.report_paths.emplace_back(path);
      request.baseline_row = analyze_baseline;
      request.permutations = analyze_permutations;
      sceval::AnalyzeResult result = sceval::cmd_analyze(request);
      std::cout << "wrote " << result.report_md.string() << ", " << result.report_csv.string()
                << ", " << result.report_json.string() << ", " << result.buckets_csv.string();
      if (result.significance_json) std::cout << ", " << result.significance_json->string();
      std::cout << "\n";
    } else if (report->parsed()) {
      sceval::ReportRequest request;
      for (const std::string& path : report_reports) request.report_paths.emplace_back(path);
      if (!report_significance.empty()) request.significance_path = report_significance;
      if (!report_bs.empty()) request.bs_merge_path = report_bs;
      request.format = sceval::table_format_from_string(report_format);
      if (o_report_out->count()) request.out_path = report_out;
      std::string doc = sceval::cmd_report(request);
      if (!o_report_out->count()) std::cout << doc;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return static_cast<int>(sceval::ExitCode::ok);
}
