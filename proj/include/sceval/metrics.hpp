#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sceval/corpus.hpp"
#include "sceval/detail/porter.hpp"
#include "sceval/detail/text.hpp"
#include "sceval/error.hpp"
#include "sceval/generation.hpp"
#include "sceval/postprocess.hpp"

namespace sceval {

// ROUGE components as percentages in [0, 100].
struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

// Scorer normalization: ASCII lowercase, strip non-alphanumeric characters
// from each token, drop tokens that end up empty. Stemming (off by default)
// applies the Porter algorithm to tokens longer than three characters.
inline std::vector<std::string> rouge_normalize(const std::vector<std::string>& tokens,
                                                bool stemming) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const std::string& token : tokens) {
    std::string norm;
    norm.reserve(token.size());
    for (char raw : token) {
      unsigned char c = static_cast<unsigned char>(raw);
      if (c >= 'A' && c <= 'Z') norm.push_back(static_cast<char>(c - 'A' + 'a'));
      else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) norm.push_back(static_cast<char>(c));
    }
    if (norm.empty()) continue;
    if (stemming && norm.size() > 3) norm = porter_stem(std::move(norm));
    out.push_back(std::move(norm));
  }
  return out;
}

inline std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens,
                                                         int n) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key.push_back('\x1f');
      key += tokens[i + static_cast<std::size_t>(k)];
    }
    ++counts[key];
  }
  return counts;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1]) curr[j] = prev[j - 1] + 1;
      else curr[j] = std::max(prev[j], curr[j - 1]);
    }
    std::swap(prev, curr);
  }
  return prev[b.size()];
}

inline RougeScore make_rouge(std::size_t overlap, std::size_t n_system, std::size_t n_reference) {
  RougeScore s;
  if (n_system > 0) s.precision = 100.0 * static_cast<double>(overlap) / static_cast<double>(n_system);
  if (n_reference > 0) s.recall = 100.0 * static_cast<double>(overlap) / static_cast<double>(n_reference);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace detail

// N-gram multiset overlap between the normalized token sequences. Zero
// denominators yield 0 for that component.
inline RougeScore rouge_n(const std::vector<std::string>& system,
                          const std::vector<std::string>& reference, int n,
                          bool stemming = false) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  const auto sys = detail::rouge_normalize(system, stemming);
  const auto ref = detail::rouge_normalize(reference, stemming);
  const auto sys_grams = detail::ngram_counts(sys, n);
  const auto ref_grams = detail::ngram_counts(ref, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : sys_grams) {
    auto it = ref_grams.find(gram);
    if (it != ref_grams.end()) overlap += static_cast<std::size_t>(std::min(count, it->second));
  }
  const std::size_t n_sys = sys.size() >= static_cast<std::size_t>(n) ? sys.size() - n + 1 : 0;
  const std::size_t n_ref = ref.size() >= static_cast<std::size_t>(n) ? ref.size() - n + 1 : 0;
  return detail::make_rouge(overlap, n_sys, n_ref);
}

// Longest-common-subsequence overlap between the normalized token sequences.
inline RougeScore rouge_l(const std::vector<std::string>& system,
                          const std::vector<std::string>& reference, bool stemming = false) {
  const auto sys = detail::rouge_normalize(system, stemming);
  const auto ref = detail::rouge_normalize(reference, stemming);
  return detail::make_rouge(detail::lcs_length(sys, ref), sys.size(), ref.size());
}

// Multiset precision/recall between lowercased system and gold tokens, in [0, 1].
inline double kept_token_f1(const std::vector<std::string>& system,
                            const std::vector<std::string>& gold) {
  if (system.empty() || gold.empty()) return 0.0;
  std::unordered_map<std::string, int> gold_counts;
  for (const std::string& token : gold) ++gold_counts[detail::ascii_lower(token)];
  std::size_t matched = 0;
  for (const std::string& token : system) {
    auto it = gold_counts.find(detail::ascii_lower(token));
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++matched;
    }
  }
  const double p = static_cast<double>(matched) / static_cast<double>(system.size());
  const double r = static_cast<double>(matched) / static_cast<double>(gold.size());
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

// Percentage of system tokens missing from the source vocabulary (lowercased).
inline double novel_pct(const std::vector<std::string>& system,
                        const std::vector<std::string>& source) {
  if (system.empty()) return 0.0;
  std::unordered_set<std::string> vocab;
  for (const std::string& token : source) vocab.insert(detail::ascii_lower(token));
  std::size_t novel = 0;
  for (const std::string& token : system)
    if (!vocab.count(detail::ascii_lower(token))) ++novel;
  return 100.0 * static_cast<double>(novel) / static_cast<double>(system.size());
}

// Compression-ratio gap in percentage points: 100 * (|sys|/|src| - |gold|/|src|).
inline double delta_cr(const std::vector<std::string>& system,
                       const std::vector<std::string>& source,
                       const std::vector<std::string>& gold) {
  if (source.empty()) throw ScoringError("delta_cr: empty source");
  const double n_src = static_cast<double>(source.size());
  const double system_cr = static_cast<double>(system.size()) / n_src;
  const double gold_cr = static_cast<double>(gold.size()) / n_src;
  return 100.0 * (system_cr - gold_cr);
}

enum class RougeMode { f1, recall };
enum class RefAggregation { first, max };

inline RougeMode rouge_mode_from_string(const std::string& s) {
  if (s == "f1") return RougeMode::f1;
  if (s == "recall") return RougeMode::recall;
  throw ValidationError("unknown rouge mode '" + s + "' (expected f1 or recall)");
}

inline RefAggregation ref_aggregation_from_string(const std::string& s) {
  if (s == "first") return RefAggregation::first;
  if (s == "max") return RefAggregation::max;
  throw ValidationError("unknown reference aggregation '" + s + "' (expected first or max)");
}

inline const char* to_string(RougeMode m) { return m == RougeMode::f1 ? "f1" : "recall"; }
inline const char* to_string(RefAggregation a) {
  return a == RefAggregation::first ? "first" : "max";
}

struct ScoreOptions {
  RougeMode rouge_mode = RougeMode::f1;
  RefAggregation reference_aggregation = RefAggregation::max;
  bool stemming = false;
};

struct ExampleScores {
  std::string id;
  double rouge1_f = 0, rouge2_f = 0, rougeL_f = 0;
  double rouge1_r = 0, rouge2_r = 0, rougeL_r = 0;
  double kept_f1 = 0;        // in [0, 1]
  double cr = 0;             // system words / source words
  double delta_cr_pts = 0;   // 100 * (cr - gold cr), signed
  double novel_pct = 0;      // in [0, 100]
  double gen_len = 0, src_len = 0, tgt_len = 0;
};

struct ReportLabel {
  std::string dataset;
  std::string setting;
  std::string instruction;
  std::string prompting = "-";

  std::string row_key() const { return dataset + "/" + setting + "/" + instruction + "/" + prompting; }
};

struct MetricReport {
  ReportLabel label;
  ScoreOptions options;
  std::string config_digest;
  nlohmann::json config_echo = nlohmann::json::object();
  std::vector<ExampleScores> per_example;
  ExampleScores aggregates;  // arithmetic means; id == "aggregate"
};

namespace detail {

inline ExampleScores score_example(const GenerationRecord& rec, const CompressionExample& ex,
                                   const ScoreOptions& options) {
  ExampleScores s;
  s.id = ex.id;
  const std::vector<std::string> sys = tokenize_words(rec.extracted);
  std::vector<std::vector<std::string>> refs;
  refs.reserve(ex.gold_references.size());
  for (const std::string& ref : ex.gold_references) refs.push_back(tokenize_words(ref));

  const std::size_t n_refs =
      options.reference_aggregation == RefAggregation::first ? 1 : refs.size();
  for (std::size_t k = 0; k < n_refs; ++k) {
    const RougeScore r1 = rouge_n(sys, refs[k], 1, options.stemming);
    const RougeScore r2 = rouge_n(sys, refs[k], 2, options.stemming);
    const RougeScore rl = rouge_l(sys, refs[k], options.stemming);
    const double kept = kept_token_f1(sys, refs[k]);
    if (k == 0) {
      s.rouge1_f = r1.f1; s.rouge2_f = r2.f1; s.rougeL_f = rl.f1;
      s.rouge1_r = r1.recall; s.rouge2_r = r2.recall; s.rougeL_r = rl.recall;
      s.kept_f1 = kept;
    } else {
      s.rouge1_f = std::max(s.rouge1_f, r1.f1);
      s.rouge2_f = std::max(s.rouge2_f, r2.f1);
      s.rougeL_f = std::max(s.rougeL_f, rl.f1);
      s.rouge1_r = std::max(s.rouge1_r, r1.recall);
      s.rouge2_r = std::max(s.rouge2_r, r2.recall);
      s.rougeL_r = std::max(s.rougeL_r, rl.recall);
      s.kept_f1 = std::max(s.kept_f1, kept);
    }
  }

  s.novel_pct = novel_pct(sys, ex.source_tokens);
  s.gen_len = static_cast<double>(sys.size());
  s.src_len = static_cast<double>(ex.source_tokens.size());
  s.tgt_len = static_cast<double>(refs[0].size());
  const double n_src = s.src_len;
  s.cr = s.gen_len / n_src;
  const double gold_cr = s.tgt_len / n_src;
  s.delta_cr_pts = 100.0 * (s.cr - gold_cr);
  return s;
}

inline ExampleScores mean_scores(const std::vector<ExampleScores>& scores) {
  ExampleScores mean;
  mean.id = "aggregate";
  if (scores.empty()) return mean;
  for (const ExampleScores& s : scores) {
    mean.rouge1_f += s.rouge1_f; mean.rouge2_f += s.rouge2_f; mean.rougeL_f += s.rougeL_f;
    mean.rouge1_r += s.rouge1_r; mean.rouge2_r += s.rouge2_r; mean.rougeL_r += s.rougeL_r;
    mean.kept_f1 += s.kept_f1;
    mean.cr += s.cr;
    mean.delta_cr_pts += s.delta_cr_pts;
    mean.novel_pct += s.novel_pct;
    mean.gen_len += s.gen_len; mean.src_len += s.src_len; mean.tgt_len += s.tgt_len;
  }
  const double n = static_cast<double>(scores.size());
  mean.rouge1_f /= n; mean.rouge2_f /= n; mean.rougeL_f /= n;
  mean.rouge1_r /= n; mean.rouge2_r /= n; mean.rougeL_r /= n;
  mean.kept_f1 /= n;
  mean.cr /= n;
  mean.delta_cr_pts /= n;
  mean.novel_pct /= n;
  mean.gen_len /= n; mean.src_len /= n; mean.tgt_len /= n;
  return mean;
}

}  // namespace detail

// Scores every record against its corpus example. Records keep their input
// order; multi-reference aggregation follows options.reference_aggregation
// (max takes the best reference per metric). The canonical first reference
// drives tgt_len and the gold compression ratio.
inline MetricReport score_run(const std::vector<GenerationRecord>& records, const Corpus& corpus,
                              const ScoreOptions& options = {}) {
  std::unordered_map<std::string, const CompressionExample*> by_id;
  by_id.reserve(corpus.examples.size());
  for (const CompressionExample& ex : corpus.examples) by_id.emplace(ex.id, &ex);

  MetricReport report;
  report.options = options;
  report.per_example.reserve(records.size());
  std::unordered_set<std::string> seen;
  for (const GenerationRecord& rec : records) {
    if (!seen.insert(rec.example_id).second)
      throw ScoringError("duplicate record id '" + rec.example_id + "'");
    auto it = by_id.find(rec.example_id);
    if (it == by_id.end())
      throw ScoringError("record id '" + rec.example_id + "' is not in corpus '" + corpus.name +
                         "'");
    report.per_example.push_back(detail::score_example(rec, *it->second, options));
  }
  report.aggregates = detail::mean_scores(report.per_example);
  return report;
}

namespace detail {

inline nlohmann::json scores_to_json(const ExampleScores& s) {
  return nlohmann::json{{"id", s.id},
                        {"rouge1_f", s.rouge1_f}, {"rouge2_f", s.rouge2_f}, {"rougeL_f", s.rougeL_f},
                        {"rouge1_r", s.rouge1_r}, {"rouge2_r", s.rouge2_r}, {"rougeL_r", s.rougeL_r},
                        {"kept_f1", s.kept_f1},
                        {"cr", s.cr},
                        {"delta_cr_pts", s.delta_cr_pts},
                        {"novel_pct", s.novel_pct},
                        {"gen_len", s.gen_len}, {"src_len", s.src_len}, {"tgt_len", s.tgt_len}};
}

inline ExampleScores scores_from_json(const nlohmann::json& obj) {
  ExampleScores s;
  s.id = obj.value("id", "");
  s.rouge1_f = obj.value("rouge1_f", 0.0); s.rouge2_f = obj.value("rouge2_f", 0.0);
  s.rougeL_f = obj.value("rougeL_f", 0.0);
  s.rouge1_r = obj.value("rouge1_r", 0.0); s.rouge2_r = obj.value("rouge2_r", 0.0);
  s.rougeL_r = obj.value("rougeL_r", 0.0);
  s.kept_f1 = obj.value("kept_f1", 0.0);
  s.cr = obj.value("cr", 0.0);
  s.delta_cr_pts = obj.value("delta_cr_pts", 0.0);
  s.novel_pct = obj.value("novel_pct", 0.0);
  s.gen_len = obj.value("gen_len", 0.0); s.src_len = obj.value("src_len", 0.0);
  s.tgt_len = obj.value("tgt_len", 0.0);
  return s;
}

}  // namespace detail

inline nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json per_example = nlohmann::json::array();
  for (const ExampleScores& s : report.per_example) per_example.push_back(detail::scores_to_json(s));
  return nlohmann::json{
      {"label",
       {{"dataset", report.label.dataset},
        {"setting", report.label.setting},
        {"instruction", report.label.instruction},
        {"prompting", report.label.prompting}}},
      {"options",
       {{"rouge_mode", to_string(report.options.rouge_mode)},
        {"reference_aggregation", to_string(report.options.reference_aggregation)},
        {"stemming", report.options.stemming}}},
      {"config_digest", report.config_digest},
      {"config", report.config_echo},
      {"count", report.per_example.size()},
      {"aggregates", detail::scores_to_json(report.aggregates)},
      {"per_example", std::move(per_example)}};
}

inline MetricReport report_from_json(const nlohmann::json& obj) {
  MetricReport report;
  if (obj.contains("label")) {
    const nlohmann::json& label = obj["label"];
    report.label.dataset = label.value("dataset", "");
    report.label.setting = label.value("setting", "");
    report.label.instruction = label.value("instruction", "");
    report.label.prompting = label.value("prompting", "-");
  }
  if (obj.contains("options")) {
    const nlohmann::json& options = obj["options"];
    report.options.rouge_mode = rouge_mode_from_string(options.value("rouge_mode", "f1"));
    report.options.reference_aggregation =
        ref_aggregation_from_string(options.value("reference_aggregation", "max"));
    report.options.stemming = options.value("stemming", false);
  }
  report.config_digest = obj.value("config_digest", "");
  if (obj.contains("config")) report.config_echo = obj["config"];
  if (obj.contains("aggregates")) report.aggregates = detail::scores_from_json(obj["aggregates"]);
  if (obj.contains("per_example"))
    for (const nlohmann::json& row : obj["per_example"])
      report.per_example.push_back(detail::scores_from_json(row));
  return report;
}

// One row per example plus an aggregate row.
inline std::string report_to_csv(const MetricReport& report) {
  std::string out =
      "id,rouge1_f,rouge2_f,rougeL_f,rouge1_r,rouge2_r,rougeL_r,kept_f1,cr,delta_cr_pts,"
      "novel_pct,gen_len,src_len,tgt_len,config_digest\n";
  auto row = [&](const ExampleScores& s) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%s\n",
                  s.rouge1_f, s.rouge2_f, s.rougeL_f, s.rouge1_r, s.rouge2_r, s.rougeL_r,
                  s.kept_f1, s.cr, s.delta_cr_pts, s.novel_pct, s.gen_len, s.src_len, s.tgt_len,
                  report.config_digest.c_str());
    out += detail::csv_quote(s.id);
    out += buf;
  };
  for (const ExampleScores& s : report.per_example) row(s);
  row(report.aggregates);
  return out;
}

}  // namespace sceval
