#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "sceval/corpus.hpp"
#include "sceval/error.hpp"
#include "sceval/metrics.hpp"

namespace sceval {

enum class BucketKind { gold_cr, gold_word_count };

// Half-open [lo, hi) buckets over ascending edges; the topmost bucket absorbs
// its upper bound (and anything above it), so every example lands somewhere.
struct BucketSpec {
  BucketKind kind = BucketKind::gold_cr;
  std::vector<double> edges;

  static BucketSpec gold_cr_default() {
    return {BucketKind::gold_cr, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}};
  }
  static BucketSpec gold_word_count_default() {
    return {BucketKind::gold_word_count,
            {0.0, 5.0, 10.0, 15.0, 20.0, std::numeric_limits<double>::infinity()}};
  }
};

struct BucketRow {
  std::string boundary;  // e.g. "0.8~1.0" or "20~"
  double lo = 0, hi = 0;
  std::size_t count = 0;
  double rouge1 = 0, rouge2 = 0, rougeL = 0, kept_f1 = 0;
  double delta_cr = 0;                        // gold_cr kind only
  double src_len = 0, tgt_len = 0, gen_len = 0;  // gold_word_count kind only
};

struct BucketTable {
  BucketKind kind = BucketKind::gold_cr;
  std::vector<BucketRow> rows;  // descending by lower edge
};

namespace detail {

inline std::string bucket_label(BucketKind kind, double lo, double hi) {
  char buf[64];
  if (kind == BucketKind::gold_cr) {
    std::snprintf(buf, sizeof buf, "%.1f~%.1f", lo, hi);
  } else if (std::isinf(hi)) {
    std::snprintf(buf, sizeof buf, "%g~", lo);
  } else {
    std::snprintf(buf, sizeof buf, "%g~%g", lo, hi);
  }
  return buf;
}

inline std::size_t bucket_index(const std::vector<double>& edges, double value) {
  const std::size_t n_buckets = edges.size() - 1;
  for (std::size_t i = 0; i + 1 < n_buckets; ++i)
    if (value >= edges[i] && value < edges[i + 1]) return i;
  return n_buckets - 1;  // topmost bucket is closed at its stated bound
}

}  // namespace detail

// Groups per-example scores by the example's gold compression ratio or gold
// word count. Buckets are disjoint and their counts sum to the corpus size.
inline BucketTable bucket_report(const MetricReport& report, const Corpus& corpus,
                                 const BucketSpec& spec) {
  if (spec.edges.size() < 2) throw ValidationError("bucket spec needs at least two edges");
  for (std::size_t i = 1; i < spec.edges.size(); ++i)
    if (!(spec.edges[i - 1] < spec.edges[i]))
      throw ValidationError("bucket edges must be strictly ascending");

  std::unordered_map<std::string, const CompressionExample*> by_id;
  for (const CompressionExample& ex : corpus.examples) by_id.emplace(ex.id, &ex);

  const std::size_t n_buckets = spec.edges.size() - 1;
  std::vector<BucketRow> rows(n_buckets);
  for (std::size_t i = 0; i < n_buckets; ++i) {
    rows[i].lo = spec.edges[i];
    rows[i].hi = spec.edges[i + 1];
    rows[i].boundary = detail::bucket_label(spec.kind, rows[i].lo, rows[i].hi);
  }

  const bool recall = report.options.rouge_mode == RougeMode::recall;
  for (const ExampleScores& s : report.per_example) {
    auto it = by_id.find(s.id);
    if (it == by_id.end())
      throw ValidationError("report row '" + s.id + "' is not in corpus '" + corpus.name + "'");
    const CompressionExample& ex = *it->second;
    const double gold_words = static_cast<double>(detail::word_count(ex.gold_references[0]));
    const double value = spec.kind == BucketKind::gold_cr
                             ? gold_words / static_cast<double>(ex.source_tokens.size())
                             : gold_words;
    BucketRow& row = rows[detail::bucket_index(spec.edges, value)];
    ++row.count;
    row.rouge1 += recall ? s.rouge1_r : s.rouge1_f;
    row.rouge2 += recall ? s.rouge2_r : s.rouge2_f;
    row.rougeL += recall ? s.rougeL_r : s.rougeL_f;
    row.kept_f1 += s.kept_f1;
    row.delta_cr += s.delta_cr_pts;
    row.src_len += s.src_len;
    row.tgt_len += s.tgt_len;
    row.gen_len += s.gen_len;
  }
  for (BucketRow& row : rows) {
    if (row.count == 0) continue;
    const double n = static_cast<double>(row.count);
    row.rouge1 /= n; row.rouge2 /= n; row.rougeL /= n; row.kept_f1 /= n;
    row.delta_cr /= n;
    row.src_len /= n; row.tgt_len /= n; row.gen_len /= n;
  }
  std::reverse(rows.begin(), rows.end());
  return BucketTable{spec.kind, std::move(rows)};
}

struct SignificanceResult {
  std::string metric;
  std::string system_a;
  std::string system_b;
  double mean_a = 0;
  double mean_b = 0;
  double observed_diff = 0;  // mean_a - mean_b
  double p_value = 1.0;
  int permutations = 0;
  std::uint64_t seed = 0;
  bool abs_values = false;  // values were |x| (used for delta_cr)
  std::string digest_a, digest_b;  // config digests of the compared reports
};

// Paired approximate randomization: two-sided p-value from R random
// sign-flips of the per-example differences, add-one smoothed. The sign
// vector of permutation r is derived from (seed, r), so results are
// deterministic given the seed and invariant under swapping a and b.
inline SignificanceResult paired_randomization_test(const std::vector<double>& a,
                                                    const std::vector<double>& b, int permutations,
                                                    std::uint64_t seed) {
  if (a.size() != b.size())
    throw ValidationError("paired test: score vectors differ in length (" +
                          std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  if (a.size() < 2) throw ValidationError("paired test: need at least 2 paired scores");
  if (permutations < 100) throw ValidationError("paired test: need at least 100 permutations");

  const std::size_t n = a.size();
  std::vector<double> diff(n);
  double observed_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = a[i] - b[i];
    observed_sum += diff[i];
  }
  const double observed = std::fabs(observed_sum / static_cast<double>(n));

  std::size_t at_least_as_extreme = 0;
  for (int r = 0; r < permutations; ++r) {
    std::seed_seq seq{static_cast<unsigned>(seed & 0xFFFFFFFFu),
                      static_cast<unsigned>(seed >> 32), static_cast<unsigned>(r)};
    std::mt19937_64 rng(seq);
    std::uint64_t bits = 0;
    int available = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (available == 0) {
        bits = rng();
        available = 64;
      }
      sum += (bits & 1u) ? diff[i] : -diff[i];
      bits >>= 1;
      --available;
    }
    if (std::fabs(sum / static_cast<double>(n)) >= observed) ++at_least_as_extreme;
  }

  SignificanceResult result;
  result.p_value = (static_cast<double>(at_least_as_extreme) + 1.0) /
                   (static_cast<double>(permutations) + 1.0);
  result.permutations = permutations;
  result.seed = seed;
  double sum_a = 0, sum_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sum_a += a[i];
    sum_b += b[i];
  }
  result.mean_a = sum_a / static_cast<double>(n);
  result.mean_b = sum_b / static_cast<double>(n);
  result.observed_diff = result.mean_a - result.mean_b;
  return result;
}

inline nlohmann::json significance_to_json(const SignificanceResult& s) {
  nlohmann::json obj{{"metric", s.metric},
                     {"system_a", s.system_a},
                     {"system_b", s.system_b},
                     {"mean_a", s.mean_a},
                     {"mean_b", s.mean_b},
                     {"observed_diff", s.observed_diff},
                     {"p_value", s.p_value},
                     {"permutations", s.permutations},
                     {"seed", s.seed},
                     {"abs_values", s.abs_values}};
  if (!s.digest_a.empty()) obj["digest_a"] = s.digest_a;
  if (!s.digest_b.empty()) obj["digest_b"] = s.digest_b;
  return obj;
}

inline SignificanceResult significance_from_json(const nlohmann::json& obj) {
  SignificanceResult s;
  s.metric = obj.value("metric", "");
  s.system_a = obj.value("system_a", "");
  s.system_b = obj.value("system_b", "");
  s.mean_a = obj.value("mean_a", 0.0);
  s.mean_b = obj.value("mean_b", 0.0);
  s.observed_diff = obj.value("observed_diff", 0.0);
  s.p_value = obj.value("p_value", 1.0);
  s.permutations = obj.value("permutations", 0);
  s.seed = obj.value("seed", std::uint64_t{0});
  s.abs_values = obj.value("abs_values", false);
  s.digest_a = obj.value("digest_a", "");
  s.digest_b = obj.value("digest_b", "");
  return s;
}

enum class TableFormat { markdown, csv, json };

inline TableFormat table_format_from_string(const std::string& s) {
  if (s == "markdown" || s == "md") return TableFormat::markdown;
  if (s == "csv") return TableFormat::csv;
  if (s == "json") return TableFormat::json;
  throw ValidationError("unknown table format '" + s + "' (expected markdown, csv or json)");
}

namespace detail {

inline const std::vector<std::string>& table_metrics() {
  static const std::vector<std::string> metrics = {"rouge1", "rouge2",   "rougeL",
                                                   "kept_f1", "delta_cr", "novel"};
  return metrics;
}

inline double aggregate_metric(const MetricReport& report, const std::string& metric) {
  const ExampleScores& a = report.aggregates;
  const bool recall = report.options.rouge_mode == RougeMode::recall;
  if (metric == "rouge1") return recall ? a.rouge1_r : a.rouge1_f;
  if (metric == "rouge2") return recall ? a.rouge2_r : a.rouge2_f;
  if (metric == "rougeL") return recall ? a.rougeL_r : a.rougeL_f;
  if (metric == "kept_f1") return a.kept_f1;
  if (metric == "delta_cr") return a.delta_cr_pts;
  if (metric == "novel") return a.novel_pct;
  throw ValidationError("unknown metric '" + metric + "'");
}

// Per-example values for a metric, aligned to id_order. delta_cr comes back
// as |delta_cr| since length adherence improves toward zero.
inline std::vector<double> metric_values(const MetricReport& report,
                                         const std::vector<std::string>& id_order,
                                         const std::string& metric) {
  std::unordered_map<std::string, const ExampleScores*> by_id;
  for (const ExampleScores& s : report.per_example) by_id.emplace(s.id, &s);
  const bool recall = report.options.rouge_mode == RougeMode::recall;
  std::vector<double> values;
  values.reserve(id_order.size());
  for (const std::string& id : id_order) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw ValidationError("report '" + report.label.row_key() + "' has no example '" + id + "'");
    const ExampleScores& s = *it->second;
    double v = 0;
    if (metric == "rouge1") v = recall ? s.rouge1_r : s.rouge1_f;
    else if (metric == "rouge2") v = recall ? s.rouge2_r : s.rouge2_f;
    else if (metric == "rougeL") v = recall ? s.rougeL_r : s.rougeL_f;
    else if (metric == "kept_f1") v = s.kept_f1;
    else if (metric == "delta_cr") v = std::fabs(s.delta_cr_pts);
    else if (metric == "novel") v = s.novel_pct;
    else throw ValidationError("unknown metric '" + metric + "'");
    values.push_back(v);
  }
  return values;
}

inline std::string md_escape(const std::string& cell) {
  std::string out;
  out.reserve(cell.size());
  for (char c : cell) {
    if (c == '|') out += "\\|";
    else out.push_back(c);
  }
  return out;
}

inline std::string format_metric(const std::string& metric, double value) {
  char buf[64];
  if (metric == "kept_f1") std::snprintf(buf, sizeof buf, "%.2f", value);
  else if (metric == "delta_cr") std::snprintf(buf, sizeof buf, "%+.2f", value);
  else std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

}  // namespace detail

// "A/B is significant at p < 0.05 and A improved" per (row, metric); delta_cr
// improves by shrinking in magnitude, everything else by growing.
inline std::set<std::pair<std::string, std::string>> significant_cells(
    const std::vector<SignificanceResult>& significance) {
  std::set<std::pair<std::string, std::string>> cells;
  for (const SignificanceResult& s : significance) {
    if (s.p_value >= 0.05) continue;
    const bool improved =
        s.metric == "delta_cr" ? s.mean_a < s.mean_b : s.mean_a > s.mean_b;
    if (improved) cells.emplace(s.system_a, s.metric);
  }
  return cells;
}

// Renders the comparison table over one corpus: one row per report, columns
// R-1 / R-2 / R-L / F1 / dCR / novel plus an optional externally merged BS
// column. Cells earn a dagger when significance says so.
inline std::string emit_tables(
    const std::vector<MetricReport>& reports, const std::vector<SignificanceResult>& significance,
    TableFormat format,
    const std::optional<std::map<std::string, double>>& bs_merge = std::nullopt) {
  if (reports.empty()) throw ValidationError("emit_tables: no reports");

  // Reports must cover the same example set.
  std::vector<std::string> first_ids;
  for (const ExampleScores& s : reports[0].per_example) first_ids.push_back(s.id);
  std::vector<std::string> sorted_first = first_ids;
  std::sort(sorted_first.begin(), sorted_first.end());
  for (const MetricReport& report : reports) {
    std::vector<std::string> ids;
    for (const ExampleScores& s : report.per_example) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    if (ids != sorted_first)
      throw ValidationError("emit_tables: report '" + report.label.row_key() +
                            "' covers a different corpus");
  }

  std::set<std::string> row_keys;
  for (const MetricReport& report : reports) row_keys.insert(report.label.row_key());
  for (const SignificanceResult& s : significance) {
    if (!row_keys.count(s.system_a) || !row_keys.count(s.system_b))
      throw ValidationError("significance result references absent row '" +
                            (row_keys.count(s.system_a) ? s.system_b : s.system_a) + "'");
  }

  const auto daggers = significant_cells(significance);
  const auto& metrics = detail::table_metrics();
  static const std::map<std::string, std::string> kHeader = {
      {"rouge1", "R-1"}, {"rouge2", "R-2"},     {"rougeL", "R-L"},
      {"kept_f1", "F1"}, {"delta_cr", "ΔCR"}, {"novel", "novel"}};

  if (format == TableFormat::json) {
    nlohmann::json doc = nlohmann::json::object();
    for (const MetricReport& report : reports) {
      nlohmann::json row = nlohmann::json::object();
      for (const std::string& metric : metrics)
        row[metric] = detail::aggregate_metric(report, metric);
      nlohmann::json sig = nlohmann::json::array();
      for (const std::string& metric : metrics)
        if (daggers.count({report.label.row_key(), metric})) sig.push_back(metric);
      row["significant"] = std::move(sig);
      if (bs_merge) {
        auto it = bs_merge->find(report.label.row_key());
        if (it != bs_merge->end()) row["bs"] = it->second;
      }
      row["config_digest"] = report.config_digest;
      doc[report.label.dataset][report.label.row_key()] = std::move(row);
    }
    return doc.dump(2) + "\n";
  }

  if (format == TableFormat::csv) {
    std::string out = "dataset,setting,instruction,prompting";
    for (const std::string& metric : metrics) out += "," + metric;
    out += ",bs,significant,config_digest\n";
    for (const MetricReport& report : reports) {
      out += detail::csv_quote(report.label.dataset) + "," +
             detail::csv_quote(report.label.setting) + "," +
             detail::csv_quote(report.label.instruction) + "," +
             detail::csv_quote(report.label.prompting);
      for (const std::string& metric : metrics) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f", detail::aggregate_metric(report, metric));
        out += std::string(",") + buf;
      }
      out += ",";
      if (bs_merge) {
        auto it = bs_merge->find(report.label.row_key());
        if (it != bs_merge->end()) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.4f", it->second);
          out += buf;
        }
      }
      std::string sig;
      for (const std::string& metric : metrics) {
        if (!daggers.count({report.label.row_key(), metric})) continue;
        if (!sig.empty()) sig += ";";
        sig += metric;
      }
      out += "," + detail::csv_quote(sig) + "," + report.config_digest + "\n";
    }
    return out;
  }

  // markdown
  std::string out = "# Evaluation report\n\n";
  out +=
      "A dagger marks p < 0.05 against the designated baseline row; ΔCR comparisons are made "
      "on per-example |ΔCR| (closeness to the gold length).\n\n";
  for (const MetricReport& report : reports)
    if (!report.config_digest.empty())
      out += "- " + report.label.row_key() + ": config `" + report.config_digest + "`\n";
  out += "\n";
  out += "| dataset | setting | instruction | prompting |";
  for (const std::string& metric : metrics) out += " " + kHeader.at(metric) + " |";
  if (bs_merge) out += " BS |";
  out += "\n|---|---|---|---|";
  for (std::size_t i = 0; i < metrics.size(); ++i) out += "---|";
  if (bs_merge) out += "---|";
  out += "\n";
  for (const MetricReport& report : reports) {
    out += "| " + detail::md_escape(report.label.dataset) + " | " +
           detail::md_escape(report.label.setting) + " | " +
           detail::md_escape(report.label.instruction) + " | " +
           detail::md_escape(report.label.prompting) + " |";
    for (const std::string& metric : metrics) {
      out += " " + detail::format_metric(metric, detail::aggregate_metric(report, metric));
      if (daggers.count({report.label.row_key(), metric})) out += "†";
      out += " |";
    }
    if (bs_merge) {
      auto it = bs_merge->find(report.label.row_key());
      out += it != bs_merge->end() ? " " + detail::format_metric("bs", it->second) + " |" : " - |";
    }
    out += "\n";
  }
  return out;
}

struct NamedBucketTable {
  std::string row_key;
  std::string config_digest;
  BucketTable table;
};

// Stacked bucket tables, one row group per report, Table-style boundary
// labels. gold_cr rows carry the mean delta; gold_word_count rows carry mean
// lengths.
inline std::string buckets_to_csv(const std::vector<NamedBucketTable>& tables) {
  std::string out =
      "report,kind,boundary,cnt,rouge1,rouge2,rougeL,kept_f1,delta_cr,src_len,tgt_len,gen_len,"
      "config_digest\n";
  for (const NamedBucketTable& named : tables) {
    for (const BucketRow& row : named.table.rows) {
      char buf[256];
      std::snprintf(buf, sizeof buf, ",%zu,%.4f,%.4f,%.4f,%.4f", row.count, row.rouge1, row.rouge2,
                    row.rougeL, row.kept_f1);
      out += detail::csv_quote(named.row_key);
      out += named.table.kind == BucketKind::gold_cr ? ",gold_cr," : ",gold_word_count,";
      out += row.boundary;
      out += buf;
      if (named.table.kind == BucketKind::gold_cr) {
        std::snprintf(buf, sizeof buf, ",%.4f,,,", row.delta_cr);
      } else {
        std::snprintf(buf, sizeof buf, ",,%.4f,%.4f,%.4f", row.src_len, row.tgt_len, row.gen_len);
      }
      out += buf;
      out += "," + named.config_digest + "\n";
    }
  }
  return out;
}

}  // namespace sceval
