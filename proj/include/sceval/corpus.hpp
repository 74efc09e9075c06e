#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "sceval/detail/jsonl.hpp"
#include "sceval/detail/text.hpp"
#include "sceval/error.hpp"

namespace sceval {

// One source sentence with its gold compression. Tokens are the
// whitespace-delimited units of the raw sentence, punctuation attached.
// When keep/drop labels are present, gold_references[0] is the space-join of
// the kept tokens in source order.
struct CompressionExample {
  std::string id;
  std::vector<std::string> source_tokens;
  std::optional<std::vector<int>> gold_labels;  // 1 = keep, aligned with source_tokens
  std::vector<std::string> gold_references;     // non-empty; [0] is canonical
  std::string origin = "custom";

  std::string source_text() const {
    std::string out;
    for (std::size_t i = 0; i < source_tokens.size(); ++i) {
      if (i) out.push_back(' ');
      out += source_tokens[i];
    }
    return out;
  }
};

inline std::string joined_kept_tokens(const std::vector<std::string>& tokens,
                                      const std::vector<int>& labels) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (labels[i] != 1) continue;
    if (!out.empty()) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

inline void validate_example(const CompressionExample& ex, const std::string& context = "") {
  auto fail = [&](const std::string& what) {
    std::string where = context.empty() ? "example '" + ex.id + "'" : context;
    throw ValidationError(where + ": " + what);
  };
  if (ex.id.empty()) fail("missing id");
  if (ex.source_tokens.empty()) fail("source sentence has no tokens");
  if (ex.gold_references.empty()) fail("no gold reference");
  for (const std::string& ref : ex.gold_references)
    if (detail::trim(ref).empty()) fail("empty reference");
  if (ex.gold_labels) {
    if (ex.gold_labels->size() != ex.source_tokens.size())
      fail(std::to_string(ex.source_tokens.size()) + " tokens but " +
           std::to_string(ex.gold_labels->size()) + " labels");
    for (int label : *ex.gold_labels)
      if (label != 0 && label != 1) fail("labels must be 0 or 1");
    if (ex.gold_references[0] != joined_kept_tokens(ex.source_tokens, *ex.gold_labels))
      fail("first reference does not match the kept tokens");
  }
}

enum class CorpusFormat { labeled_tsv, pair_jsonl, multiref_jsonl };

inline CorpusFormat corpus_format_from_string(const std::string& s) {
  if (s == "labeled-tsv") return CorpusFormat::labeled_tsv;
  if (s == "pair-jsonl") return CorpusFormat::pair_jsonl;
  if (s == "multiref-jsonl") return CorpusFormat::multiref_jsonl;
  throw ValidationError("unknown corpus format '" + s +
                        "' (expected labeled-tsv, pair-jsonl or multiref-jsonl)");
}

inline const char* to_string(CorpusFormat f) {
  switch (f) {
    case CorpusFormat::labeled_tsv: return "labeled-tsv";
    case CorpusFormat::pair_jsonl: return "pair-jsonl";
    case CorpusFormat::multiref_jsonl: return "multiref-jsonl";
  }
  return "?";
}

struct Corpus {
  std::string name;
  std::string split = "test";
  std::vector<CompressionExample> examples;
};

namespace detail {

inline void check_unique_ids(const Corpus& corpus) {
  std::unordered_set<std::string> seen;
  for (const CompressionExample& ex : corpus.examples)
    if (!seen.insert(ex.id).second)
      throw ValidationError("corpus '" + corpus.name + "': duplicate example id '" + ex.id + "'");
}

inline std::vector<std::string> split_tabs(std::string_view line, const std::string& context) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    std::string_view cell =
        tab == std::string_view::npos ? line.substr(start) : line.substr(start, tab - start);
    cell = trim(cell);
    if (cell.empty()) throw ValidationError(context + ": empty field");
    cells.emplace_back(cell);
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return cells;
}

inline Corpus load_labeled_tsv(const std::filesystem::path& path, std::string name,
                               std::string split, std::string origin) {
  std::string content = read_file(path);
  std::vector<std::string_view> lines = split_lines(content);
  Corpus corpus{std::move(name), std::move(split), {}};
  std::size_t i = 0;
  std::size_t index = 0;
  while (i < lines.size()) {
    if (trim(lines[i]).empty()) {
      ++i;
      continue;
    }
    const std::string token_ctx = jsonl_context(path, i + 1);
    std::vector<std::string> tokens = split_tabs(lines[i], token_ctx);
    if (i + 1 >= lines.size() || trim(lines[i + 1]).empty())
      throw ValidationError(token_ctx + ": token line without a label line");
    const std::string label_ctx = jsonl_context(path, i + 2);
    std::vector<std::string> label_cells = split_tabs(lines[i + 1], label_ctx);
    if (label_cells.size() != tokens.size())
      throw ValidationError(label_ctx + ": " + std::to_string(tokens.size()) + " tokens but " +
                            std::to_string(label_cells.size()) + " labels");
    std::vector<int> labels;
    labels.reserve(label_cells.size());
    for (const std::string& cell : label_cells) {
      if (cell == "0") labels.push_back(0);
      else if (cell == "1") labels.push_back(1);
      else throw ValidationError(label_ctx + ": label '" + cell + "' is not 0 or 1");
    }
    CompressionExample ex;
    ex.id = default_example_id(index);
    ex.source_tokens = std::move(tokens);
    ex.gold_labels = std::move(labels);
    std::string ref = joined_kept_tokens(ex.source_tokens, *ex.gold_labels);
    if (ref.empty()) throw ValidationError(label_ctx + ": all labels are 0, empty reference");
    ex.gold_references.push_back(std::move(ref));
    ex.origin = origin;
    validate_example(ex, token_ctx);
    corpus.examples.push_back(std::move(ex));
    i += 2;
    ++index;
  }
  return corpus;
}

inline Corpus load_jsonl_corpus(const std::filesystem::path& path, std::string name,
                                std::string split, std::string origin, bool multiref) {
  Corpus corpus{std::move(name), std::move(split), {}};
  std::size_t index = 0;
  for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& obj) {
    const std::string ctx = jsonl_context(path, lineno);
    if (!obj.contains("src") || !obj["src"].is_string())
      throw ValidationError(ctx + ": missing string field 'src'");
    CompressionExample ex;
    ex.id = obj.value("id", default_example_id(index));
    ex.origin = obj.value("origin", origin);
    ex.source_tokens = split_ws(obj["src"].get<std::string>());
    if (multiref) {
      if (!obj.contains("refs") || !obj["refs"].is_array() || obj["refs"].empty())
        throw ValidationError(ctx + ": missing non-empty array field 'refs'");
      for (const auto& ref : obj["refs"]) {
        if (!ref.is_string()) throw ValidationError(ctx + ": refs must be strings");
        ex.gold_references.push_back(ref.get<std::string>());
      }
      if (obj.contains("labels") && !obj["labels"].is_null()) {
        if (!obj["labels"].is_array()) throw ValidationError(ctx + ": labels must be an array");
        std::vector<int> labels;
        for (const auto& label : obj["labels"]) {
          if (!label.is_number_integer()) throw ValidationError(ctx + ": labels must be integers");
          labels.push_back(label.get<int>());
        }
        ex.gold_labels = std::move(labels);
      }
    } else {
      if (!obj.contains("ref") || !obj["ref"].is_string())
        throw ValidationError(ctx + ": missing string field 'ref'");
      ex.gold_references.push_back(obj["ref"].get<std::string>());
    }
    validate_example(ex, ctx);
    corpus.examples.push_back(std::move(ex));
    ++index;
  });
  return corpus;
}

}  // namespace detail

// Loads a corpus; the loaded examples satisfy every CompressionExample
// invariant and keep their file order. name defaults to the file stem.
inline Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                          std::string name = "", std::string split = "test",
                          std::string origin = "custom") {
  if (name.empty()) name = path.stem().string();
  Corpus corpus;
  switch (format) {
    case CorpusFormat::labeled_tsv:
      corpus = detail::load_labeled_tsv(path, std::move(name), std::move(split), std::move(origin));
      break;
    case CorpusFormat::pair_jsonl:
      corpus = detail::load_jsonl_corpus(path, std::move(name), std::move(split),
                                         std::move(origin), false);
      break;
    case CorpusFormat::multiref_jsonl:
      corpus = detail::load_jsonl_corpus(path, std::move(name), std::move(split),
                                         std::move(origin), true);
      break;
  }
  detail::check_unique_ids(corpus);
  return corpus;
}

// Interchange serialization: one {id, src, labels?, refs, origin} object per
// line, readable back via the multiref-jsonl loader.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (const CompressionExample& ex : corpus.examples) {
    nlohmann::json obj{{"id", ex.id},
                       {"src", ex.source_text()},
                       {"refs", ex.gold_references},
                       {"origin", ex.origin}};
    if (ex.gold_labels) obj["labels"] = *ex.gold_labels;
    out << obj.dump() << "\n";
  }
}

// Mean over examples of first-reference words / source words.
inline double gold_compression_ratio(const Corpus& corpus) {
  if (corpus.examples.empty())
    throw ValidationError("corpus '" + corpus.name + "' is empty");
  double sum = 0.0;
  for (const CompressionExample& ex : corpus.examples) {
    double src_words = static_cast<double>(ex.source_tokens.size());
    double ref_words = static_cast<double>(detail::word_count(ex.gold_references[0]));
    sum += ref_words / src_words;
  }
  return sum / static_cast<double>(corpus.examples.size());
}

}  // namespace sceval
