#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "sceval/corpus.hpp"
#include "sceval/detail/jsonl.hpp"
#include "sceval/error.hpp"

namespace sceval {

// Length arithmetic carried into the instruction: src_len = keep + del,
// 1 <= keep <= src_len, del >= 0.
struct LengthSpec {
  int src_len = 0;
  int keep = 0;
  int del = 0;
};

enum class LengthMode { gold, ratio, fixed, none };

struct LengthPolicy {
  LengthMode mode = LengthMode::gold;
  double ratio = 0.75;  // mode == ratio; in (0, 1]
  int fixed = 11;       // mode == fixed; >= 1

  static LengthPolicy gold() { return {LengthMode::gold, 0.0, 0}; }
  static LengthPolicy from_ratio(double r) { return {LengthMode::ratio, r, 0}; }
  static LengthPolicy from_fixed(int k) { return {LengthMode::fixed, 0.0, k}; }
  static LengthPolicy none() { return {LengthMode::none, 0.0, 0}; }
};

inline LengthMode length_mode_from_string(const std::string& s) {
  if (s == "gold") return LengthMode::gold;
  if (s == "ratio") return LengthMode::ratio;
  if (s == "fixed") return LengthMode::fixed;
  if (s == "none") return LengthMode::none;
  throw ValidationError("unknown length policy mode '" + s +
                        "' (expected gold, ratio, fixed or none)");
}

inline const char* to_string(LengthMode m) {
  switch (m) {
    case LengthMode::gold: return "gold";
    case LengthMode::ratio: return "ratio";
    case LengthMode::fixed: return "fixed";
    case LengthMode::none: return "none";
  }
  return "?";
}

// Prompt skeleton. The body holds {src} exactly once plus any of the length
// placeholders {src len}, {keep}, {del}; the prefix is prepended verbatim.
struct InstructionTemplate {
  std::string name;
  std::string body;
  std::string prefix;
};

inline const std::map<std::string, std::string>& builtin_template_bodies() {
  static const std::map<std::string, std::string> bodies = {
      {"plain#1",
       "Sentence:\n{src}\nThe sentence without the less important words would be:\n"},
      {"length#2",
       "Sentence:\n{src}\nThe sentence without the less important {del} words would be:\n"},
      {"priming#3",
       "Sentence that consists of {src len} words:\n{src}\nThe sentence that consists of {keep} "
       "words without the less important {del} words would be:\n"},
      {"src-priming#3-1",
       "Sentence that consists of {src len} words:\n{src}\nThe sentence without the less "
       "important {del} words would be:\n"},
      {"tgt-priming#3-2",
       "Sentence:\n{src}\nThe sentence that consists of {keep} words without the less important "
       "{del} words would be:\n"},
      {"flan#1", "Sentence:\n{src}\nSummarize without the less important words would be:\n"},
      {"flan#2", "Sentence:\n{src}\nSummarize without the less important {del} words would be:\n"},
      {"flan#3",
       "Sentence with {src len} words:\n{src}\nSummarize in {keep} words without the less "
       "important {del} words would be:\n"},
  };
  return bodies;
}

// Shipped prompting prefixes. The exact wording used in published experiments
// is not fixed anywhere; these are plain reconstructions and are meant to be
// overridden through configuration when exact control is needed.
inline const std::map<std::string, std::string>& builtin_prefixes() {
  static const std::map<std::string, std::string> prefixes = {
      {"cot", "Let's think step by step.\n"},
      {"tot",
       "Imagine three different experts are answering this question.\n"
       "All experts will write down one step of their thinking, then share it with the group.\n"
       "Then all experts will go on to the next step, and so on.\n"
       "If any expert realises they're wrong at any point then they leave.\n"},
  };
  return prefixes;
}

namespace detail {

// Walks placeholders; emit(name) for each. Throws on unknown names or
// unbalanced braces.
template <typename Emit, typename Text>
inline void scan_template_body(const std::string& body, const std::string& tmpl_name, Emit&& emit,
                               Text&& text) {
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] != '{') {
      std::size_t next = body.find('{', i);
      if (next == std::string::npos) next = body.size();
      text(std::string_view(body).substr(i, next - i));
      i = next;
      continue;
    }
    std::size_t close = body.find('}', i);
    if (close == std::string::npos)
      throw ValidationError("template '" + tmpl_name + "': unbalanced '{'");
    std::string_view name = std::string_view(body).substr(i + 1, close - i - 1);
    if (name != "src" && name != "src len" && name != "keep" && name != "del")
      throw ValidationError("template '" + tmpl_name + "': unknown placeholder '{" +
                            std::string(name) + "}'");
    emit(name);
    i = close + 1;
  }
}

}  // namespace detail

inline void validate_template(const InstructionTemplate& tmpl) {
  int src_count = 0;
  detail::scan_template_body(
      tmpl.body, tmpl.name,
      [&](std::string_view name) {
        if (name == "src") ++src_count;
      },
      [](std::string_view) {});
  if (src_count != 1)
    throw ValidationError("template '" + tmpl.name + "': body must contain {src} exactly once");
}

inline bool uses_length_placeholders(const InstructionTemplate& tmpl) {
  bool uses = false;
  detail::scan_template_body(
      tmpl.body, tmpl.name,
      [&](std::string_view name) {
        if (name != "src") uses = true;
      },
      [](std::string_view) {});
  return uses;
}

inline InstructionTemplate make_template(std::string name, std::string body,
                                         std::string prefix = "") {
  InstructionTemplate tmpl{std::move(name), std::move(body), std::move(prefix)};
  validate_template(tmpl);
  return tmpl;
}

inline InstructionTemplate builtin_template(const std::string& name, std::string prefix = "") {
  auto it = builtin_template_bodies().find(name);
  if (it == builtin_template_bodies().end()) {
    std::string known;
    for (const auto& [key, body] : builtin_template_bodies()) {
      if (!known.empty()) known += ", ";
      known += key;
    }
    throw ValidationError("unknown template '" + name + "' (built-ins: " + known + ")");
  }
  return make_template(name, it->second, std::move(prefix));
}

inline InstructionTemplate template_from_file(const std::filesystem::path& path,
                                              std::string prefix = "") {
  return make_template(path.stem().string(), detail::read_file(path), std::move(prefix));
}

// keep per mode: gold = first-reference word count, ratio = round-half-up of
// r * src_len, fixed = min(k, src_len); always clamped into [1, src_len] so
// short or over-long gold references stay renderable.
inline LengthSpec compute_length_spec(const CompressionExample& ex, const LengthPolicy& policy) {
  const int src_len = static_cast<int>(ex.source_tokens.size());
  if (src_len < 1) throw ValidationError("example '" + ex.id + "': source has no words");
  int keep = 0;
  switch (policy.mode) {
    case LengthMode::gold:
      if (ex.gold_references.empty())
        throw ValidationError("example '" + ex.id + "': gold length policy needs a reference");
      keep = static_cast<int>(detail::word_count(ex.gold_references[0]));
      break;
    case LengthMode::ratio:
      if (!(policy.ratio > 0.0 && policy.ratio <= 1.0))
        throw ValidationError("length ratio must be in (0, 1]");
      keep = static_cast<int>(std::floor(policy.ratio * src_len + 0.5));
      break;
    case LengthMode::fixed:
      if (policy.fixed < 1) throw ValidationError("fixed length must be >= 1");
      keep = policy.fixed;
      break;
    case LengthMode::none:
      throw ValidationError("length policy 'none' yields no length spec");
  }
  keep = std::max(1, std::min(keep, src_len));
  return LengthSpec{src_len, keep, src_len - keep};
}

// Pure substitution: prefix + body with {src} and the length placeholders
// filled in. The length spec must be present exactly when the body uses a
// length placeholder.
inline std::string render(const InstructionTemplate& tmpl, const CompressionExample& ex,
                          const std::optional<LengthSpec>& spec = std::nullopt) {
  const bool needs_spec = uses_length_placeholders(tmpl);
  if (needs_spec && !spec)
    throw ValidationError("template '" + tmpl.name +
                          "' has length placeholders but no length spec was given");
  if (!needs_spec && spec)
    throw ValidationError("template '" + tmpl.name +
                          "' has no length placeholders; omit the length spec");
  std::string out = tmpl.prefix;
  const std::string src = ex.source_text();
  detail::scan_template_body(
      tmpl.body, tmpl.name,
      [&](std::string_view name) {
        if (name == "src") out += src;
        else if (name == "src len") out += std::to_string(spec->src_len);
        else if (name == "keep") out += std::to_string(spec->keep);
        else out += std::to_string(spec->del);
      },
      [&](std::string_view text) { out += text; });
  return out;
}

}  // namespace sceval
