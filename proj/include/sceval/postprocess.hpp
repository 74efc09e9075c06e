#pragma once

#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "sceval/detail/text.hpp"
#include "sceval/error.hpp"

namespace sceval {

// Heuristics that turn a raw completion into the sentence that gets scored.
// Everything is configurable; scoring must not depend on hidden cleanup.
struct ExtractionConfig {
  std::string cue_phrase = "would be:";       // keep text after its last occurrence
  bool strip_quotes = true;                   // drop wrapping quotation marks
  std::vector<std::string> preamble_patterns; // lines matching any regex are dropped
  std::optional<int> truncate_chars;          // cut at N scalar values, then trim partial word
};

// Named profiles; "duc" adds the 75-character truncation protocol.
inline ExtractionConfig extraction_profile(const std::string& name) {
  if (name == "default" || name.empty()) return ExtractionConfig{};
  if (name == "duc") {
    ExtractionConfig cfg;
    cfg.truncate_chars = 75;
    return cfg;
  }
  throw ValidationError("unknown extraction profile '" + name + "' (expected default or duc)");
}

inline std::vector<std::string> tokenize_words(std::string_view text) {
  return detail::split_ws(text);
}

// Cuts at max_chars Unicode scalar values, then drops a trailing partial word
// and trailing whitespace. Never lengthens the input and never splits a word.
inline std::string truncate_at_word_boundary(std::string_view text, int max_chars) {
  if (max_chars < 1) throw ValidationError("truncate_chars must be >= 1");
  const std::size_t limit = static_cast<std::size_t>(max_chars);
  if (detail::utf8_length(text) <= limit) return std::string(text);
  const std::size_t cut = detail::utf8_prefix_bytes(text, limit);
  std::string_view head = text.substr(0, cut);
  const bool split_word = !head.empty() && !detail::is_space(head.back()) &&
                          cut < text.size() && !detail::is_space(text[cut]);
  if (split_word) {
    std::size_t last_space = head.find_last_of(" \t\n\r\f\v");
    head = last_space == std::string_view::npos ? std::string_view{} : head.substr(0, last_space);
  }
  while (!head.empty() && detail::is_space(head.back())) head.remove_suffix(1);
  return std::string(head);
}

namespace detail {

// Wrapping quote pairs: ASCII double/single plus the curly variants.
inline bool strip_wrapping_quotes_once(std::string& s) {
  static const std::pair<std::string_view, std::string_view> kPairs[] = {
      {"\"", "\""},
      {"'", "'"},
      {"\xE2\x80\x9C", "\xE2\x80\x9D"},  // curly double
      {"\xE2\x80\x98", "\xE2\x80\x99"},  // curly single
  };
  for (const auto& [open, close] : kPairs) {
    if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
        s.compare(s.size() - close.size(), close.size(), close) == 0) {
      s = s.substr(open.size(), s.size() - open.size() - close.size());
      s = std::string(trim(s));
      return true;
    }
  }
  return false;
}

}  // namespace detail

namespace detail {

inline std::string extract_pass(std::string_view raw, const ExtractionConfig& cfg,
                                const std::vector<std::regex>& patterns) {
  std::string_view text = raw;
  if (!cfg.cue_phrase.empty()) {
    std::size_t pos = text.rfind(cfg.cue_phrase);
    if (pos != std::string_view::npos) text = text.substr(pos + cfg.cue_phrase.size());
  }

  std::string candidate;
  for (std::string_view line : split_lines(text)) {
    std::string_view trimmed = trim(line);
    if (trimmed.empty()) continue;
    bool preamble = false;
    for (const std::regex& re : patterns) {
      if (std::regex_search(trimmed.begin(), trimmed.end(), re)) {
        preamble = true;
        break;
      }
    }
    if (preamble) continue;
    candidate = std::string(trimmed);
    break;
  }
  if (candidate.empty()) return candidate;

  if (cfg.strip_quotes) {
    while (strip_wrapping_quotes_once(candidate)) {
    }
  }
  if (cfg.truncate_chars) candidate = truncate_at_word_boundary(candidate, *cfg.truncate_chars);
  return candidate;
}

}  // namespace detail

// Extraction pipeline: cue phrase -> drop preamble lines -> first non-empty
// line -> strip wrapping quotes -> optional truncation, iterated to a fixed
// point so that extract(extract(x)) == extract(x) for every input (truncation
// or quote stripping can expose another wrapped pair or preamble match). No
// pass lengthens the string, so the loop terminates. An empty result means a
// zero-length output.
inline std::string extract(std::string_view raw, const ExtractionConfig& cfg) {
  std::vector<std::regex> patterns;
  patterns.reserve(cfg.preamble_patterns.size());
  for (const std::string& pattern : cfg.preamble_patterns) {
    try {
      patterns.emplace_back(pattern);
    } catch (const std::regex_error& e) {
      throw ValidationError("bad preamble pattern '" + pattern + "': " + e.what());
    }
  }
  std::string current = detail::extract_pass(raw, cfg, patterns);
  while (true) {
    std::string next = detail::extract_pass(current, cfg, patterns);
    if (next == current) return next;
    current = std::move(next);
  }
}

}  // namespace sceval
