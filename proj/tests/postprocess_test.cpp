#include "sceval/postprocess.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sceval;

TEST(TokenizeTest, WhitespaceSplit) {
  EXPECT_EQ(tokenize_words("a  b\tc"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(tokenize_words(""), std::vector<std::string>{});
  EXPECT_EQ(tokenize_words("SM-857 offshore Brazil.").size(), 3u);
  EXPECT_EQ(tokenize_words("  leading and trailing  ").size(), 3u);
}

TEST(ExtractTest, CuePlusQuoteStripping) {
  ExtractionConfig cfg;
  EXPECT_EQ(extract("Sure! The sentence without the less important words would be:\n"
                    "\"Eni won a license.\"",
                    cfg),
            "Eni won a license.");
}

TEST(ExtractTest, IdentityWhenNothingApplies) {
  ExtractionConfig cfg;
  EXPECT_EQ(extract("Chinese shares closed lower Wednesday.", cfg),
            "Chinese shares closed lower Wednesday.");
}

TEST(ExtractTest, KeepsTextAfterLastCue) {
  ExtractionConfig cfg;
  EXPECT_EQ(extract("would be: draft\nFinal would be: the answer", cfg), "the answer");
}

TEST(ExtractTest, DropsPreambleLines) {
  ExtractionConfig cfg;
  cfg.preamble_patterns = {"^Sure", "^Here is"};
  EXPECT_EQ(extract("Sure, happy to help!\nHere is the compression:\nShares closed lower.", cfg),
            "Shares closed lower.");
}

TEST(ExtractTest, EmptyResultIsEmptyString) {
  ExtractionConfig cfg;
  EXPECT_EQ(extract("", cfg), "");
  EXPECT_EQ(extract("   \n \n", cfg), "");
  cfg.preamble_patterns = {"."};
  EXPECT_EQ(extract("everything matches", cfg), "");
}

TEST(ExtractTest, CurlyQuotesAndNestedQuotes) {
  ExtractionConfig cfg;
  EXPECT_EQ(extract("“Shares closed lower.”", cfg), "Shares closed lower.");
  EXPECT_EQ(extract("\"\"double wrapped\"\"", cfg), "double wrapped");
  // unbalanced quotes stay
  EXPECT_EQ(extract("\"left only", cfg), "\"left only");
}

TEST(ExtractTest, TruncationEndsAtWordBoundary) {
  ExtractionConfig cfg;
  cfg.truncate_chars = 75;
  std::string ninety =
      "Cambodian leader Hun Sen on Friday rejected opposition demands for talks held abroad";
  ASSERT_GT(ninety.size(), 75u);
  std::string out = extract(ninety, cfg);
  EXPECT_LE(out.size(), 75u);
  EXPECT_EQ(out, ninety.substr(0, out.size()));
  // next char in the original is a space or we kept a whole word
  EXPECT_TRUE(out.empty() || ninety[out.size()] == ' ');
}

TEST(TruncateTest, NeverSplitsWordsAndNeverGrows) {
  std::mt19937 rng(5);
  const std::vector<std::string> words = {"alpha", "be", "gamma", "x", "delta9", "epsilon"};
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const int n = static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      if (i) text += " ";
      text += words[rng() % words.size()];
    }
    const int limit = 1 + static_cast<int>(rng() % 30);
    std::string out = truncate_at_word_boundary(text, limit);
    EXPECT_LE(out.size(), text.size());
    EXPECT_LE(sceval::detail::utf8_length(out), static_cast<std::size_t>(limit));
    // every output token must be a whole input token
    auto out_tokens = tokenize_words(out);
    auto in_tokens = tokenize_words(text);
    ASSERT_LE(out_tokens.size(), in_tokens.size());
    for (std::size_t i = 0; i < out_tokens.size(); ++i) EXPECT_EQ(out_tokens[i], in_tokens[i]);
  }
}

TEST(TruncateTest, CountsUnicodeScalarsNotBytes) {
  // four two-byte scalars; a byte limit would cut mid-character
  std::string text = "éé éé";
  EXPECT_EQ(truncate_at_word_boundary(text, 2), "éé");
  EXPECT_EQ(truncate_at_word_boundary(text, 3), "éé");
  EXPECT_EQ(truncate_at_word_boundary(text, 5), text);
}

TEST(ExtractTest, Idempotent) {
  ExtractionConfig cfg;
  cfg.preamble_patterns = {"^Sure"};
  cfg.truncate_chars = 40;
  const std::vector<std::string> raws = {
      "Sure, here you go!\nThe sentence would be:\n\"A long answer that keeps going on and on\"",
      "plain text with no decoration",
      "would be: would be: nested cues",
      "\"“mixed quotes”\"",
      "",
      "   \n\t\n",
      "word " + std::string(60, 'x'),
  };
  for (const std::string& raw : raws) {
    std::string once = extract(raw, cfg);
    EXPECT_EQ(extract(once, cfg), once) << "raw: " << raw;
  }
  // randomized inputs
  std::mt19937 rng(17);
  const std::vector<std::string> pieces = {"would be:", "\"", "Sure ", "ok", "\n", " ", "é"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string raw;
    const int n = static_cast<int>(rng() % 10);
    for (int i = 0; i < n; ++i) raw += pieces[rng() % pieces.size()];
    std::string once = extract(raw, cfg);
    EXPECT_EQ(extract(once, cfg), once) << "raw: " << raw;
  }
}

TEST(ExtractTest, ReferencesPassThroughUnchanged) {
  ExtractionConfig cfg;
  const std::vector<std::string> refs = {
      "Eni has won a license for exploration block SM-857 offshore Brazil.",
      "Chinese shares closed lower Wednesday",
      "Profits rose slightly despite weak demand.",
  };
  for (const std::string& ref : refs) {
    EXPECT_EQ(tokenize_words(extract(ref, cfg)), tokenize_words(ref));
  }
}

TEST(ExtractTest, ProfilesAreNamed) {
  EXPECT_FALSE(extraction_profile("default").truncate_chars.has_value());
  ASSERT_TRUE(extraction_profile("duc").truncate_chars.has_value());
  EXPECT_EQ(*extraction_profile("duc").truncate_chars, 75);
  EXPECT_THROW(extraction_profile("nope"), ValidationError);
}

TEST(ExtractTest, BadRegexIsAnError) {
  ExtractionConfig cfg;
  cfg.preamble_patterns = {"["};
  EXPECT_THROW(extract("anything", cfg), ValidationError);
}
