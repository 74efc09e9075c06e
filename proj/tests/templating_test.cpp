#include "sceval/templating.hpp"

#include <gtest/gtest.h>

#include <random>

#include "sceval/detail/jsonl.hpp"
#include "testutil.hpp"

using namespace sceval;

namespace {

CompressionExample example_from(const std::string& text) {
  CompressionExample ex;
  ex.id = "x";
  ex.source_tokens = sceval::detail::split_ws(text);
  ex.gold_references = {text};
  return ex;
}

const std::string kEni = "Eni has won a license for exploration block SM-857 offshore Brazil.";

}  // namespace

TEST(LengthSpecTest, GoldModeUsesFirstReference) {
  CompressionExample ex = example_from(kEni);  // 11 words, reference = source
  LengthSpec spec = compute_length_spec(ex, LengthPolicy::gold());
  EXPECT_EQ(spec.src_len, 11);
  EXPECT_EQ(spec.keep, 11);
  EXPECT_EQ(spec.del, 0);
}

TEST(LengthSpecTest, RatioModeRoundsHalfUp) {
  CompressionExample ex;
  ex.id = "r";
  for (int i = 0; i < 20; ++i) ex.source_tokens.push_back("w" + std::to_string(i));
  ex.gold_references = {"w0"};
  LengthSpec spec = compute_length_spec(ex, LengthPolicy::from_ratio(0.75));
  EXPECT_EQ(spec.src_len, 20);
  EXPECT_EQ(spec.keep, 15);
  EXPECT_EQ(spec.del, 5);

  // 0.5 * 5 = 2.5 rounds up to 3
  CompressionExample five;
  five.id = "f";
  five.source_tokens = {"a", "b", "c", "d", "e"};
  five.gold_references = {"a"};
  EXPECT_EQ(compute_length_spec(five, LengthPolicy::from_ratio(0.5)).keep, 3);
}

TEST(LengthSpecTest, FixedModeCapsAtSourceLength) {
  CompressionExample ex;
  ex.id = "f";
  for (int i = 0; i < 38; ++i) ex.source_tokens.push_back("w");
  ex.gold_references = {"w"};
  LengthSpec spec = compute_length_spec(ex, LengthPolicy::from_fixed(11));
  EXPECT_EQ(spec.src_len, 38);
  EXPECT_EQ(spec.keep, 11);
  EXPECT_EQ(spec.del, 27);

  CompressionExample shorty = example_from("a b c");
  EXPECT_EQ(compute_length_spec(shorty, LengthPolicy::from_fixed(11)).keep, 3);
}

TEST(LengthSpecTest, NoneModeIsAnError) {
  EXPECT_THROW(compute_length_spec(example_from("a b"), LengthPolicy::none()), ValidationError);
}

TEST(RenderTest, PrimingEmbedsAllThreeCounts) {
  InstructionTemplate tmpl = builtin_template("priming#3");
  std::string prompt = render(tmpl, example_from(kEni), LengthSpec{11, 11, 0});
  EXPECT_EQ(prompt,
            "Sentence that consists of 11 words:\n" + kEni +
                "\nThe sentence that consists of 11 words without the less important 0 words "
                "would be:\n");
}

TEST(RenderTest, PlainTemplateTakesNoSpec) {
  InstructionTemplate tmpl = builtin_template("plain#1");
  EXPECT_EQ(render(tmpl, example_from("a b c")),
            "Sentence:\na b c\nThe sentence without the less important words would be:\n");
  EXPECT_THROW(render(tmpl, example_from("a b c"), LengthSpec{3, 2, 1}), ValidationError);
}

TEST(RenderTest, LengthTemplateRequiresSpec) {
  InstructionTemplate tmpl = builtin_template("length#2");
  CompressionExample ex = example_from("one two three four five six seven eight nine ten");
  EXPECT_THROW(render(tmpl, ex), ValidationError);
  std::string prompt = render(tmpl, ex, LengthSpec{10, 7, 3});
  EXPECT_NE(prompt.find("less important 3 words would be:\n"), std::string::npos);
}

TEST(RenderTest, PrefixIsPrependedVerbatim) {
  InstructionTemplate tmpl = builtin_template("length#2", builtin_prefixes().at("cot"));
  std::string prompt = render(tmpl, example_from("a b c"), LengthSpec{3, 2, 1});
  EXPECT_EQ(prompt.rfind("Let's think step by step.\n", 0), 0u);
}

TEST(RenderTest, GoldenFixtures) {
  struct Case {
    const char* template_name;
    const char* golden;
  };
  const Case cases[] = {
      {"plain#1", "plain1.golden"},
      {"length#2", "length2.golden"},
      {"priming#3", "priming3.golden"},
      {"src-priming#3-1", "src_priming31.golden"},
      {"tgt-priming#3-2", "tgt_priming32.golden"},
      {"flan#1", "flan1.golden"},
      {"flan#2", "flan2.golden"},
      {"flan#3", "flan3.golden"},
  };
  CompressionExample ex = example_from(kEni);
  for (const Case& c : cases) {
    InstructionTemplate tmpl = builtin_template(c.template_name);
    std::optional<LengthSpec> spec;
    if (uses_length_placeholders(tmpl)) spec = LengthSpec{11, 8, 3};
    std::string expected = sceval::detail::read_file(testutil::data_dir() / "golden" / c.golden);
    EXPECT_EQ(render(tmpl, ex, spec), expected) << c.template_name;
  }
}

TEST(RenderTest, CustomTemplateRejectsUnknownPlaceholder) {
  EXPECT_THROW(make_template("custom", "Shorten {src} to {length} words:\n"), ValidationError);
  EXPECT_THROW(make_template("custom", "No source placeholder here\n"), ValidationError);
  EXPECT_THROW(make_template("custom", "{src} and {src} twice\n"), ValidationError);
  EXPECT_THROW(make_template("custom", "Unbalanced {src"), ValidationError);
}

TEST(RenderTest, TemplateFileLoads) {
  testutil::TempDir tmp("tmplfile");
  sceval::detail::write_file(tmp.file("mine.txt"), "Cut {src} down to {keep} words:\n");
  InstructionTemplate tmpl = template_from_file(tmp.file("mine.txt"));
  EXPECT_EQ(tmpl.name, "mine");
  EXPECT_EQ(render(tmpl, example_from("a b c"), LengthSpec{3, 2, 1}),
            "Cut a b c down to 2 words:\n");
}

TEST(RenderTest, PureFunction) {
  InstructionTemplate tmpl = builtin_template("priming#3");
  CompressionExample ex = example_from(kEni);
  std::string a = render(tmpl, ex, LengthSpec{11, 8, 3});
  std::string b = render(tmpl, ex, LengthSpec{11, 8, 3});
  EXPECT_EQ(a, b);
}

// Parse the three integers back out of a rendered priming prompt and check
// src_len = keep + del for randomized inputs.
TEST(RenderTest, PrimingIntegersAreConsistent) {
  InstructionTemplate tmpl = builtin_template("priming#3");
  std::mt19937 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int src_len = 1 + static_cast<int>(rng() % 40);
    CompressionExample ex;
    ex.id = "p";
    for (int i = 0; i < src_len; ++i) ex.source_tokens.push_back("tok");
    ex.gold_references = {"tok"};
    LengthPolicy policy = (trial % 2 == 0)
                              ? LengthPolicy::from_ratio((1 + rng() % 100) / 100.0)
                              : LengthPolicy::from_fixed(1 + static_cast<int>(rng() % 50));
    LengthSpec spec = compute_length_spec(ex, policy);
    std::string prompt = render(tmpl, ex, spec);
    int parsed_src = 0, parsed_keep = 0, parsed_del = 0;
    ASSERT_EQ(std::sscanf(prompt.c_str(),
                          "Sentence that consists of %d words:", &parsed_src), 1);
    std::size_t tail = prompt.find("The sentence that consists of ");
    ASSERT_NE(tail, std::string::npos);
    ASSERT_EQ(std::sscanf(prompt.c_str() + tail,
                          "The sentence that consists of %d words without the less important %d",
                          &parsed_keep, &parsed_del), 2);
    EXPECT_EQ(parsed_src, parsed_keep + parsed_del);
    EXPECT_EQ(parsed_src, spec.src_len);
  }
}
