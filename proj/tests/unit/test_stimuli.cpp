#include <set>

#include "test_support.hpp"

using namespace loclesion;
using namespace loclesion::stimuli;
using testing_support::TempDir;

TEST(SplitMix64, MatchesReferenceSequence) {
  // First outputs of splitmix64 seeded with 0, as published with the algorithm.
  SplitMix64 rng(0);
  EXPECT_EQ(rng.next(), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(rng.next(), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(rng.next(), 0x06C45D188009454Full);
}

TEST(SplitMix64, BelowStaysInRange) {
  SplitMix64 rng(99);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(rng.below(7), 7u);
  for (int i = 0; i < 1000; ++i) {
    const float u = rng.unit();
    EXPECT_GE(u, 0.0f);
    EXPECT_LT(u, 1.0f);
  }
}

TEST(MdStimuli, SeededFixtureMatchesOracle) {
  const auto [hard, easy] = gen_md_problems(42, 3);
  ASSERT_EQ(hard.size(), 3u);
  EXPECT_EQ(hard[0], (ArithmeticProblem{184, 104, Operator::Add, Difficulty::Hard}));
  EXPECT_EQ(hard[1], (ArithmeticProblem{186, 152, Operator::Sub, Difficulty::Hard}));
  EXPECT_EQ(hard[2], (ArithmeticProblem{156, 146, Operator::Sub, Difficulty::Hard}));
  EXPECT_EQ(easy[0], (ArithmeticProblem{7, 14, Operator::Add, Difficulty::Easy}));
  EXPECT_EQ(easy[1], (ArithmeticProblem{2, 3, Operator::Add, Difficulty::Easy}));
  EXPECT_EQ(easy[2], (ArithmeticProblem{14, 14, Operator::Add, Difficulty::Easy}));

  const auto set = gen_md_stimuli(42, 3);
  EXPECT_EQ(set.positives[0].text, "What is 184 plus 104?");
  EXPECT_EQ(set.positives[0].id, "md-hard-0000");
  EXPECT_EQ(set.negatives[2].text, "What is 14 plus 14?");
  EXPECT_EQ(set.negatives[2].id, "md-easy-0002");
}

TEST(MdStimuli, HundredPerCondition) {
  const auto set = gen_md_stimuli(7, 100);
  EXPECT_EQ(set.positives.size(), 100u);
  EXPECT_EQ(set.negatives.size(), 100u);
  EXPECT_EQ(set.localizer, Localizer::MD);
  for (const auto& s : set.positives) EXPECT_EQ(s.condition, StimulusCondition::Positive);
  for (const auto& s : set.negatives) EXPECT_EQ(s.condition, StimulusCondition::Negative);
}

TEST(MdStimuli, Deterministic) {
  EXPECT_EQ(to_jsonl(gen_md_stimuli(5, 50).positives), to_jsonl(gen_md_stimuli(5, 50).positives));
  EXPECT_NE(to_jsonl(gen_md_stimuli(5, 50).positives), to_jsonl(gen_md_stimuli(6, 50).positives));
}

TEST(MdStimuli, OperandRangesOverTenThousandDraws) {
  const auto [hard, easy] = gen_md_problems(2024, 10000);
  std::set<int> hard_seen, easy_seen;
  for (const auto& p : hard) {
    ASSERT_GE(p.lhs, 100);
    ASSERT_LE(p.lhs, 200);
    ASSERT_GE(p.rhs, 100);
    ASSERT_LE(p.rhs, 200);
    hard_seen.insert(p.lhs);
  }
  for (const auto& p : easy) {
    ASSERT_GE(p.lhs, 1);
    ASSERT_LE(p.lhs, 20);
    ASSERT_GE(p.rhs, 1);
    ASSERT_LE(p.rhs, 20);
    easy_seen.insert(p.rhs);
  }
  EXPECT_EQ(hard_seen.size(), 101u);
  EXPECT_EQ(easy_seen.size(), 20u);
}

TEST(MdStimuli, OperatorBalance) {
  const auto [hard, easy] = gen_md_problems(31337, 10000);
  for (const auto* list : {&hard, &easy}) {
    const auto adds = std::count_if(list->begin(), list->end(), [](const auto& p) { return p.op == Operator::Add; });
    EXPECT_LT(std::abs(static_cast<double>(adds) / 10000.0 - 0.5), 0.02);
  }
}

TEST(MdStimuli, RejectsTooFew) { EXPECT_LL_ERROR(gen_md_stimuli(1, 1), ErrorCode::EmptyCondition); }

TEST(MdStimuli, ExtraFieldsDescribeProblem) {
  const auto set = gen_md_stimuli(42, 3);
  EXPECT_EQ(set.positives[1].extra["lhs"], 186);
  EXPECT_EQ(set.positives[1].extra["op"], "minus");
}

TEST(RenderPrompt, IdentityTemplate) {
  Stimulus s{"x", StimulusCondition::Positive, "T", {}};
  EXPECT_EQ(render_prompt(s, PromptTemplate("{body}")), "T");
}

TEST(RenderPrompt, DefaultMdTemplateIsPrefixPlusText) {
  Stimulus s{"x", StimulusCondition::Positive, "What is 157 plus 189?", {}};
  EXPECT_EQ(render_prompt(s, default_md_template()), "Solve the following problem.\nWhat is 157 plus 189?");
}

TEST(RenderPrompt, TemplateErrors) {
  EXPECT_LL_ERROR(PromptTemplate("no placeholder"), ErrorCode::TemplateError);
  EXPECT_LL_ERROR(PromptTemplate("{body}{body}"), ErrorCode::TemplateError);
  EXPECT_EQ(PromptTemplate("<{body}>").render("a{body}b"), "<a{body}b>");
}

TEST(StimulusFiles, RoundTripKeepsExtrasAndOrder) {
  TempDir dir;
  auto set = gen_md_stimuli(3, 4);
  set.positives[0].extra["note"] = "kept";
  write_stimulus_set(set, dir / "all.jsonl");
  const auto loaded = load_stimuli({dir / "all.jsonl"}, Localizer::MD);
  EXPECT_EQ(loaded.positives, set.positives);
  EXPECT_EQ(loaded.negatives, set.negatives);
  EXPECT_EQ(to_jsonl(loaded.positives), to_jsonl(set.positives));
}

TEST(StimulusFiles, ExtraKeysKeepFileOrder) {
  const auto parsed = parse_stimuli_jsonl(R"({"zeta":1,"id":"a","alpha":2,"condition":"positive","text":"t"})", "x");
  EXPECT_EQ(to_jsonl(parsed), "{\"id\":\"a\",\"condition\":\"positive\",\"text\":\"t\",\"zeta\":1,\"alpha\":2}\n");
}

TEST(StimulusFiles, LoaderPreservesFileOrder) {
  TempDir dir;
  const std::string text =
      "{\"id\":\"n2\",\"condition\":\"negative\",\"text\":\"b\"}\n"
      "{\"id\":\"p9\",\"condition\":\"positive\",\"text\":\"a\"}\n"
      "{\"id\":\"n1\",\"condition\":\"negative\",\"text\":\"c\"}\n"
      "\n"
      "{\"id\":\"p1\",\"condition\":\"positive\",\"text\":\"d\"}\n";
  write_file_atomic(dir / "s.jsonl", text);
  const auto set = load_stimuli({dir / "s.jsonl"}, Localizer::ToM);
  EXPECT_EQ(set.positives[0].id, "p9");
  EXPECT_EQ(set.positives[1].id, "p1");
  EXPECT_EQ(set.negatives[0].id, "n2");
  EXPECT_EQ(set.negatives[1].id, "n1");
}

TEST(TomStimuli, BundledSyntheticSetIsTenByTen) {
  std::vector<std::string> warnings;
  const auto set = load_tom_stimuli(testing_support::data_dir() / "tom_synthetic.jsonl", &warnings);
  EXPECT_EQ(set.positives.size(), 10u);
  EXPECT_EQ(set.negatives.size(), 10u);
  EXPECT_TRUE(warnings.empty());
  for (const auto& s : set.positives) EXPECT_EQ(s.extra["synthetic"], true);
}

TEST(TomStimuli, WarnsOnUnusualCounts) {
  TempDir dir;
  auto set = gen_md_stimuli(1, 3);
  write_stimulus_set(set, dir / "s.jsonl");
  std::vector<std::string> warnings;
  const auto loaded = load_tom_stimuli(dir / "s.jsonl", &warnings);
  EXPECT_EQ(loaded.positives.size(), 3u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("3/3"), std::string::npos);
}

TEST(TomStimuli, Errors) {
  TempDir dir;
  EXPECT_LL_ERROR(load_tom_stimuli(dir / "absent.jsonl"), ErrorCode::MissingFile);

  write_file_atomic(dir / "one.jsonl",
                    "{\"id\":\"a\",\"condition\":\"positive\",\"text\":\"x\"}\n"
                    "{\"id\":\"b\",\"condition\":\"negative\",\"text\":\"y\"}\n"
                    "{\"id\":\"c\",\"condition\":\"negative\",\"text\":\"z\"}\n");
  EXPECT_LL_ERROR(load_tom_stimuli(dir / "one.jsonl"), ErrorCode::EmptyCondition);

  write_file_atomic(dir / "nocond.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n");
  EXPECT_LL_ERROR(load_tom_stimuli(dir / "nocond.jsonl"), ErrorCode::SchemaError);

  write_file_atomic(dir / "junk.jsonl", "{\"id\":\"a\",\n");
  EXPECT_LL_ERROR(load_tom_stimuli(dir / "junk.jsonl"), ErrorCode::SchemaError);

  write_file_atomic(dir / "badcond.jsonl", "{\"id\":\"a\",\"condition\":\"maybe\",\"text\":\"x\"}\n");
  EXPECT_LL_ERROR(load_tom_stimuli(dir / "badcond.jsonl"), ErrorCode::SchemaError);
}

TEST(TomStimuli, SchemaErrorNamesLine) {
  try {
    parse_stimuli_jsonl("{\"id\":\"a\",\"condition\":\"positive\",\"text\":\"x\"}\n{}\n", "f.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("f.jsonl:2"), std::string::npos);
  }
}

TEST(TomStimuli, DuplicateIdsRejected) {
  TempDir dir;
  auto set = gen_md_stimuli(1, 2);
  write_stimulus_set(set, dir / "a.jsonl");
  EXPECT_LL_ERROR(load_stimuli({dir / "a.jsonl", dir / "a.jsonl"}, Localizer::MD), ErrorCode::SchemaError);
}
