#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <limits>
#include <random>

#include "test_support.hpp"

namespace {

using namespace loclesion;
using testing_support::TempDir;
namespace fs = std::filesystem;

fs::path fixture(const std::string& name) { return fs::path(LOCLESION_TEST_DIR) / "fixtures" / name; }

localizer::TMap random_tmap(std::mt19937_64& rng, std::uint32_t m, std::uint32_t h) {
  std::normal_distribution<double> n(0.0, 5.0);
  localizer::TMap map;
  map.model_id = "toy-" + std::to_string(rng() % 100);
  map.blocks = m;
  map.hidden = h;
  map.n_pos = 3 + static_cast<std::uint32_t>(rng() % 50);
  map.n_neg = 3 + static_cast<std::uint32_t>(rng() % 50);
  map.localizer = static_cast<Localizer>(rng() % 3);
  map.t.resize(static_cast<std::size_t>(m) * h);
  for (double& v : map.t) v = n(rng);
  if (!map.t.empty()) map.t[0] = 1e30;
  return map;
}

harness::EvalResult random_eval(std::mt19937_64& rng, std::size_t n_items) {
  harness::EvalResult r;
  r.model_id = "toy-a";
  r.benchmark_id = "bench-" + std::to_string(rng() % 7);
  r.template_hash = std::string(64, 'a');
  if (rng() % 2) {
    r.mask = harness::MaskProvenance{Selection::Random, Percent::from_double(1.0), Localizer::None, rng(), 41};
  }
  for (std::size_t i = 0; i < n_items; ++i) {
    harness::ItemOutcome o;
    o.item_id = "item-" + std::to_string(i);
    switch (rng() % 3) {
      case 0: o.letter = static_cast<char>('A' + rng() % 6); o.raw_token = std::string(" ") + *o.letter; break;
      case 1: o.raw_token = " the"; break;
      default: o.raw_token = ""; o.error = "prompt of 300 tokens exceeds max_seq 256"; break;
    }
    o.correct = o.letter && rng() % 2;
    r.correct += o.correct;
    r.items.push_back(std::move(o));
  }
  r.total = r.items.size();
  return r;
}

analysis::ExperimentSummary small_summary() {
  analysis::ExperimentSummary s;
  s.series.push_back({"tom_fixture", Localizer::ToM, Selection::Top, Percent::from_double(1.0),
                      {{"toy-a", -0.25, 1}, {"toy-b", -0.1, 1}}});
  s.series.push_back({"tom_fixture", Localizer::None, Selection::Random, Percent::from_double(1.0),
                      {{"toy-a", -0.0333333333333, 15}, {"toy-b", 0.02, 15}}});
  s.comparisons.push_back(
      {"top vs random on tom_fixture (tom localizer)", s.series[0].deltas, s.series[1].deltas, -1.7, 0.338, 1,
       analysis::Stars::NotSignificant});
  s.notes.push_back("only two models");
  return s;
}

template <class F>
void expect_typed_error_only(F&& f) {
  try {
    f();
  } catch (const Error&) {
  } catch (const std::exception& e) {
    FAIL() << "untyped exception: " << e.what();
  }
}

// ---------------------------------------------------------------------------

TEST(TraceIo, RoundTripRandomized) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = 1 + static_cast<std::uint32_t>(rng() % 5), h = 1 + static_cast<std::uint32_t>(rng() % 40);
    auto t = testing_support::random_trace(rng, m, h, rng() % 6,
                                           trial % 2 ? StimulusCondition::Negative : StimulusCondition::Positive);
    t.model_id = "model/" + std::to_string(trial);
    EXPECT_EQ(io::decode_trace(io::encode(t)), t);
  }
}

TEST(TraceIo, SingleRecordLayout) {
  localizer::ActivationTrace t;
  t.model_id = "x";
  t.blocks = 1;
  t.hidden = 2;
  t.records.push_back({"s", {1.0f, 2.0f}});
  const std::string bytes = io::encode(t);
  // magic 4, version 4, id 4+1, M 4, H 4, cond 1, count 4, stimulus id 4+1, then the floats
  const std::size_t header = 4 + 4 + 5 + 4 + 4 + 1 + 4 + 5;
  ASSERT_EQ(bytes.size(), header + 8);
  float a, b;
  std::memcpy(&a, bytes.data() + header, 4);
  std::memcpy(&b, bytes.data() + header + 4, 4);
  EXPECT_EQ(a, 1.0f);
  EXPECT_EQ(b, 2.0f);
  EXPECT_EQ(bytes.substr(0, 4), "LOCT");
}

TEST(TraceIo, PreservesSpecialFloatBits) {
  localizer::ActivationTrace t;
  t.model_id = "bits";
  t.blocks = 1;
  t.hidden = 4;
  t.records.push_back({"s", {-0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max(),
                             std::numeric_limits<float>::lowest()}});
  const auto back = io::decode_trace(io::encode(t));
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back.records[0].values[i]), std::bit_cast<std::uint32_t>(t.records[0].values[i]));
}

TEST(TraceIo, RejectsCorruptInput) {
  std::mt19937_64 rng(2);
  const std::string good = io::encode(testing_support::random_trace(rng, 2, 3, 2, StimulusCondition::Positive));

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_LL_ERROR(io::decode_trace(bad_magic), ErrorCode::BadMagic);

  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_LL_ERROR(io::decode_trace(bad_version), ErrorCode::UnsupportedVersion);

  EXPECT_LL_ERROR(io::decode_trace(good.substr(0, good.size() - 1)), ErrorCode::TruncatedPayload);
  EXPECT_LL_ERROR(io::decode_trace(good + "z"), ErrorCode::InvariantViolation);

  std::string nan_value = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_value.data() + nan_value.size() - 4, &nan, 4);
  EXPECT_LL_ERROR(io::decode_trace(nan_value), ErrorCode::InvariantViolation);

  // a huge record count must not allocate before the payload is checked
  std::string huge = good;
  const std::size_t count_at = 4 + 4 + 4 + 1 + 4 + 4 + 1;
  const std::uint32_t big = 0xFFFFFFFFu;
  std::memcpy(huge.data() + count_at, &big, 4);
  EXPECT_LL_ERROR(io::decode_trace(huge), ErrorCode::TruncatedPayload);
}

TEST(TraceIo, DuplicateIdsRejected) {
  localizer::ActivationTrace t;
  t.model_id = "x";
  t.blocks = 1;
  t.hidden = 1;
  t.records = {{"a", {1.0f}}, {"a", {2.0f}}};
  EXPECT_LL_ERROR(io::encode(t), ErrorCode::InvariantViolation);
}

TEST(TraceIo, ExternallyWrittenTraceIsBitIdentical) {
  const auto trace = io::load_trace(fixture("bridge_trace.loct"));
  const auto expected = nlohmann::json::parse(read_file(fixture("bridge_trace.expected.json")));
  EXPECT_EQ(trace.model_id, expected["model_id"].get<std::string>());
  EXPECT_EQ(trace.blocks, expected["M"].get<std::uint32_t>());
  EXPECT_EQ(trace.hidden, expected["H"].get<std::uint32_t>());
  ASSERT_EQ(trace.records.size(), expected["records"].size());
  for (std::size_t r = 0; r < trace.records.size(); ++r) {
    const auto& want = expected["records"][r];
    EXPECT_EQ(trace.records[r].stimulus_id, want["id"].get<std::string>());
    ASSERT_EQ(trace.records[r].values.size(), want["bits"].size());
    for (std::size_t i = 0; i < want["bits"].size(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint32_t>(trace.records[r].values[i]), want["bits"][i].get<std::uint32_t>());
  }
  // and re-encoding reproduces the external bytes exactly
  EXPECT_EQ(io::encode(trace), read_file(fixture("bridge_trace.loct")));
}

TEST(TMapIo, RoundTripRandomized) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto map = random_tmap(rng, 1 + static_cast<std::uint32_t>(rng() % 6), 1 + static_cast<std::uint32_t>(rng() % 30));
    EXPECT_EQ(io::decode_tmap(io::encode(map)), map);
  }
}

TEST(TMapIo, RejectsCorruptInput) {
  std::mt19937_64 rng(4);
  const std::string good = io::encode(random_tmap(rng, 2, 2));
  EXPECT_LL_ERROR(io::decode_tmap(good.substr(0, 3)), ErrorCode::BadMagic);
  EXPECT_LL_ERROR(io::decode_tmap(good.substr(0, good.size() - 8)), ErrorCode::TruncatedPayload);
  EXPECT_LL_ERROR(io::decode_tmap(good + std::string(8, '\0')), ErrorCode::InvariantViolation);
  std::string zero_version = good;
  zero_version[4] = 0;
  EXPECT_LL_ERROR(io::decode_tmap(zero_version), ErrorCode::UnsupportedVersion);
  // a trace is not a t-map
  EXPECT_LL_ERROR(io::decode_tmap(io::encode(testing_support::random_trace(rng, 1, 1, 1, StimulusCondition::Positive))),
                  ErrorCode::BadMagic);
}

TEST(MaskIo, RoundTripRandomized) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = 1 + static_cast<std::uint32_t>(rng() % 6), h = 1 + static_cast<std::uint32_t>(rng() % 60);
    const auto k = Percent::from_micros(1 + static_cast<std::int64_t>(rng() % (100 * Percent::kScale)));
    if (k.count_of(static_cast<std::size_t>(m) * h) == 0) continue;
    UnitMask mask;
    if (trial % 2) {
      mask = localizer::select_random(m, h, k, rng(), "toy");
    } else {
      const auto map = random_tmap(rng, m, h);
      mask = localizer::select_units(map, trial % 4 ? Selection::Top : Selection::Bottom, k);
    }
    EXPECT_EQ(io::decode_mask(io::encode(mask)), mask);
  }
}

TEST(MaskIo, RejectsOutOfRangeUnit) {
  auto j = nlohmann::json::parse(read_file(fixture("bridge_mask.json")));
  j["selected"][2] = {3, 0};  // (M, 0)
  EXPECT_LL_ERROR(io::decode_mask(j.dump()), ErrorCode::InvariantViolation);
}

TEST(MaskIo, RejectsSchemaProblems) {
  const auto base = nlohmann::json::parse(read_file(fixture("bridge_mask.json")));
  auto missing = base;
  missing.erase("selected");
  EXPECT_LL_ERROR(io::decode_mask(missing.dump()), ErrorCode::SchemaError);
  auto wrong_kind = base;
  wrong_kind["kind"] = "eval";
  EXPECT_LL_ERROR(io::decode_mask(wrong_kind.dump()), ErrorCode::BadMagic);
  auto wrong_count = base;
  wrong_count["selected"].erase(0);
  EXPECT_LL_ERROR(io::decode_mask(wrong_count.dump()), ErrorCode::InvariantViolation);
  auto unsorted = base;
  std::swap(unsorted["selected"][0], unsorted["selected"][1]);
  EXPECT_LL_ERROR(io::decode_mask(unsorted.dump()), ErrorCode::InvariantViolation);
  auto no_seed = base;
  no_seed.erase("seed");
  EXPECT_LL_ERROR(io::decode_mask(no_seed.dump()), ErrorCode::InvariantViolation);
  auto future = base;
  future["version"] = 2;
  EXPECT_LL_ERROR(io::decode_mask(future.dump()), ErrorCode::UnsupportedVersion);
  EXPECT_LL_ERROR(io::decode_mask("{not json"), ErrorCode::SchemaError);
}

TEST(MaskIo, ExternalMaskLoads) {
  const auto mask = io::load_mask(fixture("bridge_mask.json"));
  EXPECT_EQ(mask.model_id, "ext/tiny-model");
  EXPECT_EQ(mask.condition, Selection::Random);
  EXPECT_EQ(mask.seed, 99u);
  EXPECT_EQ(mask.selected, (std::vector<Unit>{{0, 1}, {1, 4}, {2, 0}}));
}

TEST(EvalIo, RoundTripRandomized) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = random_eval(rng, rng() % 30);
    EXPECT_EQ(io::decode_eval(io::encode(r)), r);
  }
}

TEST(EvalIo, ExternalResultLoadsAndReencodesCanonically) {
  const std::string bytes = read_file(fixture("bridge_eval.json"));
  const auto r = io::decode_eval(bytes);
  EXPECT_EQ(r.total, 3u);
  EXPECT_EQ(r.correct, 1u);
  EXPECT_FALSE(r.items[1].letter.has_value());
  ASSERT_TRUE(r.mask.has_value());
  EXPECT_EQ(r.mask->localizer, Localizer::ToM);
  EXPECT_EQ(io::decode_eval(io::encode(r)), r);
}

TEST(EvalIo, RejectsInconsistentCounts) {
  auto j = nlohmann::json::parse(read_file(fixture("bridge_eval.json")));
  auto wrong_total = j;
  wrong_total["total"] = 4;
  EXPECT_LL_ERROR(io::decode_eval(wrong_total.dump()), ErrorCode::InvariantViolation);
  auto wrong_accuracy = j;
  wrong_accuracy["accuracy"] = 0.5;
  EXPECT_LL_ERROR(io::decode_eval(wrong_accuracy.dump()), ErrorCode::InvariantViolation);
  auto correct_without_letter = j;
  correct_without_letter["items"][1]["correct"] = true;
  correct_without_letter["correct"] = 2;
  correct_without_letter["accuracy"] = 2.0 / 3.0;
  EXPECT_LL_ERROR(io::decode_eval(correct_without_letter.dump()), ErrorCode::InvariantViolation);
  auto dup = j;
  dup["items"][1]["id"] = "q1";
  EXPECT_LL_ERROR(io::decode_eval(dup.dump()), ErrorCode::InvariantViolation);
  auto letter_g = j;
  letter_g["items"][2]["letter"] = "G";
  EXPECT_LL_ERROR(io::decode_eval(letter_g.dump()), ErrorCode::InvariantViolation);
}

TEST(SummaryIo, RoundTrip) {
  const auto s = small_summary();
  EXPECT_EQ(io::decode_summary(io::encode(s)), s);
}

TEST(SummaryIo, RejectsInconsistentStars) {
  auto j = io::to_json(small_summary());
  j["comparisons"][0]["stars"] = "**";
  EXPECT_LL_ERROR(io::decode_summary(j.dump()), ErrorCode::InvariantViolation);
  auto misaligned = io::to_json(small_summary());
  misaligned["comparisons"][0]["df"] = 5;
  EXPECT_LL_ERROR(io::decode_summary(misaligned.dump()), ErrorCode::InvariantViolation);
}

TEST(Canonical, TwoSavesDifferOnlyInCreated) {
  TempDir dir;
  std::mt19937_64 rng(7);
  const auto r = random_eval(rng, 10);
  io::save(r, dir / "a.json");
  auto j = nlohmann::json::parse(read_file(dir / "a.json"));
  j["created"] = "1999-12-31T23:59:59Z";
  write_file_atomic(dir / "b.json", j.dump(2) + "\n");
  io::save(r, dir / "c.json");
  EXPECT_EQ(io::canonical_bytes(read_file(dir / "a.json")), io::canonical_bytes(read_file(dir / "b.json")));
  EXPECT_EQ(io::canonical_bytes(read_file(dir / "a.json")), io::canonical_bytes(read_file(dir / "c.json")));
  // binary artifacts have no timestamp and are canonical as written
  const auto map = random_tmap(rng, 2, 3);
  EXPECT_EQ(io::canonical_bytes(io::encode(map)), io::encode(map));
}

TEST(Canonical, KeysAreSorted) {
  const std::string text = io::encode(small_summary());
  EXPECT_LT(text.find("\"comparisons\""), text.find("\"created\""));
  EXPECT_LT(text.find("\"created\""), text.find("\"kind\""));
  EXPECT_LT(text.find("\"kind\""), text.find("\"series\""));
  EXPECT_EQ(text.back(), '\n');
}

TEST(PeekHeader, IdentifiesEveryKind) {
  std::mt19937_64 rng(8);
  auto trace = testing_support::random_trace(rng, 1, 2, 1, StimulusCondition::Positive);
  trace.model_id = "peek";
  EXPECT_EQ(io::peek_header(io::encode(trace)).kind, io::Kind::Trace);
  EXPECT_EQ(io::peek_header(io::encode(trace)).model_id, "peek");
  EXPECT_EQ(io::peek_header(io::encode(random_tmap(rng, 1, 1))).kind, io::Kind::TMap);
  const auto mask_header = io::peek_header(read_file(fixture("bridge_mask.json")));
  EXPECT_EQ(mask_header.kind, io::Kind::Mask);
  EXPECT_EQ(mask_header.tool_version, "bridge-0.1");
  EXPECT_EQ(mask_header.created, "2024-01-01T00:00:00Z");
  EXPECT_EQ(io::peek_header(io::encode(random_eval(rng, 2))).kind, io::Kind::Eval);
  const auto summary_header = io::peek_header(io::encode(small_summary()));
  EXPECT_EQ(summary_header.kind, io::Kind::Summary);
  EXPECT_EQ(summary_header.tool_version, kToolVersion);
  EXPECT_LL_ERROR(io::peek_header("GIF89a"), ErrorCode::BadMagic);
  EXPECT_LL_ERROR(io::peek_header(R"({"kind": "banana", "version": 1})"), ErrorCode::BadMagic);
}

TEST(Files, AtomicSaveLeavesNoTemporaryAndOverwrites) {
  TempDir dir;
  const auto s = small_summary();
  io::save(s, dir / "nested" / "report.json");
  io::save(s, dir / "nested" / "report.json");
  EXPECT_EQ(io::load_summary(dir / "nested" / "report.json"), s);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "nested")) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_LL_ERROR(io::load_trace(dir / "absent.loct"), ErrorCode::MissingFile);
}

TEST(Fuzz, ArbitraryBytesRaiseOnlyTypedErrors) {
  std::mt19937_64 rng(9);
  std::mt19937_64 data_rng(10);
  const std::vector<std::string> seeds = {
      io::encode(testing_support::random_trace(data_rng, 2, 3, 2, StimulusCondition::Negative)),
      io::encode(random_tmap(data_rng, 2, 3)),
      read_file(fixture("bridge_mask.json")),
      read_file(fixture("bridge_eval.json")),
      io::encode(small_summary()),
  };
  for (int trial = 0; trial < 10000; ++trial) {
    std::string bytes;
    if (trial % 2 == 0) {
      bytes.resize(rng() % 96);
      for (char& c : bytes) c = static_cast<char>(rng());
      if (trial % 4 == 0 && bytes.size() >= 4) bytes.replace(0, 4, trial % 8 ? "LOCT" : "LOTM");
    } else {
      // mutate a valid artifact: flip bytes and maybe truncate
      bytes = seeds[rng() % seeds.size()];
      const int flips = 1 + static_cast<int>(rng() % 4);
      for (int f = 0; f < flips; ++f) bytes[rng() % bytes.size()] = static_cast<char>(rng());
      if (rng() % 3 == 0) bytes.resize(rng() % bytes.size());
    }
    expect_typed_error_only([&] { (void)io::decode_trace(bytes); });
    expect_typed_error_only([&] { (void)io::decode_tmap(bytes); });
    expect_typed_error_only([&] { (void)io::decode_mask(bytes); });
    expect_typed_error_only([&] { (void)io::decode_eval(bytes); });
    expect_typed_error_only([&] { (void)io::decode_summary(bytes); });
    expect_typed_error_only([&] { (void)io::peek_header(bytes); });
    if (HasFailure()) break;
  }
}

}  // namespace
