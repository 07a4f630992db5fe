#include <gtest/gtest.h>

#include "forge_fixtures.hpp"
#include "tedlast/attack_forge.hpp"
#include "test_support.hpp"

using namespace tedlast;
using tedlast::test_util::TempDir;
namespace ff = tedlast::forge_fixtures;

namespace {

ImageSample flat(float v, std::uint32_t label = 0) {
  return {Image(1, 4, 4, v), label};
}

std::map<std::string, std::vector<unsigned char>> files_in(const std::filesystem::path& dir) {
  std::map<std::string, std::vector<unsigned char>> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    out[e.path().filename().string()] = read_file_bytes(e.path());
  }
  return out;
}

}  // namespace

TEST(Blend, ConvexCombination) {
  const auto out = apply_blend(flat(0.5f), Image(1, 4, 4, 1.0f), 0.2);
  for (float v : out.image.pixels) EXPECT_FLOAT_EQ(v, 0.6f);
  EXPECT_EQ(apply_blend(flat(0.3f), Image(1, 4, 4, 1.0f), 0.0), flat(0.3f));
  EXPECT_THROW(apply_blend(flat(0.3f), Image(1, 4, 4, 1.0f), 1.5), Error);
  EXPECT_THROW(apply_blend(flat(0.3f), Image(1, 3, 4, 1.0f), 0.5), Error);
}

TEST(Patch, OverwritesRectangleOnly) {
  const auto out = apply_patch(flat(0.0f), Image(1, 2, 2, 1.0f), {1, 2});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const bool inside = r >= 1 && r < 3 && c >= 2;
      EXPECT_EQ(out.image.at(0, r, c), inside ? 1.0f : 0.0f);
    }
  }
  EXPECT_THROW(apply_patch(flat(0.0f), Image(1, 2, 2, 1.0f), {3, 0}), Error);
}

TEST(Segments, SampleExactCountAndCoverHalfThePixels) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto m = sample_segments(4, 4, 8, rng);
    EXPECT_EQ(m.count(), 8u);
    std::size_t covered = 0;
    for (std::size_t r = 0; r < 32; ++r) {
      for (std::size_t c = 0; c < 32; ++c) covered += m.covers(r, c, 32, 32);
    }
    EXPECT_EQ(covered, 512u);
  }
  EXPECT_THROW(sample_segments(4, 4, 17, rng), Error);
}

TEST(TriggerMask, MaskedBlendLeavesUnselectedCellsAlone) {
  TriggerSpec t;
  t.pattern = Image(1, 4, 4, 1.0f);
  SegmentMask m{4, 4, std::vector<bool>(16, false)};
  m.cells[5] = true;
  const auto out = apply_trigger(flat(0.0f), t, 1.0, m);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(out.image.at(0, r, c), (r == 1 && c == 1) ? 1.0f : 0.0f);
    }
  }
}

TEST(TriggerMask, FullStrengthPatchEqualsOverwrite) {
  TriggerSpec t;
  t.kind = TriggerKind::kPatch;
  t.pattern = Image(1, 2, 2, 0.75f);
  t.anchor = {2, 2};
  const auto a = apply_trigger(flat(0.1f), t, 1.0, SegmentMask::full(4, 4));
  EXPECT_EQ(a, apply_patch(flat(0.1f), t.pattern, t.anchor));
}

TEST(TargetMap, LookupPrecedence) {
  MappingTable ss{{{0u, std::nullopt, 3}}};
  EXPECT_EQ(target_map(ss, 0, std::nullopt), 3u);
  EXPECT_EQ(target_map(ss, 0, 0.4), 3u);
  EXPECT_EQ(target_map(ss, 1, std::nullopt), std::nullopt);

  MappingTable ta{{{0u, 0.4, 3}, {0u, 0.6, 7}}};
  EXPECT_EQ(target_map(ta, 0, 0.6), 7u);
  EXPECT_EQ(target_map(ta, 0, 0.4), 3u);
  EXPECT_EQ(target_map(ta, 0, 0.5), std::nullopt);

  MappingTable layered{{{std::nullopt, std::nullopt, 1},
                        {std::nullopt, 0.5, 2},
                        {4u, std::nullopt, 3},
                        {4u, 0.5, 4}}};
  EXPECT_EQ(target_map(layered, 4, 0.5), 4u);
  EXPECT_EQ(target_map(layered, 4, 0.9), 3u);
  EXPECT_EQ(target_map(layered, 2, 0.5), 2u);
  EXPECT_EQ(target_map(layered, 2, 0.9), 1u);
}

TEST(TargetMap, ValidationRejectsDuplicatesAndRange) {
  MappingTable dup{{{0u, 0.4, 3}, {0u, 0.4, 5}}};
  EXPECT_THROW(validate(dup, 10), Error);
  MappingTable range{{{0u, std::nullopt, 10}}};
  EXPECT_THROW(validate(range, 10), Error);
  MappingTable ok{{{0u, 0.4, 3}, {0u, std::nullopt, 5}}};
  EXPECT_NO_THROW(validate(ok, 10));
}

TEST(PoisonSet, SourceSpecificAllSamplesOfSource) {
  ImageDataset d;
  d.num_classes = 4;
  d.channels = 1;
  d.height = 4;
  d.width = 4;
  for (int i = 0; i < 10; ++i) d.push_back(flat(0.2f, 0));
  for (int i = 0; i < 5; ++i) d.push_back(flat(0.2f, 1));
  PoisonSpec spec;
  spec.trigger.pattern = Image(1, 4, 4, 1.0f);
  spec.mapping.rules = {{0u, std::nullopt, 3}};
  spec.poison_rates = {1.0};
  std::mt19937_64 rng(1);
  const auto p = build_poison_set(d, spec, rng);
  ASSERT_EQ(p.data.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(p.data.labels[i], 3u);
    EXPECT_TRUE(p.provenance[i].mask.is_full());
    EXPECT_EQ(p.provenance[i].original_label, 0u);
  }
}

TEST(PoisonSet, RateOnePercentOfFiftyThousand) {
  ImageDataset d;
  d.num_classes = 10;
  d.channels = 1;
  d.height = 1;
  d.width = 1;
  d.pixels.assign(50000, 0.5f);
  for (std::uint32_t i = 0; i < 50000; ++i) d.labels.push_back(i % 10);
  PoisonSpec spec;
  spec.trigger.pattern = Image(1, 1, 1, 1.0f);
  spec.trigger.grid_rows = spec.trigger.grid_cols = 1;
  spec.trigger.train_segment_count = 1;
  spec.mapping.rules = {{std::nullopt, std::nullopt, 0}};
  spec.poison_rates = {0.01};
  EXPECT_EQ(forge(d, spec).poison.data.size(), 500u);
}

TEST(PoisonSet, InsufficientLaundryPoolIsUsageError) {
  ImageDataset d;
  d.num_classes = 2;
  d.channels = 1;
  d.height = 4;
  d.width = 4;
  for (int i = 0; i < 10; ++i) d.push_back(flat(0.2f, 0));
  d.push_back(flat(0.2f, 1));
  PoisonSpec spec;
  spec.trigger.pattern = Image(1, 4, 4, 1.0f);
  spec.mapping.rules = {{0u, std::nullopt, 1}};
  spec.poison_rates = {0.5};
  spec.laundry = true;
  try {
    forge(d, spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUsage);
  }
}

TEST(PoisonSpecValidation, SlowReleaseNeedsIntensities) {
  auto spec = ff::make_spec({"SR", ff::Mapping::kBasic, false, true});
  spec.trigger.intensity_set.clear();
  EXPECT_THROW(validate(spec, 5), Error);
  spec = ff::make_spec({"SR", ff::Mapping::kBasic, false, true});
  spec.trigger.inference_map.pop_back();
  EXPECT_THROW(validate(spec, 5), Error);
}

class TrickCombination : public ::testing::TestWithParam<ff::Setting> {};

TEST_P(TrickCombination, AuditPassesAndRerunIsByteIdentical) {
  const auto& s = GetParam();
  const auto clean = ff::clean_dataset();
  const auto spec = ff::make_spec(s);
  const auto r = forge(clean, spec);
  std::mt19937_64 rng(spec.seed + 1);
  const auto attack = build_attack_set(clean, spec, rng);
  const auto audit = ff::audit(s, clean, spec, r, attack);
  for (const auto& p : audit.problems) ADD_FAILURE() << p;

  TempDir a, b;
  emit_dataset(r.poison, r.laundry, a.path(), 5);
  const auto again = forge(clean, spec);
  emit_dataset(again.poison, again.laundry, b.path(), 5);
  EXPECT_EQ(files_in(a.path()), files_in(b.path()));

  const auto back = read_dataset(a.path());
  EXPECT_EQ(back.size(), r.poison.data.size() + r.laundry.data.size());
  EXPECT_EQ(read_provenance(a.path()).size(), back.size());
}

INSTANTIATE_TEST_SUITE_P(
    AllSettings, TrickCombination, ::testing::ValuesIn(ff::all_settings()),
    [](const ::testing::TestParamInfo<ff::Setting>& info) {
      std::string n = info.param.name;
      for (auto& ch : n) {
        if (ch == '+') ch = '_';
        if (ch == '&') ch = 'x';
      }
      return n;
    });

TEST(Settings, TwelveDistinctCombinations) {
  const auto all = ff::all_settings();
  ASSERT_EQ(all.size(), 12u);
  std::set<std::string> names;
  for (const auto& s : all) names.insert(s.name);
  EXPECT_EQ(names, (std::set<std::string>{"B", "L", "SR", "L+SR", "SS", "SS+L", "SS+SR",
                                          "SS+L+SR", "SS&TA", "SS&TA+L", "SS&TA+SR",
                                          "SS&TA+L+SR"}));
}

TEST(DatasetIo, RoundTripAndTruncation) {
  TempDir tmp;
  const auto d = ff::clean_dataset();
  write_dataset(d, tmp.path());
  EXPECT_EQ(read_dataset(tmp.path()), d);
  auto bytes = read_file_bytes(tmp / "labels.u32");
  bytes.resize(bytes.size() - 4);
  write_file_bytes(tmp / "labels.u32", bytes);
  try {
    read_dataset(tmp.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIntegrity);
  }
}

TEST(SpecJson, ParsesAllFields) {
  const auto j = nlohmann::json::parse(R"({
    "trigger": {"kind": "patch", "pattern": {"type": "checkerboard"},
                "pattern_shape": [3, 2, 2], "anchor": [5, 6], "grid": [2, 2],
                "train_segment_count": 2, "beta": 0.9,
                "intensity_set": [0.2], "inference_map": [[0.2, 0.4]]},
    "mapping": [{"source": 1, "beta": 0.4, "target": 0},
                {"source": "ANY", "beta": "ANY", "target": 2}],
    "poison_rates": [0.5, 0.01],
    "tricks": {"laundry": true, "slow_release": true},
    "seed": 12
  })");
  const auto spec = parse_poison_spec(j, 3, 8, 8);
  EXPECT_EQ(spec.trigger.kind, TriggerKind::kPatch);
  EXPECT_EQ(spec.trigger.anchor, (Anchor{5, 6}));
  EXPECT_EQ(spec.trigger.pattern.at(0, 0, 1), 1.0f);
  EXPECT_EQ(spec.trigger.grid_rows, 2u);
  EXPECT_EQ(spec.mapping.rules[0], (MappingRule{1u, 0.4, 0}));
  EXPECT_EQ(spec.mapping.rules[1], (MappingRule{std::nullopt, std::nullopt, 2}));
  EXPECT_TRUE(spec.laundry && spec.slow_release);
  EXPECT_EQ(spec.seed, 12u);
  EXPECT_EQ(spec.trigger.inference_beta(0.2), 0.4);
}

TEST(SpecJson, MalformedOrOutOfBoundsIsUsageError) {
  const auto missing = nlohmann::json::parse(R"({"trigger": {"kind": "blend"}})");
  EXPECT_THROW(parse_poison_spec(missing, 3, 8, 8), Error);
  const auto outside = nlohmann::json::parse(R"({
    "trigger": {"kind": "patch", "pattern": {"type": "constant", "value": 1},
                "pattern_shape": [3, 4, 4], "anchor": [6, 6]},
    "mapping": [{"source": 0, "beta": "ANY", "target": 1}],
    "poison_rates": [0.1], "tricks": {}})");
  try {
    parse_poison_spec(outside, 3, 8, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUsage);
  }
}
