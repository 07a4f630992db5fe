#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tedlast/attack_forge.hpp"
#include "tedlast/eval_harness.hpp"
#include "test_support.hpp"

using namespace tedlast;
using tedlast::test_util::TempDir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& stdout_file = "/dev/null") {
  const std::string cmd = std::string(TEDLAST_CLI) + " " + args + " > '" +
                          stdout_file.string() + "' 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

SynthConfig small_config() {
  SynthConfig c;
  c.num_classes = 3;
  c.num_layers = 5;
  c.dim = 3;
  c.samples_per_class = 40;
  c.malicious_count = 25;
  c.seed = 12;
  return c;
}

/// Writes a synthetic config and generates clean and malicious dumps.
fs::path synth(const TempDir& tmp, const SynthConfig& c = small_config()) {
  write_file_text(tmp / "synth.json", synth_config_to_json(c).dump(2));
  EXPECT_EQ(run("synth --config " + q(tmp / "synth.json") + " --out " + q(tmp / "synth")), 0);
  return tmp / "synth";
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out.emplace_back(fs::relative(e.path(), root).string(), read_file_text(e.path()));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Cli, FitThenDetectWritesOneRowPerQuery) {
  TempDir tmp;
  const auto d = synth(tmp);
  ASSERT_EQ(run("fit --ref " + q(d / "clean") + " --out " + q(tmp / "b.bin")), 0);
  ASSERT_EQ(run("detect --bundle " + q(tmp / "b.bin") + " --queries " + q(d / "malicious") +
                " --ref " + q(d / "clean") + " --report " + q(tmp / "r.tsv")),
            0);
  EXPECT_EQ(count_lines(read_file_text(tmp / "r.tsv")), 1u + 25u);

  ASSERT_EQ(run("--json detect --bundle " + q(tmp / "b.bin") + " --queries " +
                    q(d / "malicious") + " --ref " + q(d / "clean") + " --report " +
                    q(tmp / "r.json"),
                tmp / "summary.json"),
            0);
  const auto report = nlohmann::json::parse(read_file_text(tmp / "r.json"));
  EXPECT_EQ(report.at("samples").size(), 25u);
  const auto summary = nlohmann::json::parse(read_file_text(tmp / "summary.json"));
  EXPECT_EQ(summary.at("queries"), 25);
}

TEST(Cli, AlphaOutOfRangeIsUsageError) {
  TempDir tmp;
  const auto d = synth(tmp);
  EXPECT_EQ(run("fit --ref " + q(d / "clean") + " --alpha 0.9 --out " + q(tmp / "b.bin")), 2);
  EXPECT_FALSE(fs::exists(tmp / "b.bin"));
  EXPECT_EQ(run("fit --ref " + q(d / "clean") + " --mode bogus --out " + q(tmp / "b.bin")), 2);
  EXPECT_EQ(run("fit --out " + q(tmp / "b.bin")), 2);
  EXPECT_EQ(run("nonsense"), 2);
}

TEST(Cli, DifferentReferenceIsIntegrityError) {
  TempDir tmp;
  const auto d = synth(tmp);
  auto other = small_config();
  other.seed = 13;
  write_dump(synth_dynamics(other).clean, tmp / "other");
  ASSERT_EQ(run("fit --ref " + q(d / "clean") + " --out " + q(tmp / "b.bin")), 0);
  EXPECT_EQ(run("detect --bundle " + q(tmp / "b.bin") + " --queries " + q(d / "malicious") +
                " --ref " + q(tmp / "other") + " --report " + q(tmp / "r.tsv")),
            3);
}

TEST(Cli, CorruptBundleIsIntegrityError) {
  TempDir tmp;
  const auto d = synth(tmp);
  ASSERT_EQ(run("fit --ref " + q(d / "clean") + " --out " + q(tmp / "b.bin")), 0);
  auto bytes = read_file_bytes(tmp / "b.bin");
  bytes[bytes.size() / 2] ^= 0x40;
  write_file_bytes(tmp / "b.bin", bytes);
  EXPECT_EQ(run("detect --bundle " + q(tmp / "b.bin") + " --queries " + q(d / "malicious") +
                " --ref " + q(d / "clean") + " --report " + q(tmp / "r.tsv")),
            3);
}

TEST(Cli, EmptyQueryDumpIsUsageError) {
  TempDir tmp;
  const auto d = synth(tmp);
  ASSERT_EQ(run("fit --ref " + q(d / "clean") + " --out " + q(tmp / "b.bin")), 0);
  fs::copy(d / "malicious", tmp / "empty", fs::copy_options::recursive);
  auto m = nlohmann::ordered_json::parse(read_file_text(tmp / "empty" / "manifest.json"));
  m["num_samples"] = 0;
  write_file_text(tmp / "empty" / "manifest.json", m.dump(2) + "\n");
  EXPECT_EQ(run("detect --bundle " + q(tmp / "b.bin") + " --queries " + q(tmp / "empty") +
                " --ref " + q(d / "clean") + " --report " + q(tmp / "r.tsv")),
            2);
}

TEST(Cli, SynthIsReproducible) {
  TempDir a, b;
  synth(a);
  synth(b);
  const auto ta = tree(a / "synth"), tb = tree(b / "synth");
  ASSERT_FALSE(ta.empty());
  EXPECT_EQ(ta, tb);
  EXPECT_EQ(run("synth --config " + q(a / "synth.json") + " --seed 99 --out " + q(b / "s2")), 0);
  EXPECT_NE(read_dump(b / "s2" / "clean"), read_dump(a / "synth" / "clean"));
}

TEST(Cli, SmallClassIsReportedInFitSummary) {
  TempDir tmp;
  std::mt19937_64 rng(3);
  auto dump = tedlast::test_util::random_dump(rng, 40, 3, 4, 3);
  for (std::size_t i = 0; i < dump.num_samples; ++i) {
    dump.predicted_labels[i] = i < 3 ? 2u : static_cast<std::uint32_t>(i % 2);
  }
  dump.true_labels = dump.predicted_labels;
  write_dump(dump, tmp / "ref");
  ASSERT_EQ(run("--json fit --ref " + q(tmp / "ref") + " --out " + q(tmp / "b.bin"),
                tmp / "summary.json"),
            0);
  const auto s = nlohmann::json::parse(read_file_text(tmp / "summary.json"));
  EXPECT_EQ(s.at("unsupported_classes"), nlohmann::json::array({2}));
  EXPECT_FALSE(s.at("warnings").empty());
  EXPECT_EQ(s.at("detectors").size(), 2u);
}

TEST(Cli, PoisonOnePercentOfFiftyThousand) {
  TempDir tmp;
  ImageDataset d;
  d.num_classes = 10;
  d.channels = 1;
  d.height = 4;
  d.width = 4;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (std::size_t i = 0; i < 50000; ++i) {
    for (std::size_t p = 0; p < 16; ++p) d.pixels.push_back(u(rng));
    d.labels.push_back(static_cast<std::uint32_t>(i % 10));
  }
  write_dataset(d, tmp / "clean");
  const auto spec = nlohmann::json::parse(R"({
    "trigger": {"kind": "blend", "pattern": {"type": "checkerboard"}, "beta": 0.2},
    "mapping": [{"source": "ANY", "beta": "ANY", "target": 0}],
    "poison_rates": [0.01],
    "tricks": {"laundry": false, "slow_release": false},
    "seed": 4
  })");
  write_file_text(tmp / "spec.json", spec.dump());
  ASSERT_EQ(run("poison --config " + q(tmp / "spec.json") + " --in " + q(tmp / "clean") +
                " --out " + q(tmp / "out") + " --attack-out " + q(tmp / "attack")),
            0);
  EXPECT_EQ(read_dataset(tmp / "out").size(), 500u);
  EXPECT_EQ(read_provenance(tmp / "out").size(), 500u);
  EXPECT_EQ(read_dataset(tmp / "attack").size(), 50000u);

  write_file_text(tmp / "bad.json", "{ not json");
  EXPECT_EQ(run("poison --config " + q(tmp / "bad.json") + " --in " + q(tmp / "clean") +
                " --out " + q(tmp / "o2")),
            2);
}

TEST(Cli, CtdRatioSuiteWritesOneCurvePerMode) {
  TempDir tmp;
  auto c = small_config();
  c.samples_per_class = 60;
  write_file_text(tmp / "synth.json", synth_config_to_json(c).dump(2));
  ASSERT_EQ(run("eval --suite ctd-ratio --config " + q(tmp / "synth.json") +
                " --reference-per-class 30 --ratios 1,2 --out " + q(tmp / "ev")),
            0);
  EXPECT_TRUE(fs::exists(tmp / "ev" / "ctd_ratio_tedlast.tsv"));
  EXPECT_TRUE(fs::exists(tmp / "ev" / "ctd_ratio_ted-classwise.tsv"));
  const auto r = nlohmann::json::parse(read_file_text(tmp / "ev" / "results.json"));
  EXPECT_EQ(r.at("results").size(), 2u);
  EXPECT_EQ(r.at("curves").size(), 2u);
}

TEST(Cli, MetricsSuiteFromDumps) {
  TempDir tmp;
  auto c = small_config();
  c.samples_per_class = 60;
  const auto s = make_scenario(c, 30);
  write_dump(s.reference, tmp / "ref");
  std::vector<std::size_t> clean_rows, mal_rows;
  for (std::size_t i = 0; i < s.malicious.size(); ++i) {
    (s.malicious[i] ? mal_rows : clean_rows).push_back(i);
  }
  write_dump(select_rows(s.queries, clean_rows), tmp / "clean");
  write_dump(select_rows(s.queries, mal_rows), tmp / "mal");
  ASSERT_EQ(run("eval --suite metrics --ref " + q(tmp / "ref") + " --clean-queries " +
                q(tmp / "clean") + " --malicious-queries " + q(tmp / "mal") + " --out " +
                q(tmp / "ev")),
            0);
  const auto r = nlohmann::json::parse(read_file_text(tmp / "ev" / "results.json"));
  ASSERT_EQ(r.at("results").size(), 3u);
  const auto direct = evaluate_mode(s.reference, s.queries, s.malicious,
                                    DetectorMode::kClassWeighted);
  EXPECT_DOUBLE_EQ(r.at("results").at(0).at("auroc").get<double>(), direct.auroc);
  EXPECT_EQ(run("eval --suite metrics --ref " + q(tmp / "ref") + " --out " + q(tmp / "e2")), 2);
}
