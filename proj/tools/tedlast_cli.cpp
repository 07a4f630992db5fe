// tedlast: fit, detect, poison, synth and eval from the command line.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data integrity
// error, 4 internal error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tedlast/activation_store.hpp"
#include "tedlast/attack_forge.hpp"
#include "tedlast/error.hpp"
#include "tedlast/eval_harness.hpp"
#include "tedlast/outlier_detector.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using namespace tedlast;

struct Common {
  bool json_output = false;
};

void emit(const Common& common, const json& summary, const std::string& human) {
  if (common.json_output) {
    std::cout << summary.dump(2) << '\n';
  } else {
    std::cout << human;
  }
}

nlohmann::json read_json_config(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw usage_error("cannot parse " + path.string() + ": " + e.what());
  }
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) {
    throw usage_error(std::string(what) + " is not a directory: " + p.string());
  }
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) {
    throw usage_error(std::string(what) + " is not a file: " + p.string());
  }
}

/// Reads a dump, reporting an empty one as a usage error.
ActivationDump read_nonempty_dump(const fs::path& dir, const char* what) {
  require_dir(dir, what);
  try {
    const auto m = nlohmann::json::parse(read_file_text(dir / "manifest.json"));
    if (m.value("num_samples", std::size_t{1}) == 0) {
      throw usage_error(std::string(what) + " dump is empty");
    }
  } catch (const nlohmann::json::exception&) {
    // read_dump reports malformed manifests.
  }
  return read_dump(dir);
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  fs::path ref, out;
  double alpha = 0.05;
  std::string mode = "tedlast";
  std::optional<std::size_t> k;
  double gamma = 1.0;
};

int run_fit(const Common& common, const FitArgs& a) {
  check_alpha(a.alpha);
  FitOptions opts;
  opts.alpha = a.alpha;
  opts.mode = parse_mode(a.mode);
  opts.k = a.k;
  opts.resolution = a.gamma;
  const auto ref = read_nonempty_dump(a.ref, "--ref");
  const auto bundle = fit(ref, opts);
  save_bundle(bundle, a.out);

  std::map<std::uint32_t, std::size_t> members;
  for (auto c : ref.predicted_labels) ++members[c];
  json classes = json::array();
  std::ostringstream human;
  human << "fitted " << mode_name(bundle.mode) << " on " << ref.num_samples << " samples, "
        << ref.num_layers() << " layers, k = " << bundle.k << "\n";
  for (const auto& d : bundle.detectors) {
    const std::size_t n = bundle.mode == DetectorMode::kGlobal ? d.num_training
                                                                : members[d.class_id];
    classes.push_back({{"class", d.class_id},
                       {"n", n},
                       {"p", d.num_components()},
                       {"threshold", d.threshold},
                       {"degenerate", d.degenerate}});
    human << "  " << (bundle.mode == DetectorMode::kGlobal ? "global" : "class " + std::to_string(d.class_id))
          << ": n = " << n << ", p = " << d.num_components() << ", tau = " << d.threshold
          << (d.degenerate ? " (degenerate)" : "") << "\n";
  }
  for (const auto& w : bundle.warnings) human << "warning: " << w << "\n";
  human << "bundle written to " << a.out.string() << "\n";

  json summary;
  summary["bundle"] = a.out.string();
  summary["mode"] = mode_name(bundle.mode);
  summary["alpha"] = bundle.alpha;
  summary["k"] = bundle.k;
  summary["gamma"] = bundle.resolution;
  summary["reference_digest"] = digest_hex(bundle.reference_digest);
  summary["detectors"] = std::move(classes);
  summary["unsupported_classes"] = bundle.unsupported_classes;
  summary["warnings"] = bundle.warnings;
  emit(common, summary, human.str());
  return 0;
}

// ---------------------------------------------------------------------------
// detect

struct DetectArgs {
  fs::path bundle, queries, ref, report;
};

int run_detect(const Common& common, const DetectArgs& a) {
  require_file(a.bundle, "--bundle");
  const auto bundle = load_bundle(a.bundle);
  const auto queries = read_nonempty_dump(a.queries, "--queries");
  const auto ref = read_nonempty_dump(a.ref, "--ref");
  const auto report = detect(bundle, queries, ref);

  if (a.report.extension() == ".json") {
    write_file_text(a.report, report_to_json(report).dump(2) + "\n");
  } else {
    std::ostringstream table;
    write_report_table(table, report);
    write_file_text(a.report, table.str());
  }

  std::size_t anomalous = 0, errors = 0;
  for (const auto& r : report.records) {
    anomalous += r.verdict == Verdict::kAnomalous;
    errors += r.verdict == Verdict::kError;
  }
  json fractions = json::object();
  for (const auto& [c, f] : report.flagged_fraction) fractions[std::to_string(c)] = f;
  json summary;
  summary["report"] = a.report.string();
  summary["queries"] = report.records.size();
  summary["anomalous"] = anomalous;
  summary["errors"] = errors;
  summary["flagged_fraction_per_class"] = std::move(fractions);
  std::ostringstream human;
  human << anomalous << " of " << report.records.size() << " queries anomalous";
  if (errors > 0) human << ", " << errors << " unscored";
  human << "; report written to " << a.report.string() << "\n";
  emit(common, summary, human.str());
  return 0;
}

// ---------------------------------------------------------------------------
// poison

struct PoisonArgs {
  fs::path config, in, out;
  std::optional<fs::path> attack_out;
  std::optional<std::uint64_t> seed;
  bool shuffle = false;
};

int run_poison(const Common& common, const PoisonArgs& a) {
  require_file(a.config, "--config");
  require_dir(a.in, "--in");
  const auto cfg = read_json_config(a.config);
  const auto data = read_dataset(a.in);
  auto spec = parse_poison_spec(cfg, data.channels, data.height, data.width,
                                a.config.parent_path());
  if (a.seed) spec.seed = *a.seed;
  const auto result = forge(data, spec);
  emit_dataset(result.poison, result.laundry, a.out,
               a.shuffle ? std::optional<std::uint64_t>(spec.seed) : std::nullopt);

  std::size_t attack_rows = 0;
  if (a.attack_out) {
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    const auto attack = build_attack_set(data, spec, rng);
    write_dataset(attack.data, *a.attack_out, &attack.provenance);
    attack_rows = attack.data.size();
  }

  std::vector<std::string> warnings = result.poison.warnings;
  json summary;
  summary["out"] = a.out.string();
  summary["poison"] = result.poison.data.size();
  summary["laundry"] = result.laundry.data.size();
  if (a.attack_out) summary["attack"] = attack_rows;
  summary["seed"] = spec.seed;
  summary["warnings"] = warnings;
  std::ostringstream human;
  human << result.poison.data.size() << " poison and " << result.laundry.data.size()
        << " laundry samples written to " << a.out.string() << "\n";
  if (a.attack_out) {
    human << attack_rows << " triggered test samples written to " << a.attack_out->string()
          << "\n";
  }
  for (const auto& w : warnings) human << "warning: " << w << "\n";
  emit(common, summary, human.str());
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  fs::path config, out;
  std::optional<std::uint64_t> seed;
};

int run_synth(const Common& common, const SynthArgs& a) {
  require_file(a.config, "--config");
  auto cfg = read_json_config(a.config);
  if (a.seed) cfg["seed"] = *a.seed;
  const auto config = synth_config_from_json(cfg);
  const auto out = synth_dynamics(config);
  write_dump(out.clean, a.out / "clean");
  if (config.malicious_count > 0) write_dump(out.malicious, a.out / "malicious");
  write_file_text(a.out / "config.json", synth_config_to_json(config).dump(2) + "\n");

  json summary;
  summary["out"] = a.out.string();
  summary["clean"] = out.clean.num_samples;
  summary["malicious"] = config.malicious_count;
  summary["seed"] = config.seed;
  std::ostringstream human;
  human << out.clean.num_samples << " clean and " << config.malicious_count
        << " malicious samples written to " << a.out.string() << "\n";
  emit(common, summary, human.str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string suite;
  std::optional<fs::path> config;
  std::size_t reference_per_class = kScenarioReferencePerClass;
  std::optional<fs::path> ref, clean_queries, malicious_queries;
  fs::path out;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::size_t trials = 5;
  std::vector<std::size_t> extra{0, 1, 2, 3, 4, 5};
  std::vector<double> ratios{1.0, 2.0, 4.0};
};

Scenario load_scenario(const EvalArgs& a, json& params) {
  if (a.config) {
    if (a.ref || a.clean_queries || a.malicious_queries) {
      throw usage_error("give either --config or dumps, not both");
    }
    require_file(*a.config, "--config");
    const auto config = synth_config_from_json(read_json_config(*a.config));
    params["synth"] = synth_config_to_json(config);
    params["reference_per_class"] = a.reference_per_class;
    return make_scenario(config, a.reference_per_class);
  }
  if (!a.ref || !a.clean_queries || !a.malicious_queries) {
    throw usage_error("eval needs --config, or --ref with --clean-queries and --malicious-queries");
  }
  Scenario s;
  s.reference = read_nonempty_dump(*a.ref, "--ref");
  auto clean = read_nonempty_dump(*a.clean_queries, "--clean-queries");
  auto mal = read_nonempty_dump(*a.malicious_queries, "--malicious-queries");
  clean.true_labels.reset();
  mal.true_labels.reset();
  s.queries = concat_rows(clean, mal);
  s.malicious.assign(clean.num_samples, false);
  s.malicious.resize(s.queries.num_samples, true);
  params["ref"] = a.ref->string();
  params["clean_queries"] = a.clean_queries->string();
  params["malicious_queries"] = a.malicious_queries->string();
  return s;
}

int run_eval(const Common& common, const EvalArgs& a) {
  check_alpha(a.alpha);
  json params;
  params["suite"] = a.suite;
  params["alpha"] = a.alpha;
  params["seed"] = a.seed;
  const auto s = load_scenario(a, params);
  ensure_directory(a.out);

  json results;
  std::ostringstream human;
  std::vector<std::string> files;
  if (a.suite == "metrics") {
    results = json::array();
    for (auto mode : {DetectorMode::kClassWeighted, DetectorMode::kClassUnweighted,
                      DetectorMode::kGlobal}) {
      const auto ev = evaluate_mode(s.reference, s.queries, s.malicious, mode, a.alpha);
      json row = metrics_to_json(ev.metrics);
      row["mode"] = mode_name(mode);
      row["auroc"] = ev.auroc;
      results.push_back(std::move(row));
      human << mode_name(mode) << ": AUROC " << ev.auroc << ", precision "
            << ev.metrics.precision << ", recall " << ev.metrics.recall << ", F1 "
            << ev.metrics.f1 << "\n";
    }
  } else if (a.suite == "class-aug") {
    params["trials"] = a.trials;
    params["extra_classes"] = a.extra;
    const auto curve = class_augmentation_run(s.reference, s.queries, s.malicious, a.extra,
                                              a.trials, a.seed, a.alpha);
    results = json::array();
    for (const auto& p : curve) {
      results.push_back({{"extra_classes", p.x}, {"auroc", p.value}});
      human << "extra classes " << p.x << ": AUROC " << p.value << "\n";
    }
    write_curve(a.out / "class_aug.tsv", "extra_classes", "auroc", curve);
    files.push_back("class_aug.tsv");
  } else if (a.suite == "ctd-ratio") {
    params["ratios"] = a.ratios;
    std::vector<std::string> warnings;
    const auto pts = weighting_ablation_run(s.reference, s.queries, s.malicious, a.ratios,
                                            a.seed, &warnings, a.alpha);
    std::vector<CurvePoint> weighted, unweighted;
    results = json::array();
    for (const auto& p : pts) {
      json row{{"ratio", p.ratio},
               {"malicious_kept", p.malicious_kept},
               {"clean_kept", p.clean_kept},
               {"skipped", p.skipped}};
      if (!p.skipped) {
        row["auroc_weighted"] = p.auroc_weighted;
        row["auroc_unweighted"] = p.auroc_unweighted;
        weighted.push_back({p.ratio, p.auroc_weighted});
        unweighted.push_back({p.ratio, p.auroc_unweighted});
        human << "ratio " << p.ratio << ": weighted " << p.auroc_weighted << ", unweighted "
              << p.auroc_unweighted << " (" << p.malicious_kept << " malicious)\n";
      } else {
        human << "ratio " << p.ratio << ": skipped\n";
      }
      results.push_back(std::move(row));
    }
    params["warnings"] = warnings;
    const std::string wname = std::string("ctd_ratio_") + std::string(mode_name(DetectorMode::kClassWeighted)) + ".tsv";
    const std::string uname = std::string("ctd_ratio_") + std::string(mode_name(DetectorMode::kClassUnweighted)) + ".tsv";
    write_curve(a.out / wname, "ratio", "auroc", weighted);
    write_curve(a.out / uname, "ratio", "auroc", unweighted);
    files.push_back(wname);
    files.push_back(uname);
  } else {
    throw usage_error("unknown suite '" + a.suite + "'");
  }

  json doc;
  doc["parameters"] = std::move(params);
  doc["results"] = results;
  doc["curves"] = files;
  write_file_text(a.out / "results.json", doc.dump(2) + "\n");
  human << "results written to " << (a.out / "results.json").string() << "\n";
  emit(common, doc, human.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor detection from layer-wise activation dynamics"};
  app.require_subcommand(1);
  Common common;
  app.add_flag("--json", common.json_output, "Print a JSON summary instead of text");

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit detectors on a clean reference dump");
  fit_cmd->add_option("--ref", fit_args.ref, "Reference activation dump")->required();
  fit_cmd->add_option("--out", fit_args.out, "Bundle file to write")->required();
  fit_cmd->add_option("--alpha", fit_args.alpha, "Reject parameter in (0, 0.5]")
      ->capture_default_str();
  fit_cmd->add_option("--mode", fit_args.mode, "tedlast, ted-classwise or ted-global")
      ->capture_default_str();
  fit_cmd->add_option("--k", fit_args.k, "Neighbours per node in the k-NN graphs");
  fit_cmd->add_option("--gamma", fit_args.gamma, "Modularity resolution")
      ->capture_default_str();

  DetectArgs detect_args;
  auto* detect_cmd = app.add_subcommand("detect", "Score queries against a fitted bundle");
  detect_cmd->add_option("--bundle", detect_args.bundle, "Bundle from `fit`")->required();
  detect_cmd->add_option("--queries", detect_args.queries, "Query dump")->required();
  detect_cmd->add_option("--ref", detect_args.ref, "The fit-time reference dump")->required();
  detect_cmd->add_option("--report", detect_args.report, "Report path (.json or table)")
      ->required();

  PoisonArgs poison_args;
  auto* poison_cmd = app.add_subcommand("poison", "Build poison and laundry sets");
  poison_cmd->add_option("--config", poison_args.config, "Poison spec (JSON)")->required();
  poison_cmd->add_option("--in", poison_args.in, "Clean image dataset directory")->required();
  poison_cmd->add_option("--out", poison_args.out, "Output dataset directory")->required();
  poison_cmd->add_option("--attack-out", poison_args.attack_out,
                         "Also write the triggered test set here");
  poison_cmd->add_option("--seed", poison_args.seed, "Override the spec seed");
  poison_cmd->add_flag("--shuffle", poison_args.shuffle, "Shuffle poison and laundry rows");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic activation dynamics");
  synth_cmd->add_option("--config", synth_args.config, "Synthetic config (JSON)")->required();
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth_args.seed, "Override the config seed");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation suite");
  eval_cmd->add_option("--suite", eval_args.suite, "metrics, class-aug or ctd-ratio")
      ->required()
      ->check(CLI::IsMember({"metrics", "class-aug", "ctd-ratio"}));
  eval_cmd->add_option("--config", eval_args.config, "Synthetic config to generate data from");
  eval_cmd->add_option("--reference-per-class", eval_args.reference_per_class,
                       "Synthetic clean samples per class used as reference")
      ->capture_default_str();
  eval_cmd->add_option("--ref", eval_args.ref, "Reference dump");
  eval_cmd->add_option("--clean-queries", eval_args.clean_queries, "Clean query dump");
  eval_cmd->add_option("--malicious-queries", eval_args.malicious_queries,
                       "Malicious query dump");
  eval_cmd->add_option("--out", eval_args.out, "Output directory")->required();
  eval_cmd->add_option("--alpha", eval_args.alpha, "Reject parameter")->capture_default_str();
  eval_cmd->add_option("--seed", eval_args.seed, "Seed for sampling")->capture_default_str();
  eval_cmd->add_option("--trials", eval_args.trials, "class-aug trials per point")
      ->capture_default_str();
  eval_cmd->add_option("--extra", eval_args.extra, "class-aug extra class counts")
      ->delimiter(',');
  eval_cmd->add_option("--ratios", eval_args.ratios, "ctd-ratio threshold ratios")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*fit_cmd) return run_fit(common, fit_args);
    if (*detect_cmd) return run_detect(common, detect_args);
    if (*poison_cmd) return run_poison(common, poison_args);
    if (*synth_cmd) return run_synth(common, synth_args);
    if (*eval_cmd) return run_eval(common, eval_args);
  } catch (const tedlast::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tedlast::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }
  return 4;
}
