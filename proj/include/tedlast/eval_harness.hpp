#pragma once

// Detection metrics, ablation runners and a synthetic activation-dynamics
// generator. Malicious samples are the positive class throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tedlast/activation_store.hpp"
#include "tedlast/error.hpp"
#include "tedlast/layer_weighting.hpp"
#include "tedlast/outlier_detector.hpp"
#include "tedlast/topo_dynamics.hpp"

namespace tedlast {

// ---------------------------------------------------------------------------
// Metrics

struct DetectionMetrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;
  bool precision_defined = true;  // false when nothing was flagged
};

inline DetectionMetrics precision_f1(const std::vector<bool>& flagged,
                                     const std::vector<bool>& malicious) {
  if (flagged.empty()) throw usage_error("no verdicts to score");
  if (flagged.size() != malicious.size()) {
    throw usage_error("verdict and truth counts differ");
  }
  DetectionMetrics m;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    if (flagged[i]) {
      ++(malicious[i] ? m.tp : m.fp);
    } else {
      ++(malicious[i] ? m.fn : m.tn);
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  m.precision_defined = m.tp + m.fp > 0;
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.fpr = ratio(m.fp, m.fp + m.tn);
  const double denom = m.precision + m.recall;
  m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : 0.0;
  return m;
}

struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> malicious;

  void add(double score, bool is_malicious) {
    scores.push_back(score);
    malicious.push_back(is_malicious);
  }
};

/// Mann-Whitney statistic: P(malicious > clean) + 0.5 P(tie), using
/// average ranks over tied groups.
inline double auroc(const LabeledScores& s) {
  if (s.scores.size() != s.malicious.size()) throw usage_error("score and truth counts differ");
  const std::size_t n = s.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  std::size_t npos = 0;
  while (pos < n) {
    std::size_t end = pos;
    while (end < n && s.scores[order[end]] == s.scores[order[pos]]) ++end;
    const double avg_rank = 0.5 * static_cast<double>(pos + 1 + end);
    for (std::size_t i = pos; i < end; ++i) {
      if (s.malicious[order[i]]) {
        rank_sum += avg_rank;
        ++npos;
      }
    }
    pos = end;
  }
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw usage_error("AUROC needs both malicious and clean samples");
  const double p = static_cast<double>(npos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(nneg));
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw usage_error("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Indices whose CTD satisfies median / CTD >= ratio, i.e. CTD <= median / ratio.
/// CTD 0 is always kept.
inline std::vector<std::size_t> ctd_ratio_filter(std::span<const RankProfile> malicious,
                                                 double ratio) {
  if (malicious.empty()) throw usage_error("empty malicious set");
  if (!(ratio >= 1.0)) throw usage_error("CTD threshold ratio must be >= 1");
  std::vector<double> ctd;
  ctd.reserve(malicious.size());
  for (const auto& p : malicious) ctd.push_back(static_cast<double>(p.ctd));
  const double med = median(ctd);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ctd.size(); ++i) {
    if (ctd[i] == 0.0 || ctd[i] * ratio <= med) keep.push_back(i);
  }
  return keep;
}

// ---------------------------------------------------------------------------
// Synthetic dynamics

struct SynthConfig {
  std::size_t num_classes = 10;
  std::size_t num_layers = 12;
  std::size_t dim = 2;
  std::size_t samples_per_class = 300;
  std::size_t malicious_count = 1000;
  std::vector<std::uint32_t> targets{0};
  double sigma = 1.0;
  std::vector<double> drift;  // gamma per layer; empty means linear 0 -> 1
  double subtlety = 1.0;
  // Per-layer class separation a_l in (0, 1]; empty means 1 everywhere.
  std::vector<double> separation;
  // Each class lags the separation schedule by a seeded number of layers
  // drawn uniformly from [0, onset_spread].
  std::size_t onset_spread = 0;
  // Each (class, layer) scales its separation by a seeded factor drawn
  // uniformly from [1 - separation_jitter, 1 + separation_jitter], capped at 1.
  double separation_jitter = 0.0;
  // Correlation of a sample's noise between consecutive layers, in [0, 1].
  double noise_correlation = 0.0;
  std::uint64_t seed = 0;

  std::vector<double> drift_schedule() const {
    if (!drift.empty()) return drift;
    std::vector<double> g(num_layers, 1.0);
    for (std::size_t l = 0; l + 1 < num_layers; ++l) {
      g[l] = static_cast<double>(l) / static_cast<double>(num_layers - 1);
    }
    return g;
  }

  std::vector<double> separation_schedule() const {
    return separation.empty() ? std::vector<double>(num_layers, 1.0) : separation;
  }
};

inline void validate(const SynthConfig& c) {
  if (c.num_classes < 2) throw usage_error("synthetic config needs at least 2 classes");
  if (c.num_layers < 2) throw usage_error("synthetic config needs at least 2 layers");
  if (c.dim < 1) throw usage_error("synthetic dim must be positive");
  if (c.samples_per_class < 1) throw usage_error("samples_per_class must be positive");
  if (!(c.sigma > 0.0) || !std::isfinite(c.sigma)) throw usage_error("sigma must be positive");
  if (!(c.subtlety > 0.0 && c.subtlety <= 1.0)) throw usage_error("subtlety must be in (0, 1]");
  if (!(c.separation_jitter >= 0.0 && c.separation_jitter < 1.0)) {
    throw usage_error("separation_jitter must be in [0, 1)");
  }
  if (!(c.noise_correlation >= 0.0 && c.noise_correlation <= 1.0)) {
    throw usage_error("noise_correlation must be in [0, 1]");
  }
  const auto sep = c.separation_schedule();
  if (sep.size() != c.num_layers) throw usage_error("separation length must equal num_layers");
  for (double a : sep) {
    if (!(a > 0.0 && a <= 1.0)) throw usage_error("separation values must be in (0, 1]");
  }
  if (c.malicious_count > 0 && c.targets.empty()) throw usage_error("no target classes");
  for (auto t : c.targets) {
    if (t >= c.num_classes) throw usage_error("target class out of range");
  }
  const auto g = c.drift_schedule();
  if (g.size() != c.num_layers) throw usage_error("drift schedule length must equal num_layers");
  for (std::size_t l = 0; l < g.size(); ++l) {
    if (!(g[l] >= 0.0 && g[l] <= 1.0)) throw usage_error("drift values must be in [0, 1]");
    if (l > 0 && g[l] < g[l - 1]) throw usage_error("drift schedule must be non-decreasing");
  }
}

struct SynthOutput {
  ActivationDump clean;
  ActivationDump malicious;  // empty dump (0 samples) when malicious_count is 0
};

/// Per layer, class centroids are unit vectors scaled by 10 sigma.
/// Clean samples sit at their centroid plus N(0, sigma^2) noise; a malicious
/// sample from source s to target t sits at
///   (1 - s_sub * gamma_l) c_s + s_sub * gamma_l c_t + noise
/// and is predicted as t. Both dumps carry true labels.
inline SynthOutput synth_dynamics(const SynthConfig& config) {
  validate(config);
  const std::size_t C = config.num_classes, L = config.num_layers, D = config.dim;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto unit = [&](double* v) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        v[d] = normal(rng);
        norm += v[d] * v[d];
      }
    } while (norm < 1e-12);
    for (std::size_t d = 0; d < D; ++d) v[d] /= std::sqrt(norm);
  };
  // Class directions u_c and a shared direction u_0 are drawn once. Layer l
  // places class c at 10 sigma * normalise(a u_c + (1 - a) u_0), with a
  // the separation of layer l shifted back by the class's onset lag and
  // multiplied by the (class, layer) jitter factor.
  std::vector<double> directions(C * D), shared(D);
  for (std::size_t c = 0; c < C; ++c) unit(directions.data() + c * D);
  unit(shared.data());
  const auto sep = config.separation_schedule();
  std::vector<std::size_t> onset(C);
  std::uniform_int_distribution<std::size_t> lag(0, config.onset_spread);
  for (auto& o : onset) o = lag(rng);
  std::vector<double> jitter(C * L, 1.0);
  if (config.separation_jitter > 0.0) {
    std::uniform_real_distribution<double> factor(1.0 - config.separation_jitter,
                                                  1.0 + config.separation_jitter);
    for (auto& f : jitter) f = factor(rng);
  }
  std::vector<std::vector<double>> centroids(L, std::vector<double>(C * D));
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t c = 0; c < C; ++c) {
      double* v = centroids[l].data() + c * D;
      const double a = std::min(1.0, jitter[c * L + l] * sep[l > onset[c] ? l - onset[c] : 0]);
      double norm = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        v[d] = a * directions[c * D + d] + (1.0 - a) * shared[d];
        norm += v[d] * v[d];
      }
      norm = std::max(std::sqrt(norm), 1e-12);
      for (std::size_t d = 0; d < D; ++d) v[d] *= 10.0 * config.sigma / norm;
    }
  }

  // AR(1) noise across layers with stationary N(0, sigma^2) marginals.
  const double rn = config.noise_correlation;
  std::vector<double> noise(L * D);
  auto draw_noise = [&] {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t d = 0; d < D; ++d) {
        const double fresh = config.sigma * normal(rng);
        noise[l * D + d] =
            l == 0 ? fresh : rn * noise[(l - 1) * D + d] + std::sqrt(1.0 - rn * rn) * fresh;
      }
    }
  };

  auto make_dump = [&](std::size_t n) {
    ActivationDump dump;
    dump.num_samples = n;
    dump.num_classes = C;
    for (std::size_t l = 0; l < L; ++l) {
      dump.layers.push_back({"layer" + std::to_string(l), D});
      dump.activations.emplace_back(n, D);
    }
    dump.predicted_labels.resize(n);
    dump.true_labels = std::vector<std::uint32_t>(n);
    return dump;
  };

  SynthOutput out;
  out.clean = make_dump(C * config.samples_per_class);
  std::size_t row = 0;
  for (std::uint32_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < config.samples_per_class; ++i, ++row) {
      out.clean.predicted_labels[row] = c;
      (*out.clean.true_labels)[row] = c;
      draw_noise();
      for (std::size_t l = 0; l < L; ++l) {
        auto dst = out.clean.activations[l].row(row);
        for (std::size_t d = 0; d < D; ++d) {
          dst[d] = static_cast<float>(centroids[l][c * D + d] + noise[l * D + d]);
        }
      }
    }
  }

  const auto gamma = config.drift_schedule();
  out.malicious = make_dump(config.malicious_count);
  std::uniform_int_distribution<std::uint32_t> other(0, static_cast<std::uint32_t>(C - 2));
  for (std::size_t m = 0; m < config.malicious_count; ++m) {
    const std::uint32_t t = config.targets[m % config.targets.size()];
    std::uint32_t s = other(rng);
    if (s >= t) ++s;
    out.malicious.predicted_labels[m] = t;
    (*out.malicious.true_labels)[m] = s;
    draw_noise();
    for (std::size_t l = 0; l < L; ++l) {
      const double mix = config.subtlety * gamma[l];
      auto dst = out.malicious.activations[l].row(m);
      for (std::size_t d = 0; d < D; ++d) {
        const double pos =
            (1.0 - mix) * centroids[l][s * D + d] + mix * centroids[l][t * D + d];
        dst[d] = static_cast<float>(pos + noise[l * D + d]);
      }
    }
  }
  return out;
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.num_classes = j.value("num_classes", c.num_classes);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.dim = j.value("dim", c.dim);
    c.separation = j.value("separation", c.separation);
    c.onset_spread = j.value("onset_spread", c.onset_spread);
    c.separation_jitter = j.value("separation_jitter", c.separation_jitter);
    c.noise_correlation = j.value("noise_correlation", c.noise_correlation);
    c.samples_per_class = j.value("samples_per_class", c.samples_per_class);
    c.malicious_count = j.value("malicious_count", c.malicious_count);
    c.targets = j.value("targets", c.targets);
    c.sigma = j.value("sigma", c.sigma);
    c.drift = j.value("drift", c.drift);
    c.subtlety = j.value("subtlety", c.subtlety);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("malformed synthetic config: ") + e.what());
  }
  validate(c);
  return c;
}

inline nlohmann::ordered_json synth_config_to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["num_classes"] = c.num_classes;
  j["num_layers"] = c.num_layers;
  j["dim"] = c.dim;
  j["samples_per_class"] = c.samples_per_class;
  j["malicious_count"] = c.malicious_count;
  j["targets"] = c.targets;
  j["sigma"] = c.sigma;
  j["drift"] = c.drift_schedule();
  j["subtlety"] = c.subtlety;
  j["separation"] = c.separation_schedule();
  j["onset_spread"] = c.onset_spread;
  j["separation_jitter"] = c.separation_jitter;
  j["noise_correlation"] = c.noise_correlation;
  j["seed"] = c.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Scenarios

/// Ten-class, twelve-layer scenario used by the acceptance suite and the
/// `synth` examples: class geometry settles over the first layers at staggered
/// onsets, noise is strongly correlated across layers, and the malicious drift
/// runs over the last three layers. 300 samples per class, 1000 malicious.
inline SynthConfig adversarial_scenario(double subtlety, std::uint64_t seed) {
  SynthConfig c;
  c.dim = 4;
  c.samples_per_class = 300;
  c.malicious_count = 1000;
  c.subtlety = subtlety;
  c.separation.assign(c.num_layers, 0.4);
  c.separation[0] = 0.1;
  c.separation[1] = 0.25;
  c.drift.assign(c.num_layers, 0.0);
  for (std::size_t l = 9; l < c.num_layers; ++l) {
    c.drift[l] = static_cast<double>(l - 8) / 3.0;
  }
  c.onset_spread = 6;
  c.noise_correlation = 0.99;
  c.seed = seed;
  validate(c);
  return c;
}

inline constexpr std::size_t kScenarioReferencePerClass = 200;

/// A reference set plus labelled queries (clean first, then malicious).
struct Scenario {
  ActivationDump reference;
  ActivationDump queries;
  std::vector<bool> malicious;
};

/// Splits synthetic clean samples per class: the first `reference_per_class`
/// go to the reference, the rest become clean queries.
inline Scenario make_scenario(const SynthConfig& config, std::size_t reference_per_class) {
  if (reference_per_class == 0 || reference_per_class >= config.samples_per_class) {
    throw usage_error("reference_per_class must leave clean queries in every class");
  }
  if (config.malicious_count == 0) throw usage_error("scenario needs malicious samples");
  auto synth = synth_dynamics(config);
  std::vector<std::size_t> ref_rows, query_rows;
  for (std::size_t c = 0; c < config.num_classes; ++c) {
    for (std::size_t i = 0; i < config.samples_per_class; ++i) {
      const std::size_t row = c * config.samples_per_class + i;
      (i < reference_per_class ? ref_rows : query_rows).push_back(row);
    }
  }
  Scenario s;
  s.reference = select_rows(synth.clean, ref_rows);
  s.queries = concat_rows(select_rows(synth.clean, query_rows), synth.malicious);
  s.malicious.assign(query_rows.size(), false);
  s.malicious.resize(s.queries.num_samples, true);
  return s;
}

struct ModeEvaluation {
  DetectorMode mode = DetectorMode::kClassWeighted;
  double auroc = 0.0;
  DetectionMetrics metrics;
  std::vector<double> scores;  // per query; errors score 0 and are never flagged
  std::vector<bool> flagged;
};

inline ModeEvaluation evaluate_mode(const ActivationDump& reference,
                                    const ActivationDump& queries,
                                    const std::vector<bool>& malicious, DetectorMode mode,
                                    double alpha = 0.05) {
  FitOptions opts;
  opts.alpha = alpha;
  opts.mode = mode;
  const auto bundle = fit(reference, opts);
  const auto report = detect(bundle, queries, reference);
  ModeEvaluation ev;
  ev.mode = mode;
  LabeledScores ls;
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const auto& r = report.records[i];
    const bool ok = r.verdict != Verdict::kError;
    ev.scores.push_back(ok ? r.score : 0.0);
    ev.flagged.push_back(r.verdict == Verdict::kAnomalous);
    ls.add(ev.scores.back(), malicious[i]);
  }
  ev.auroc = auroc(ls);
  ev.metrics = precision_f1(ev.flagged, malicious);
  return ev;
}

// ---------------------------------------------------------------------------
// Ablations

struct CurvePoint {
  double x = 0.0;
  double value = 0.0;
};

/// Mean AUROC over `trials` for each entry of `extra_counts`. Each class
/// detector is trained on the weighted reference profiles of its own class
/// plus those of `extra` other classes drawn uniformly at random; profiles
/// keep the weights of the detector's class.
inline std::vector<CurvePoint> class_augmentation_run(
    const ActivationDump& reference, const ActivationDump& queries,
    const std::vector<bool>& malicious, std::span<const std::size_t> extra_counts,
    std::size_t trials, std::uint64_t seed, double alpha = 0.05) {
  check_alpha(alpha);
  if (trials == 0) throw usage_error("trials must be positive");
  if (malicious.size() != queries.num_samples) throw usage_error("truth count mismatch");
  const std::size_t C = reference.num_classes;
  for (auto e : extra_counts) {
    if (e >= C) throw usage_error("extra classes must be fewer than the number of classes");
  }
  const auto scan = scan_reference(reference, default_k(reference.num_samples));
  const auto table = weight_table_from_graphs(scan.graphs, reference.predicted_labels, C, 1.0);
  const auto query_profiles = detail::profiles_lenient(queries, reference, false);

  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < reference.num_samples; ++i) {
    by_class[reference.predicted_labels[i]].push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::vector<CurvePoint> curve;
  for (auto extra : extra_counts) {
    double total = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
      std::vector<ClassDetector> dets(C);
      std::vector<bool> fitted(C, false);
      for (std::uint32_t c = 0; c < C; ++c) {
        if (by_class[c].size() < kMinClassTraining) continue;
        std::vector<std::uint32_t> others;
        for (std::uint32_t o = 0; o < C; ++o) {
          if (o != c) others.push_back(o);
        }
        std::shuffle(others.begin(), others.end(), rng);
        others.resize(extra);
        std::vector<std::vector<double>> rows;
        auto add = [&](std::uint32_t cls) {
          for (auto i : by_class[cls]) {
            if (is_defined(scan.profiles[i])) {
              rows.push_back(weighted_profile(scan.profiles[i], table.row(c)));
            }
          }
        };
        add(c);
        for (auto o : others) add(o);
        dets[c] = fit_class_detector(profile_matrix(rows), 1.0 - alpha);
        fitted[c] = true;
      }
      LabeledScores ls;
      for (std::size_t q = 0; q < queries.num_samples; ++q) {
        const auto c = queries.predicted_labels[q];
        double score = 0.0;
        if (fitted[c] && is_defined(query_profiles[q])) {
          score = anomaly_score(dets[c], weighted_profile(query_profiles[q], table.row(c)));
        }
        ls.add(score, malicious[q]);
      }
      total += auroc(ls);
    }
    curve.push_back({static_cast<double>(extra), total / static_cast<double>(trials)});
  }
  return curve;
}

struct RatioPoint {
  double ratio = 1.0;
  std::size_t malicious_kept = 0;
  std::size_t clean_kept = 0;
  double auroc_weighted = 0.0;
  double auroc_unweighted = 0.0;
  bool skipped = false;
};

/// For each CTD threshold ratio, keeps the malicious queries passing
/// ctd_ratio_filter, pairs them with an equal number of clean queries drawn
/// uniformly (seeded) from the clean queries of the same predicted classes,
/// and compares class-weighted against class-unweighted AUROC.
inline std::vector<RatioPoint> weighting_ablation_run(
    const ActivationDump& reference, const ActivationDump& queries,
    const std::vector<bool>& malicious, std::span<const double> ratios, std::uint64_t seed,
    std::vector<std::string>* warnings = nullptr, double alpha = 0.05) {
  if (malicious.size() != queries.num_samples) throw usage_error("truth count mismatch");
  const auto weighted = evaluate_mode(reference, queries, malicious,
                                      DetectorMode::kClassWeighted, alpha);
  const auto unweighted = evaluate_mode(reference, queries, malicious,
                                        DetectorMode::kClassUnweighted, alpha);
  const auto profiles = detail::profiles_lenient(queries, reference, false);

  std::vector<std::size_t> mal_idx;
  std::vector<RankProfile> mal_profiles;
  for (std::size_t q = 0; q < queries.num_samples; ++q) {
    if (malicious[q]) {
      mal_idx.push_back(q);
      mal_profiles.push_back(profiles[q]);
    }
  }
  if (mal_idx.empty()) throw usage_error("no malicious queries");

  std::mt19937_64 rng(seed);
  std::vector<RatioPoint> out;
  for (double r : ratios) {
    RatioPoint pt;
    pt.ratio = r;
    std::vector<std::size_t> chosen;
    std::vector<bool> is_target(reference.num_classes, false);
    for (auto k : ctd_ratio_filter(mal_profiles, r)) {
      chosen.push_back(mal_idx[k]);
      is_target[queries.predicted_labels[mal_idx[k]]] = true;
    }
    pt.malicious_kept = chosen.size();
    std::vector<std::size_t> pool;
    for (std::size_t q = 0; q < queries.num_samples; ++q) {
      if (!malicious[q] && is_target[queries.predicted_labels[q]]) pool.push_back(q);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() < chosen.size() && warnings) {
      warnings->push_back("ratio " + std::to_string(r) + ": only " +
                          std::to_string(pool.size()) + " clean counterparts available");
    }
    pool.resize(std::min(pool.size(), chosen.size()));
    pt.clean_kept = pool.size();
    if (chosen.empty() || pool.empty()) {
      pt.skipped = true;
      if (warnings) warnings->push_back("ratio " + std::to_string(r) + " skipped: empty set");
      out.push_back(pt);
      continue;
    }
    LabeledScores w, u;
    for (auto q : chosen) {
      w.add(weighted.scores[q], true);
      u.add(unweighted.scores[q], true);
    }
    for (auto q : pool) {
      w.add(weighted.scores[q], false);
      u.add(unweighted.scores[q], false);
    }
    pt.auroc_weighted = auroc(w);
    pt.auroc_unweighted = auroc(u);
    out.push_back(pt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

/// Two-column tab-separated curve file.
inline void write_curve(const std::filesystem::path& path, std::string_view x_name,
                        std::string_view value_name, std::span<const CurvePoint> points) {
  std::ostringstream s;
  s.precision(17);
  s << x_name << '\t' << value_name << '\n';
  for (const auto& p : points) s << p.x << '\t' << p.value << '\n';
  write_file_text(path, s.str());
}

inline nlohmann::ordered_json metrics_to_json(const DetectionMetrics& m) {
  nlohmann::ordered_json j;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["fn"] = m.fn;
  j["tn"] = m.tn;
  j["precision"] = m.precision;
  j["precision_defined"] = m.precision_defined;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["fpr"] = m.fpr;
  return j;
}

}  // namespace tedlast
