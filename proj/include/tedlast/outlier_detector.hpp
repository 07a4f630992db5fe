#pragma once

// PCA outlier models over (weighted) rank profiles, threshold calibration,
// whole-reference fitting in three modes, inference, and bundle persistence.
//
// Score of a profile x against a class model (mean, components V, eigen-
// values lambda, p retained components):
//   s(x) = sum_{j<p} ((x - mean) . V_j)^2 / lambda_j
// i.e. Mahalanobis distance inside the retained principal subspace.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tedlast/activation_store.hpp"
#include "tedlast/binary_io.hpp"
#include "tedlast/error.hpp"
#include "tedlast/layer_weighting.hpp"
#include "tedlast/topo_dynamics.hpp"

namespace tedlast {

inline constexpr std::size_t kMinClassTraining = 5;
inline constexpr double kEigenRidge = 1e-6;

enum class DetectorMode {
  kClassWeighted,    // per-class detectors on modularity-weighted profiles
  kClassUnweighted,  // per-class detectors on raw profiles
  kGlobal,           // one detector on all raw profiles
};

inline std::string_view mode_name(DetectorMode mode) {
  switch (mode) {
    case DetectorMode::kClassWeighted:
      return "tedlast";
    case DetectorMode::kClassUnweighted:
      return "ted-classwise";
    case DetectorMode::kGlobal:
      return "ted-global";
  }
  return "unknown";
}

inline DetectorMode parse_mode(std::string_view name) {
  for (auto m : {DetectorMode::kClassWeighted, DetectorMode::kClassUnweighted,
                 DetectorMode::kGlobal}) {
    if (mode_name(m) == name) return m;
  }
  throw usage_error("unknown mode '" + std::string(name) +
                    "' (expected tedlast, ted-classwise or ted-global)");
}

struct ClassDetector {
  std::uint32_t class_id = 0;
  Eigen::VectorXd mean;         // N
  Eigen::MatrixXd components;   // p x N, orthonormal rows
  Eigen::VectorXd eigenvalues;  // p, descending, ridge included
  double threshold = 0.0;
  std::size_t num_training = 0;
  bool degenerate = false;

  std::size_t num_components() const noexcept {
    return static_cast<std::size_t>(components.rows());
  }

  bool operator==(const ClassDetector& o) const {
    return class_id == o.class_id && mean.size() == o.mean.size() &&
           mean == o.mean && components.rows() == o.components.rows() &&
           components.cols() == o.components.cols() && components == o.components &&
           eigenvalues.size() == o.eigenvalues.size() && eigenvalues == o.eigenvalues &&
           threshold == o.threshold && num_training == o.num_training &&
           degenerate == o.degenerate;
  }
};

/// Stacks profile vectors into an n x N matrix.
inline Eigen::MatrixXd profile_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

/// Fits mean and principal components (threshold left at 0). Keeps the
/// fewest leading components whose explained-variance ratio reaches
/// `variance_target`; retained eigenvalues get a ridge of 1e-6 times the
/// mean positive eigenvalue.
inline ClassDetector fit_class_detector(const Eigen::MatrixXd& profiles,
                                        double variance_target,
                                        std::vector<std::string>* warnings = nullptr) {
  const auto n = profiles.rows();
  const auto dims = profiles.cols();
  if (n < static_cast<Eigen::Index>(kMinClassTraining)) {
    throw usage_error("insufficient training samples for class");
  }
  if (dims < 1) throw usage_error("profiles must have at least one layer");
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw usage_error("variance target must be in (0, 1]");
  }

  ClassDetector det;
  det.num_training = static_cast<std::size_t>(n);

  bool identical = true;
  for (Eigen::Index i = 1; i < n && identical; ++i) {
    identical = profiles.row(i) == profiles.row(0);
  }
  det.mean = identical ? Eigen::VectorXd(profiles.row(0).transpose())
                       : Eigen::VectorXd(profiles.colwise().mean().transpose());

  const Eigen::MatrixXd centered = profiles.rowwise() - det.mean.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::kInternal, "eigendecomposition failed");
  }
  // Ascending from Eigen; walk from the back for descending order.
  const Eigen::VectorXd evals = solver.eigenvalues();
  const Eigen::MatrixXd evecs = solver.eigenvectors();
  const double scale = std::max(1.0, profiles.cwiseAbs().maxCoeff());
  const double zero_tol = 1e-12 * scale * scale;

  std::vector<double> positive;
  for (Eigen::Index j = dims - 1; j >= 0; --j) {
    if (evals(j) > zero_tol) positive.push_back(evals(j));
  }
  if (positive.empty()) {
    if (warnings) warnings->push_back("zero variance in training profiles; degenerate detector");
    det.degenerate = true;
    det.components = Eigen::MatrixXd::Zero(1, dims);
    det.components(0, 0) = 1.0;
    det.eigenvalues = Eigen::VectorXd::Ones(1);
    return det;
  }

  double total = 0.0;
  for (double v : positive) total += v;
  std::size_t p = 0;
  double cumulative = 0.0;
  while (p < positive.size()) {
    cumulative += positive[p];
    ++p;
    if (cumulative >= variance_target * total * (1.0 - 1e-12)) break;
  }
  const double ridge = kEigenRidge * total / static_cast<double>(positive.size());

  det.components.resize(static_cast<Eigen::Index>(p), dims);
  det.eigenvalues.resize(static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j) {
    const Eigen::Index src = dims - 1 - static_cast<Eigen::Index>(j);
    Eigen::VectorXd v = evecs.col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    det.components.row(static_cast<Eigen::Index>(j)) = v.transpose();
    det.eigenvalues(static_cast<Eigen::Index>(j)) = positive[j] + ridge;
  }
  return det;
}

inline double anomaly_score(const ClassDetector& det, std::span<const double> profile) {
  if (static_cast<Eigen::Index>(profile.size()) != det.mean.size()) {
    throw usage_error("profile length does not match detector");
  }
  const Eigen::Map<const Eigen::VectorXd> x(profile.data(),
                                            static_cast<Eigen::Index>(profile.size()));
  const Eigen::VectorXd proj = det.components * (x - det.mean);
  double s = 0.0;
  for (Eigen::Index j = 0; j < proj.size(); ++j) {
    s += proj(j) * proj(j) / det.eigenvalues(j);
  }
  return s;
}

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 0.5)) {
    throw usage_error("alpha out of range (0, 0.5]");
  }
}

/// Empirical (1 - alpha) quantile: the ascending-sorted score at 1-based
/// position ceil((1 - alpha) n). At most alpha*n scores exceed it.
inline double calibrate_threshold(std::vector<double> scores, double alpha) {
  check_alpha(alpha);
  if (scores.size() < kMinClassTraining) {
    throw usage_error("threshold calibration needs at least 5 scores");
  }
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  auto pos = static_cast<std::size_t>(std::ceil((1.0 - alpha) * n - 1e-9));
  pos = std::clamp<std::size_t>(pos, 1, scores.size());
  return scores[pos - 1];
}

struct FitOptions {
  double alpha = 0.05;
  DetectorMode mode = DetectorMode::kClassWeighted;
  std::optional<std::size_t> k;            // default: floor(sqrt(num_samples))
  double resolution = 1.0;
  std::optional<double> variance_target;   // default: 1 - alpha
};

struct DetectorBundle {
  DetectorMode mode = DetectorMode::kClassWeighted;
  double alpha = 0.05;
  std::size_t k = 1;
  double resolution = 1.0;
  double variance_target = 0.95;
  std::size_t num_classes = 0;
  std::vector<LayerMeta> layers;
  std::uint64_t reference_digest = 0;
  WeightTable weight_table;
  // Sorted by class id. Global mode holds a single detector with class id 0.
  std::vector<ClassDetector> detectors;
  std::vector<std::uint32_t> unsupported_classes;
  std::vector<std::string> warnings;

  const ClassDetector* detector_for(std::uint32_t cls) const {
    if (mode == DetectorMode::kGlobal) {
      return detectors.empty() ? nullptr : &detectors.front();
    }
    auto it = std::lower_bound(
        detectors.begin(), detectors.end(), cls,
        [](const ClassDetector& d, std::uint32_t c) { return d.class_id < c; });
    return (it != detectors.end() && it->class_id == cls) ? &*it : nullptr;
  }

  /// Weights applied to a profile predicted as `cls`.
  std::span<const double> weights_for(std::uint32_t cls) const {
    return weight_table.row(mode == DetectorMode::kClassWeighted ? cls : 0);
  }

  bool operator==(const DetectorBundle&) const = default;
};

/// Everything fit() computes, for callers that need more than the bundle.
struct FitResult {
  DetectorBundle bundle;
  std::vector<RankProfile> profiles;  // self-referenced reference profiles
  std::vector<double> scores;         // fit-time score per reference sample; NaN if unscored
};

/// Fits from a precomputed scan of `reference` (graphs required only in
/// class-weighted mode).
inline FitResult fit_from_scan(const ActivationDump& reference, const ReferenceScan& scan,
                               const FitOptions& options) {
  check_alpha(options.alpha);
  const std::size_t n = reference.num_samples;
  const std::size_t layers = reference.num_layers();

  FitResult result;
  DetectorBundle& b = result.bundle;
  b.mode = options.mode;
  b.alpha = options.alpha;
  b.k = options.k.value_or(default_k(n));
  b.resolution = options.resolution;
  b.variance_target = options.variance_target.value_or(1.0 - options.alpha);
  b.num_classes = reference.num_classes;
  b.layers = reference.layers;
  b.reference_digest = dump_digest(reference);

  if (options.mode == DetectorMode::kClassWeighted) {
    if (scan.graphs.size() != layers) {
      throw usage_error("class-weighted fitting needs one k-NN graph per layer");
    }
    b.weight_table = weight_table_from_graphs(scan.graphs, reference.predicted_labels,
                                              reference.num_classes, options.resolution);
    b.warnings = b.weight_table.warnings;
  } else {
    b.weight_table =
        WeightTable::identity(reference.num_classes, layers, options.resolution);
  }

  result.profiles = scan.profiles;
  result.scores.assign(n, std::numeric_limits<double>::quiet_NaN());

  auto train = [&](std::uint32_t class_id, const std::vector<std::size_t>& members,
                   std::span<const double> weights) {
    std::vector<std::vector<double>> rows;
    rows.reserve(members.size());
    for (auto i : members) rows.push_back(weighted_profile(scan.profiles[i], weights));
    std::vector<std::string> warnings;
    ClassDetector det = fit_class_detector(profile_matrix(rows), b.variance_target, &warnings);
    det.class_id = class_id;
    for (auto& w : warnings) b.warnings.push_back("class " + std::to_string(class_id) + ": " + w);
    std::vector<double> scores;
    scores.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      scores.push_back(anomaly_score(det, rows[r]));
      result.scores[members[r]] = scores.back();
    }
    det.threshold = calibrate_threshold(std::move(scores), b.alpha);
    b.detectors.push_back(std::move(det));
  };

  if (options.mode == DetectorMode::kGlobal) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (is_defined(scan.profiles[i])) members.push_back(i);
    }
    if (members.size() < n) {
      b.warnings.push_back(std::to_string(n - members.size()) +
                           " sample(s) without a same-class neighbour excluded");
    }
    if (members.size() < kMinClassTraining) {
      throw usage_error("insufficient training samples for global detector");
    }
    train(0, members, b.weight_table.row(0));
    return result;
  }

  std::vector<std::vector<std::size_t>> by_class(reference.num_classes);
  for (std::size_t i = 0; i < n; ++i) by_class[reference.predicted_labels[i]].push_back(i);
  for (std::uint32_t c = 0; c < reference.num_classes; ++c) {
    if (by_class[c].size() < kMinClassTraining) {
      b.unsupported_classes.push_back(c);
      b.warnings.push_back("class " + std::to_string(c) + " has " +
                           std::to_string(by_class[c].size()) +
                           " predicted member(s); unsupported");
      continue;
    }
    train(c, by_class[c], b.weights_for(c));
  }
  return result;
}

inline ReferenceScan scan_for(const ActivationDump& reference, const FitOptions& options) {
  validate(reference);
  const std::size_t k = options.k.value_or(default_k(reference.num_samples));
  const bool graphs = options.mode == DetectorMode::kClassWeighted;
  return scan_reference(reference, graphs ? std::optional<std::size_t>(k) : std::nullopt);
}

inline FitResult fit_detailed(const ActivationDump& reference, const FitOptions& options) {
  check_alpha(options.alpha);
  return fit_from_scan(reference, scan_for(reference, options), options);
}

inline DetectorBundle fit(const ActivationDump& reference, const FitOptions& options) {
  return fit_detailed(reference, options).bundle;
}

// ---------------------------------------------------------------------------
// Inference

enum class Verdict { kAnomalous, kNormal, kError };

inline std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kAnomalous:
      return "ANOMALOUS";
    case Verdict::kNormal:
      return "NORMAL";
    case Verdict::kError:
      break;
  }
  return "ERROR";
}

struct DetectionRecord {
  std::uint32_t predicted_class = 0;
  double score = 0.0;
  double threshold = 0.0;
  Verdict verdict = Verdict::kError;
  std::string error;  // set iff verdict == kError

  bool operator==(const DetectionRecord&) const = default;
};

struct DetectionReport {
  std::vector<DetectionRecord> records;
  std::map<std::uint32_t, double> flagged_fraction;  // per predicted class

  bool operator==(const DetectionReport&) const = default;
};

struct DetectOptions {
  // Queries are the reference itself; each excludes itself from the ranks.
  bool self_reference = false;
};

inline DetectionReport detect(const DetectorBundle& bundle, const ActivationDump& queries,
                              const ActivationDump& reference,
                              const DetectOptions& options = {}) {
  validate(queries);
  validate(reference);
  if (queries.layers != bundle.layers || reference.layers != bundle.layers) {
    throw integrity_error("layer metadata does not match the bundle");
  }
  if (dump_digest(reference) != bundle.reference_digest) {
    throw integrity_error("reference dump differs from fit-time reference");
  }
  if (options.self_reference && !(queries == reference)) {
    throw usage_error("self-referenced detection needs the reference as queries");
  }
  const auto profiles =
      detail::profiles_lenient(queries, reference, options.self_reference);

  DetectionReport report;
  report.records.resize(queries.num_samples);
  std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> counts;
  for (std::size_t i = 0; i < queries.num_samples; ++i) {
    auto& rec = report.records[i];
    rec.predicted_class = queries.predicted_labels[i];
    const ClassDetector* det = bundle.detector_for(rec.predicted_class);
    if (det == nullptr) {
      rec.error = "class " + std::to_string(rec.predicted_class) + " unsupported by bundle";
    } else if (!is_defined(profiles[i])) {
      rec.error = "class absent from reference set (class " +
                  std::to_string(rec.predicted_class) + ")";
    } else {
      const auto x = weighted_profile(profiles[i], bundle.weights_for(rec.predicted_class));
      rec.score = anomaly_score(*det, x);
      rec.threshold = det->threshold;
      rec.verdict = rec.score > rec.threshold ? Verdict::kAnomalous : Verdict::kNormal;
      auto& [flagged, total] = counts[rec.predicted_class];
      ++total;
      if (rec.verdict == Verdict::kAnomalous) ++flagged;
    }
  }
  for (const auto& [cls, ft] : counts) {
    report.flagged_fraction[cls] =
        static_cast<double>(ft.first) / static_cast<double>(ft.second);
  }
  return report;
}

inline void write_report_table(std::ostream& out, const DetectionReport& report) {
  out << "sample\tpredicted_class\tscore\tthreshold\tverdict\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const auto& r = report.records[i];
    out << i << '\t' << r.predicted_class << '\t';
    if (r.verdict == Verdict::kError) {
      out << "nan\tnan\tERROR\n";
    } else {
      out << r.score << '\t' << r.threshold << '\t' << verdict_name(r.verdict) << '\n';
    }
  }
}

inline nlohmann::ordered_json report_to_json(const DetectionReport& report) {
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const auto& r = report.records[i];
    nlohmann::ordered_json row;
    row["sample"] = i;
    row["predicted_class"] = r.predicted_class;
    if (r.verdict == Verdict::kError) {
      row["score"] = nullptr;
      row["threshold"] = nullptr;
      row["verdict"] = verdict_name(r.verdict);
      row["error"] = r.error;
    } else {
      row["score"] = r.score;
      row["threshold"] = r.threshold;
      row["verdict"] = verdict_name(r.verdict);
    }
    samples.push_back(std::move(row));
  }
  nlohmann::ordered_json fractions = nlohmann::ordered_json::object();
  for (const auto& [cls, f] : report.flagged_fraction) {
    fractions[std::to_string(cls)] = f;
  }
  nlohmann::ordered_json doc;
  doc["samples"] = std::move(samples);
  doc["flagged_fraction_per_class"] = std::move(fractions);
  return doc;
}

// ---------------------------------------------------------------------------
// Bundle container:
//   "TEDLASTB"                      8-byte magic
//   u64 header length, UTF-8 JSON header
//   f64 weights[C*N], f64 modularity_raw[C*N]
//   per detector: f64 class_id, p, num_training, mean[N], components[p*N]
//                 (row-major), eigenvalues[p], tau
//   u64 FNV-1a of all preceding bytes
// All numbers little-endian.

inline constexpr std::string_view kBundleMagic = "TEDLASTB";
inline constexpr int kBundleVersion = 1;

inline std::string digest_hex(std::uint64_t d) {
  std::ostringstream s;
  s << "0x" << std::hex << std::setw(16) << std::setfill('0') << d;
  return s.str();
}

inline std::vector<unsigned char> encode_bundle(const DetectorBundle& b) {
  nlohmann::ordered_json h;
  h["version"] = kBundleVersion;
  h["mode"] = mode_name(b.mode);
  h["alpha"] = b.alpha;
  h["k"] = b.k;
  h["resolution"] = b.resolution;
  h["variance_target"] = b.variance_target;
  h["num_classes"] = b.num_classes;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : b.layers) layers.push_back({{"name", l.name}, {"dim", l.dim}});
  h["layers"] = std::move(layers);
  h["reference_digest"] = digest_hex(b.reference_digest);
  h["weight_table_classes"] = b.weight_table.num_classes;
  h["weight_warnings"] = b.weight_table.warnings;
  h["num_detectors"] = b.detectors.size();
  auto degenerate = nlohmann::ordered_json::array();
  for (const auto& d : b.detectors) degenerate.push_back(d.degenerate);
  h["degenerate"] = std::move(degenerate);
  h["unsupported_classes"] = b.unsupported_classes;
  h["warnings"] = b.warnings;
  const std::string header = h.dump();

  std::vector<unsigned char> out(kBundleMagic.begin(), kBundleMagic.end());
  append_le<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  append_le<double>(out, std::span<const double>(b.weight_table.weights));
  append_le<double>(out, std::span<const double>(b.weight_table.modularity_raw));
  for (const auto& d : b.detectors) {
    append_le<double>(out, static_cast<double>(d.class_id));
    append_le<double>(out, static_cast<double>(d.num_components()));
    append_le<double>(out, static_cast<double>(d.num_training));
    append_le<double>(out, std::span<const double>(d.mean.data(), d.mean.size()));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
        d.components;
    append_le<double>(out, std::span<const double>(rm.data(), rm.size()));
    append_le<double>(out, std::span<const double>(d.eigenvalues.data(),
                                                   d.eigenvalues.size()));
    append_le<double>(out, d.threshold);
  }
  Fnv1a64 checksum;
  checksum.update(out);
  append_le<std::uint64_t>(out, checksum.digest());
  return out;
}

namespace detail {

/// Bounds-checked little-endian reader over a byte buffer.
class ByteCursor {
 public:
  explicit ByteCursor(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  template <typename T>
  std::vector<T> take(std::size_t count) {
    if (count > (bytes_.size() - pos_) / sizeof(T)) {
      throw integrity_error("bundle truncated at byte " + std::to_string(pos_));
    }
    auto v = decode_le<T>(bytes_, pos_, count);
    pos_ += count * sizeof(T);
    return v;
  }
  template <typename T>
  T take_one() {
    return take<T>(1).front();
  }
  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::size_t as_count(double v, const char* what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) {
    throw integrity_error(std::string("bundle field ") + what + " is not a count");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline DetectorBundle decode_bundle(std::span<const unsigned char> bytes) {
  if (bytes.size() < kBundleMagic.size() + 16 ||
      !std::equal(kBundleMagic.begin(), kBundleMagic.end(), bytes.begin())) {
    throw integrity_error(bytes.size() < kBundleMagic.size() + 16
                              ? "bundle truncated"
                              : "not a detector bundle (bad magic)");
  }
  {
    Fnv1a64 checksum;
    checksum.update(bytes.first(bytes.size() - 8));
    const auto stored = decode_le<std::uint64_t>(bytes, bytes.size() - 8, 1).front();
    if (stored != checksum.digest()) {
      throw integrity_error("bundle checksum mismatch (truncated or corrupted file)");
    }
  }
  detail::ByteCursor cur(bytes.first(bytes.size() - 8));
  cur.take<unsigned char>(kBundleMagic.size());
  const auto header_len = cur.take_one<std::uint64_t>();
  if (header_len > cur.remaining()) throw integrity_error("bundle truncated in header");
  const auto header_bytes = cur.take<unsigned char>(header_len);

  DetectorBundle b;
  std::size_t num_detectors = 0;
  std::vector<bool> degenerate;
  try {
    const auto h = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
    if (h.at("version").get<int>() != kBundleVersion) {
      throw integrity_error("unsupported bundle version");
    }
    b.mode = parse_mode(h.at("mode").get<std::string>());
    b.alpha = h.at("alpha").get<double>();
    b.k = h.at("k").get<std::size_t>();
    b.resolution = h.at("resolution").get<double>();
    b.variance_target = h.at("variance_target").get<double>();
    b.num_classes = h.at("num_classes").get<std::size_t>();
    for (const auto& l : h.at("layers")) {
      b.layers.push_back({l.at("name").get<std::string>(), l.at("dim").get<std::size_t>()});
    }
    b.reference_digest =
        std::stoull(h.at("reference_digest").get<std::string>(), nullptr, 16);
    b.weight_table.num_classes = h.at("weight_table_classes").get<std::size_t>();
    b.weight_table.warnings = h.at("weight_warnings").get<std::vector<std::string>>();
    num_detectors = h.at("num_detectors").get<std::size_t>();
    degenerate = h.at("degenerate").get<std::vector<bool>>();
    b.unsupported_classes = h.at("unsupported_classes").get<std::vector<std::uint32_t>>();
    b.warnings = h.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error(std::string("malformed bundle header: ") + e.what());
  } catch (const std::logic_error& e) {
    throw integrity_error(std::string("malformed bundle header: ") + e.what());
  }
  if (degenerate.size() != num_detectors) {
    throw integrity_error("malformed bundle header: detector count mismatch");
  }

  const std::size_t layers = b.layers.size();
  b.weight_table.num_layers = layers;
  b.weight_table.resolution = b.resolution;
  const std::size_t cells = b.weight_table.num_classes * layers;
  b.weight_table.weights = cur.take<double>(cells);
  b.weight_table.modularity_raw = cur.take<double>(cells);

  for (std::size_t d = 0; d < num_detectors; ++d) {
    ClassDetector det;
    det.class_id = static_cast<std::uint32_t>(
        detail::as_count(cur.take_one<double>(), "class_id"));
    const std::size_t p = detail::as_count(cur.take_one<double>(), "p");
    det.num_training = detail::as_count(cur.take_one<double>(), "num_training");
    if (p < 1 || p > layers) throw integrity_error("bundle detector has invalid p");
    const auto mean = cur.take<double>(layers);
    det.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(layers));
    const auto comps = cur.take<double>(p * layers);
    det.components = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                    Eigen::RowMajor>>(
        comps.data(), static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(layers));
    const auto evals = cur.take<double>(p);
    det.eigenvalues =
        Eigen::Map<const Eigen::VectorXd>(evals.data(), static_cast<Eigen::Index>(p));
    det.threshold = cur.take_one<double>();
    det.degenerate = degenerate[d];
    b.detectors.push_back(std::move(det));
  }
  if (cur.remaining() != 0) throw integrity_error("trailing bytes in bundle");
  return b;
}

inline void save_bundle(const DetectorBundle& bundle, const std::filesystem::path& path) {
  write_file_bytes(path, encode_bundle(bundle));
}

inline DetectorBundle load_bundle(const std::filesystem::path& path) {
  return decode_bundle(read_file_bytes(path));
}

}  // namespace tedlast
