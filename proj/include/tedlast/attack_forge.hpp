#pragma once

// Construction of poisoned and laundry training sets for the poisoning tricks
// Laundry, Slow Release and Target Mapping (source-specific, and source plus
// trigger attribute), alone or combined. Operates on CHW float images in
// [0, 1]; training the victim model happens elsewhere.
//
// Trigger application A(x, beta, mask):
//   blend: x' = (1 - beta) x + beta * pattern           (pattern shaped like x)
//   patch: the same convex mix inside the patch rectangle; beta = 1 overwrites
// restricted to pixels whose grid cell is selected by the segment mask, then
// clamped to [0, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tedlast/binary_io.hpp"
#include "tedlast/error.hpp"

namespace tedlast {

struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // CHW

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t r, std::size_t col) {
    return pixels[(c * height + r) * width + col];
  }
  float at(std::size_t c, std::size_t r, std::size_t col) const {
    return pixels[(c * height + r) * width + col];
  }
  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Image&) const = default;
};

struct ImageSample {
  Image image;
  std::uint32_t label = 0;

  bool operator==(const ImageSample&) const = default;
};

/// Labelled images of one shape, stored contiguously.
struct ImageDataset {
  std::size_t num_classes = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // size() * channels * height * width
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_size() const noexcept { return channels * height * width; }

  ImageSample sample(std::size_t i) const {
    ImageSample s{Image(channels, height, width), labels[i]};
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(i * image_size()),
                image_size(), s.image.pixels.begin());
    return s;
  }
  void push_back(const ImageSample& s) {
    pixels.insert(pixels.end(), s.image.pixels.begin(), s.image.pixels.end());
    labels.push_back(s.label);
  }

  bool operator==(const ImageDataset&) const = default;
};

inline void validate(const ImageDataset& d) {
  if (d.num_classes < 2) throw integrity_error("dataset needs at least 2 classes");
  if (d.channels == 0 || d.height == 0 || d.width == 0) {
    throw integrity_error("dataset image dimensions must be positive");
  }
  if (d.pixels.size() != d.size() * d.image_size()) {
    throw integrity_error("dataset pixel count does not match labels and shape");
  }
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    if (!(d.pixels[i] >= 0.0f && d.pixels[i] <= 1.0f)) {
      throw integrity_error("pixel out of [0, 1] in sample " +
                            std::to_string(i / d.image_size()));
    }
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] >= d.num_classes) {
      throw integrity_error("label out of range at sample " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Trigger primitives

inline ImageSample apply_blend(const ImageSample& x, const Image& pattern, double beta) {
  if (!x.image.same_shape(pattern)) throw usage_error("blend pattern shape mismatch");
  if (!(beta >= 0.0 && beta <= 1.0)) throw usage_error("beta must be in [0, 1]");
  ImageSample out = x;
  for (std::size_t i = 0; i < out.image.pixels.size(); ++i) {
    const double v = (1.0 - beta) * x.image.pixels[i] + beta * pattern.pixels[i];
    out.image.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

struct Anchor {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const Anchor&) const = default;
};

inline void check_patch_bounds(const Image& image, const Image& patch, Anchor anchor) {
  if (patch.channels != image.channels) throw usage_error("patch channel count mismatch");
  if (anchor.row + patch.height > image.height || anchor.col + patch.width > image.width) {
    throw usage_error("patch at (" + std::to_string(anchor.row) + ", " +
                      std::to_string(anchor.col) + ") exceeds image bounds");
  }
}

/// Overwrites the patch rectangle at `anchor`.
inline ImageSample apply_patch(const ImageSample& x, const Image& patch, Anchor anchor) {
  check_patch_bounds(x.image, patch, anchor);
  ImageSample out = x;
  for (std::size_t c = 0; c < patch.channels; ++c) {
    for (std::size_t r = 0; r < patch.height; ++r) {
      for (std::size_t col = 0; col < patch.width; ++col) {
        out.image.at(c, anchor.row + r, anchor.col + col) = patch.at(c, r, col);
      }
    }
  }
  return out;
}

/// Selected cells of a rows x cols partition of the trigger.
struct SegmentMask {
  std::size_t rows = 4;
  std::size_t cols = 4;
  std::vector<bool> cells;  // row-major

  static SegmentMask full(std::size_t rows, std::size_t cols) {
    return {rows, cols, std::vector<bool>(rows * cols, true)};
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), true));
  }
  bool is_full() const { return count() == cells.size(); }

  /// Whether pixel (r, c) of an h x w trigger falls into a selected cell.
  bool covers(std::size_t r, std::size_t c, std::size_t h, std::size_t w) const {
    return cells[(r * rows / h) * cols + (c * cols / w)];
  }

  std::vector<std::size_t> selected() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i]) out.push_back(i);
    }
    return out;
  }

  bool operator==(const SegmentMask&) const = default;
};

/// Uniformly random subset of exactly `count` cells.
inline SegmentMask sample_segments(std::size_t rows, std::size_t cols, std::size_t count,
                                   std::mt19937_64& rng) {
  if (rows == 0 || cols == 0) throw usage_error("segment grid must be non-empty");
  if (count > rows * cols) {
    throw usage_error("segment count exceeds grid size");
  }
  std::vector<std::size_t> order(rows * cols);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  SegmentMask mask{rows, cols, std::vector<bool>(rows * cols, false)};
  for (std::size_t i = 0; i < count; ++i) mask.cells[order[i]] = true;
  return mask;
}

// ---------------------------------------------------------------------------
// Specs

enum class TriggerKind { kBlend, kPatch };

struct TriggerSpec {
  TriggerKind kind = TriggerKind::kBlend;
  Image pattern;   // image-shaped for blend, patch-shaped for patch
  Anchor anchor;   // patch only
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  std::size_t train_segment_count = 8;
  double beta = 1.0;                  // intensity when no trick dictates one
  std::vector<double> intensity_set;  // R_t, training intensities for Slow Release
  std::vector<std::pair<double, double>> inference_map;  // g: beta_t -> beta

  std::optional<double> inference_beta(double beta_t) const {
    for (const auto& [from, to] : inference_map) {
      if (std::abs(from - beta_t) < 1e-9) return to;
    }
    return std::nullopt;
  }
};

/// Key part that matches anything when empty.
using AnyClass = std::optional<std::uint32_t>;
using AnyBeta = std::optional<double>;

struct MappingRule {
  AnyClass source;
  AnyBeta beta;
  std::uint32_t target = 0;
  bool operator==(const MappingRule&) const = default;
};

struct MappingTable {
  std::vector<MappingRule> rules;
};

inline bool same_beta(const AnyBeta& a, const AnyBeta& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::abs(*a - *b) < 1e-9;
}

inline void validate(const MappingTable& table, std::size_t num_classes) {
  for (std::size_t i = 0; i < table.rules.size(); ++i) {
    const auto& r = table.rules[i];
    if (r.target >= num_classes || (r.source && *r.source >= num_classes)) {
      throw usage_error("mapping rule " + std::to_string(i) + " references a class >= " +
                        std::to_string(num_classes));
    }
    if (r.beta && !(*r.beta >= 0.0 && *r.beta <= 1.0)) {
      throw usage_error("mapping rule " + std::to_string(i) + " has beta outside [0, 1]");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (table.rules[j].source == r.source && same_beta(table.rules[j].beta, r.beta)) {
        throw usage_error("duplicate mapping key in rules " + std::to_string(j) + " and " +
                          std::to_string(i));
      }
    }
  }
}

/// Target for (y, beta), most specific key first:
/// (y, beta), (y, ANY), (ANY, beta), (ANY, ANY). nullopt means "not poisoned".
inline std::optional<std::uint32_t> target_map(const MappingTable& table, std::uint32_t y,
                                               AnyBeta beta) {
  auto find = [&](AnyClass src, AnyBeta b) -> std::optional<std::uint32_t> {
    for (const auto& r : table.rules) {
      if (r.source == src && same_beta(r.beta, b)) return r.target;
    }
    return std::nullopt;
  };
  if (beta) {
    if (auto t = find(y, beta)) return t;
  }
  if (auto t = find(y, std::nullopt)) return t;
  if (beta) {
    if (auto t = find(std::nullopt, beta)) return t;
  }
  return find(std::nullopt, std::nullopt);
}

struct PoisonSpec {
  TriggerSpec trigger;
  MappingTable mapping;
  std::vector<double> poison_rates;  // one per mapping rule
  bool laundry = false;
  bool slow_release = false;
  std::uint64_t seed = 0;
};

inline void validate(const PoisonSpec& spec, std::size_t num_classes) {
  const auto& t = spec.trigger;
  if (t.pattern.pixels.empty()) throw usage_error("trigger pattern is empty");
  for (float v : t.pattern.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw usage_error("trigger pattern outside [0, 1]");
  }
  if (t.train_segment_count > t.grid_rows * t.grid_cols || t.grid_rows == 0 ||
      t.grid_cols == 0) {
    throw usage_error("train_segment_count exceeds the segment grid");
  }
  if (!(t.beta >= 0.0 && t.beta <= 1.0)) throw usage_error("trigger beta outside [0, 1]");
  for (double b : t.intensity_set) {
    if (!(b >= 0.0 && b <= 1.0)) throw usage_error("intensity outside [0, 1]");
    const auto g = t.inference_beta(b);
    if (!g) throw usage_error("inference_map is not defined for intensity " + std::to_string(b));
    if (!(*g >= 0.0 && *g <= 1.0)) throw usage_error("inference intensity outside [0, 1]");
  }
  if (spec.slow_release && t.intensity_set.empty()) {
    throw usage_error("slow release needs a non-empty intensity_set");
  }
  validate(spec.mapping, num_classes);
  if (spec.mapping.rules.empty()) throw usage_error("mapping table is empty");
  if (spec.poison_rates.size() != spec.mapping.rules.size()) {
    throw usage_error("need exactly one poison rate per mapping rule");
  }
  for (double r : spec.poison_rates) {
    if (!(r > 0.0 && r <= 1.0)) throw usage_error("poison rate outside (0, 1]");
  }
}

/// Applies the trigger with intensity `beta`, restricted to `mask`.
inline ImageSample apply_trigger(const ImageSample& x, const TriggerSpec& t, double beta,
                                 const SegmentMask& mask) {
  ImageSample out = x;
  auto mix = [beta](float base, float trig) {
    const double v = (1.0 - beta) * base + beta * trig;
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
  };
  if (t.kind == TriggerKind::kBlend) {
    if (!x.image.same_shape(t.pattern)) throw usage_error("blend pattern shape mismatch");
    const std::size_t h = x.image.height, w = x.image.width;
    for (std::size_t c = 0; c < x.image.channels; ++c) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
          if (mask.covers(r, col, h, w)) {
            out.image.at(c, r, col) = mix(x.image.at(c, r, col), t.pattern.at(c, r, col));
          }
        }
      }
    }
  } else {
    check_patch_bounds(x.image, t.pattern, t.anchor);
    const std::size_t h = t.pattern.height, w = t.pattern.width;
    for (std::size_t c = 0; c < t.pattern.channels; ++c) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
          if (mask.covers(r, col, h, w)) {
            auto& px = out.image.at(c, t.anchor.row + r, t.anchor.col + col);
            px = mix(x.image.at(c, t.anchor.row + r, t.anchor.col + col),
                     t.pattern.at(c, r, col));
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset construction

struct Provenance {
  std::string set;  // "poison", "laundry" or "attack"
  std::size_t original_index = 0;
  std::uint32_t original_label = 0;
  std::uint32_t label = 0;
  double beta = 1.0;                        // intensity actually applied
  std::optional<double> inference_beta;     // g(beta_t) under Slow Release
  SegmentMask mask;

  bool operator==(const Provenance&) const = default;
};

struct ForgedSet {
  ImageDataset data;
  std::vector<Provenance> provenance;
  std::vector<std::string> warnings;
};

namespace detail {

inline ForgedSet empty_like(const ImageDataset& d) {
  ForgedSet s;
  s.data.num_classes = d.num_classes;
  s.data.channels = d.channels;
  s.data.height = d.height;
  s.data.width = d.width;
  return s;
}

inline double pick(std::span<const double> values, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, values.size() - 1);
  return values[dist(rng)];
}

/// `count` indices drawn uniformly without replacement, returned ascending.
inline std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t count,
                                     std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Training-time trigger regime shared by poison and laundry samples.
struct TrainTrigger {
  double beta;
  std::optional<double> inference_beta;
  SegmentMask mask;
};

inline TrainTrigger train_trigger(const PoisonSpec& spec, AnyBeta wanted,
                                  std::mt19937_64& rng) {
  const auto& t = spec.trigger;
  if (!spec.slow_release) {
    return {wanted.value_or(t.beta), std::nullopt,
            SegmentMask::full(t.grid_rows, t.grid_cols)};
  }
  std::vector<double> candidates;
  for (double bt : t.intensity_set) {
    if (!wanted || std::abs(*t.inference_beta(bt) - *wanted) < 1e-9) {
      candidates.push_back(bt);
    }
  }
  if (candidates.empty()) {
    throw usage_error("no training intensity maps to beta " + std::to_string(*wanted));
  }
  const double bt = pick(candidates, rng);
  SegmentMask mask =
      sample_segments(t.grid_rows, t.grid_cols, t.train_segment_count, rng);
  return {bt, t.inference_beta(bt), std::move(mask)};
}

}  // namespace detail

/// Poisoned samples: per mapping rule, ceil(rate * |eligible|) samples of the
/// rule's source (all samples for ANY), drawn without replacement across
/// rules, triggered and relabelled through the mapping table.
inline ForgedSet build_poison_set(const ImageDataset& data, const PoisonSpec& spec,
                                  std::mt19937_64& rng) {
  validate(data);
  validate(spec, data.num_classes);
  ForgedSet out = detail::empty_like(data);
  std::vector<bool> used(data.size(), false);

  for (std::size_t e = 0; e < spec.mapping.rules.size(); ++e) {
    const auto& rule = spec.mapping.rules[e];
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!rule.source || data.labels[i] == *rule.source) eligible.push_back(i);
    }
    if (eligible.empty()) {
      throw usage_error("mapping rule " + std::to_string(e) + " has no eligible samples");
    }
    const auto count = static_cast<std::size_t>(
        std::ceil(spec.poison_rates[e] * static_cast<double>(eligible.size()) - 1e-9));
    if (count == 0) {
      out.warnings.push_back("mapping rule " + std::to_string(e) +
                             " selects zero samples; skipped");
      continue;
    }
    std::vector<std::size_t> available;
    for (auto i : eligible) {
      if (!used[i]) available.push_back(i);
    }
    if (available.size() < count) {
      throw usage_error("mapping rule " + std::to_string(e) + " needs " +
                        std::to_string(count) + " samples but only " +
                        std::to_string(available.size()) + " remain");
    }
    for (auto i : detail::draw(std::move(available), count, rng)) {
      used[i] = true;
      const ImageSample x = data.sample(i);
      auto trig = detail::train_trigger(spec, rule.beta, rng);
      const AnyBeta label_beta =
          spec.slow_release ? trig.inference_beta : AnyBeta(trig.beta);
      const auto target = target_map(spec.mapping, x.label, label_beta);
      if (!target) throw Error(ErrorKind::kInternal, "mapping lookup missed its own rule");
      ImageSample poisoned = apply_trigger(x, spec.trigger, trig.beta, trig.mask);
      poisoned.label = *target;
      out.data.push_back(poisoned);
      out.provenance.push_back({"poison", i, x.label, *target, trig.beta,
                                trig.inference_beta, std::move(trig.mask)});
    }
  }
  return out;
}

/// Source classes named by the mapping; empty when some rule has ANY source.
inline std::set<std::uint32_t> source_classes(const MappingTable& table) {
  std::set<std::uint32_t> sources;
  for (const auto& r : table.rules) {
    if (!r.source) return {};
    sources.insert(*r.source);
  }
  return sources;
}

/// Laundry samples: `poison_count` samples outside the source classes (and
/// outside `exclude`), triggered under the same regime, labels unchanged.
inline ForgedSet build_laundry_set(const ImageDataset& data, const PoisonSpec& spec,
                                   std::size_t poison_count, std::mt19937_64& rng,
                                   std::span<const std::size_t> exclude = {}) {
  validate(data);
  validate(spec, data.num_classes);
  ForgedSet out = detail::empty_like(data);
  const auto sources = source_classes(spec.mapping);
  std::vector<bool> excluded(data.size(), false);
  for (auto i : exclude) {
    if (i < data.size()) excluded[i] = true;
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!excluded[i] && !sources.contains(data.labels[i])) pool.push_back(i);
  }
  if (pool.size() < poison_count) {
    throw usage_error("insufficient non-source samples for laundry: need " +
                      std::to_string(poison_count) + ", have " +
                      std::to_string(pool.size()));
  }
  for (auto i : detail::draw(std::move(pool), poison_count, rng)) {
    const ImageSample x = data.sample(i);
    auto trig = detail::train_trigger(spec, std::nullopt, rng);
    out.data.push_back(apply_trigger(x, spec.trigger, trig.beta, trig.mask));
    out.provenance.push_back({"laundry", i, x.label, x.label, trig.beta,
                              trig.inference_beta, std::move(trig.mask)});
  }
  return out;
}

/// Inference-time triggered samples: every eligible source sample with the
/// complete trigger at full strength (g(beta_t) under Slow Release), labelled
/// with the target the backdoor is meant to produce.
inline ForgedSet build_attack_set(const ImageDataset& data, const PoisonSpec& spec,
                                  std::mt19937_64& rng) {
  validate(data);
  validate(spec, data.num_classes);
  ForgedSet out = detail::empty_like(data);
  const auto& t = spec.trigger;
  const auto full = SegmentMask::full(t.grid_rows, t.grid_cols);
  for (std::size_t e = 0; e < spec.mapping.rules.size(); ++e) {
    const auto& rule = spec.mapping.rules[e];
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (rule.source && data.labels[i] != *rule.source) continue;
      double beta = rule.beta.value_or(t.beta);
      if (spec.slow_release && !rule.beta) {
        beta = *t.inference_beta(detail::pick(t.intensity_set, rng));
      }
      const ImageSample x = data.sample(i);
      const auto target = target_map(spec.mapping, x.label, beta);
      if (!target) continue;
      ImageSample triggered = apply_trigger(x, t, beta, full);
      triggered.label = *target;
      out.data.push_back(triggered);
      out.provenance.push_back({"attack", i, x.label, *target, beta, beta, full});
    }
  }
  return out;
}

struct ForgeResult {
  ForgedSet poison;
  ForgedSet laundry;  // empty unless the laundry trick is on
};

/// Poison set plus, when enabled, a laundry set of equal size; seeded from
/// spec.seed.
inline ForgeResult forge(const ImageDataset& data, const PoisonSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  ForgeResult r;
  r.poison = build_poison_set(data, spec, rng);
  r.laundry = detail::empty_like(data);
  if (spec.laundry) {
    std::vector<std::size_t> used;
    for (const auto& p : r.poison.provenance) used.push_back(p.original_index);
    r.laundry = build_laundry_set(data, spec, r.poison.data.size(), rng, used);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Dataset directories:
//   manifest.json    version, num_samples, num_classes, channels, height, width
//   images.f32       num_samples * C * H * W little-endian float32
//   labels.u32       num_samples little-endian uint32
//   provenance.json  optional, one row per sample

inline constexpr int kDatasetVersion = 1;

inline nlohmann::ordered_json provenance_to_json(const Provenance& p) {
  nlohmann::ordered_json j;
  j["set"] = p.set;
  j["original_index"] = p.original_index;
  j["original_label"] = p.original_label;
  j["label"] = p.label;
  j["beta"] = p.beta;
  j["inference_beta"] = p.inference_beta ? nlohmann::ordered_json(*p.inference_beta)
                                         : nlohmann::ordered_json(nullptr);
  j["grid"] = {p.mask.rows, p.mask.cols};
  j["mask"] = p.mask.selected();
  return j;
}

inline Provenance provenance_from_json(const nlohmann::json& j) {
  Provenance p;
  p.set = j.at("set").get<std::string>();
  p.original_index = j.at("original_index").get<std::size_t>();
  p.original_label = j.at("original_label").get<std::uint32_t>();
  p.label = j.at("label").get<std::uint32_t>();
  p.beta = j.at("beta").get<double>();
  if (!j.at("inference_beta").is_null()) p.inference_beta = j.at("inference_beta").get<double>();
  const auto grid = j.at("grid").get<std::vector<std::size_t>>();
  if (grid.size() != 2) throw integrity_error("provenance grid must have two entries");
  p.mask = {grid[0], grid[1], std::vector<bool>(grid[0] * grid[1], false)};
  for (auto c : j.at("mask").get<std::vector<std::size_t>>()) {
    if (c >= p.mask.cells.size()) throw integrity_error("provenance mask cell out of range");
    p.mask.cells[c] = true;
  }
  return p;
}

inline void write_dataset(const ImageDataset& data, const std::filesystem::path& dir,
                          const std::vector<Provenance>* provenance = nullptr) {
  validate(data);
  ensure_directory(dir);
  nlohmann::ordered_json m;
  m["version"] = kDatasetVersion;
  m["num_samples"] = data.size();
  m["num_classes"] = data.num_classes;
  m["channels"] = data.channels;
  m["height"] = data.height;
  m["width"] = data.width;
  write_file_text(dir / "manifest.json", m.dump(2) + "\n");
  std::vector<unsigned char> bytes;
  append_le<float>(bytes, std::span<const float>(data.pixels));
  write_file_bytes(dir / "images.f32", bytes);
  bytes.clear();
  append_le<std::uint32_t>(bytes, std::span<const std::uint32_t>(data.labels));
  write_file_bytes(dir / "labels.u32", bytes);
  if (provenance) {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& p : *provenance) rows.push_back(provenance_to_json(p));
    write_file_text(dir / "provenance.json", rows.dump(1) + "\n");
  }
}

inline ImageDataset read_dataset(const std::filesystem::path& dir) {
  ImageDataset d;
  std::size_t n = 0;
  try {
    const auto m = nlohmann::json::parse(read_file_text(dir / "manifest.json"));
    if (m.at("version").get<int>() != kDatasetVersion) {
      throw integrity_error("unsupported dataset version");
    }
    n = m.at("num_samples").get<std::size_t>();
    d.num_classes = m.at("num_classes").get<std::size_t>();
    d.channels = m.at("channels").get<std::size_t>();
    d.height = m.at("height").get<std::size_t>();
    d.width = m.at("width").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  const auto images = read_file_bytes(dir / "images.f32");
  const std::size_t expected = n * d.image_size() * 4;
  if (images.size() != expected) {
    throw integrity_error("images.f32: expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(images.size()));
  }
  d.pixels = decode_le<float>(images, 0, n * d.image_size());
  const auto labels = read_file_bytes(dir / "labels.u32");
  if (labels.size() != n * 4) {
    throw integrity_error("labels.u32: expected " + std::to_string(n * 4) +
                          " bytes, found " + std::to_string(labels.size()));
  }
  d.labels = decode_le<std::uint32_t>(labels, 0, n);
  validate(d);
  return d;
}

inline std::vector<Provenance> read_provenance(const std::filesystem::path& dir) {
  try {
    const auto rows = nlohmann::json::parse(read_file_text(dir / "provenance.json"));
    std::vector<Provenance> out;
    for (const auto& r : rows) out.push_back(provenance_from_json(r));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error(std::string("malformed provenance: ") + e.what());
  }
}

/// Writes poison rows followed by laundry rows (or a seeded shuffle of the
/// combined rows) with their provenance.
inline void emit_dataset(const ForgedSet& poison, const ForgedSet& laundry,
                         const std::filesystem::path& dir,
                         std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  ImageDataset all = poison.data;
  std::vector<Provenance> prov = poison.provenance;
  all.pixels.insert(all.pixels.end(), laundry.data.pixels.begin(), laundry.data.pixels.end());
  all.labels.insert(all.labels.end(), laundry.data.labels.begin(), laundry.data.labels.end());
  prov.insert(prov.end(), laundry.provenance.begin(), laundry.provenance.end());
  if (shuffle_seed) {
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
    ImageDataset shuffled = all;
    shuffled.pixels.clear();
    shuffled.labels.clear();
    std::vector<Provenance> shuffled_prov;
    for (auto i : order) {
      shuffled.push_back(all.sample(i));
      shuffled_prov.push_back(prov[i]);
    }
    all = std::move(shuffled);
    prov = std::move(shuffled_prov);
  }
  write_dataset(all, dir, &prov);
}

// ---------------------------------------------------------------------------
// JSON configuration
//
// {
//   "trigger": {
//     "kind": "blend" | "patch",
//     "pattern": {"type": "constant", "value": 1.0}
//              | {"type": "checkerboard", "low": 0, "high": 1}
//              | {"type": "random", "seed": 7}
//              | {"type": "file", "path": "trigger.f32"},
//     "pattern_shape": [C, H, W],          (patch only)
//     "anchor": [row, col],                (patch only)
//     "grid": [4, 4], "train_segment_count": 8, "beta": 1.0,
//     "intensity_set": [0.15, 0.3],
//     "inference_map": [[0.15, 0.3], [0.3, 0.6]]
//   },
//   "mapping": [{"source": 0 | "ANY", "beta": 0.4 | "ANY", "target": 3}],
//   "poison_rates": [0.1],
//   "tricks": {"laundry": true, "slow_release": false},
//   "seed": 42
// }

namespace detail {

inline Image make_pattern(const nlohmann::json& j, std::size_t c, std::size_t h,
                          std::size_t w, const std::filesystem::path& base_dir) {
  const auto type = j.at("type").get<std::string>();
  Image img(c, h, w);
  if (type == "constant") {
    std::fill(img.pixels.begin(), img.pixels.end(), j.at("value").get<float>());
  } else if (type == "checkerboard") {
    const float lo = j.value("low", 0.0f), hi = j.value("high", 1.0f);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) img.at(ch, r, col) = (r + col) % 2 ? hi : lo;
      }
    }
  } else if (type == "random") {
    std::mt19937_64 rng(j.at("seed").get<std::uint64_t>());
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : img.pixels) v = u(rng);
  } else if (type == "file") {
    const auto bytes = read_file_bytes(base_dir / j.at("path").get<std::string>());
    if (bytes.size() != img.pixels.size() * 4) {
      throw usage_error("trigger pattern file has the wrong size");
    }
    img.pixels = decode_le<float>(bytes, 0, img.pixels.size());
  } else {
    throw usage_error("unknown pattern type '" + type + "'");
  }
  return img;
}

inline AnyClass parse_any_class(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != "ANY") throw usage_error("class must be an index or \"ANY\"");
    return std::nullopt;
  }
  return j.get<std::uint32_t>();
}

inline AnyBeta parse_any_beta(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != "ANY") throw usage_error("beta must be a number or \"ANY\"");
    return std::nullopt;
  }
  return j.get<double>();
}

}  // namespace detail

/// Builds a spec for images of shape (channels, height, width). File
/// patterns resolve relative to `base_dir`.
inline PoisonSpec parse_poison_spec(const nlohmann::json& j, std::size_t channels,
                                    std::size_t height, std::size_t width,
                                    const std::filesystem::path& base_dir = ".") {
  PoisonSpec spec;
  try {
    const auto& t = j.at("trigger");
    const auto kind = t.at("kind").get<std::string>();
    if (kind == "blend") {
      spec.trigger.kind = TriggerKind::kBlend;
      spec.trigger.pattern = detail::make_pattern(t.at("pattern"), channels, height, width, base_dir);
    } else if (kind == "patch") {
      spec.trigger.kind = TriggerKind::kPatch;
      const auto shape = t.at("pattern_shape").get<std::vector<std::size_t>>();
      if (shape.size() != 3) throw usage_error("pattern_shape must be [C, H, W]");
      spec.trigger.pattern =
          detail::make_pattern(t.at("pattern"), shape[0], shape[1], shape[2], base_dir);
      const auto anchor = t.at("anchor").get<std::vector<std::size_t>>();
      if (anchor.size() != 2) throw usage_error("anchor must be [row, col]");
      spec.trigger.anchor = {anchor[0], anchor[1]};
      Image probe(channels, height, width);
      check_patch_bounds(probe, spec.trigger.pattern, spec.trigger.anchor);
    } else {
      throw usage_error("trigger kind must be blend or patch");
    }
    if (t.contains("grid")) {
      const auto grid = t.at("grid").get<std::vector<std::size_t>>();
      if (grid.size() != 2) throw usage_error("grid must be [rows, cols]");
      spec.trigger.grid_rows = grid[0];
      spec.trigger.grid_cols = grid[1];
    }
    spec.trigger.train_segment_count = t.value("train_segment_count", std::size_t{8});
    spec.trigger.beta = t.value("beta", 1.0);
    spec.trigger.intensity_set = t.value("intensity_set", std::vector<double>{});
    for (const auto& pair : t.value("inference_map", nlohmann::json::array())) {
      spec.trigger.inference_map.emplace_back(pair.at(0).get<double>(), pair.at(1).get<double>());
    }
    for (const auto& r : j.at("mapping")) {
      spec.mapping.rules.push_back({detail::parse_any_class(r.at("source")),
                                    detail::parse_any_beta(r.at("beta")),
                                    r.at("target").get<std::uint32_t>()});
    }
    spec.poison_rates = j.at("poison_rates").get<std::vector<double>>();
    const auto& tricks = j.at("tricks");
    spec.laundry = tricks.value("laundry", false);
    spec.slow_release = tricks.value("slow_release", false);
    spec.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("malformed poison spec: ") + e.what());
  }
  return spec;
}

}  // namespace tedlast
