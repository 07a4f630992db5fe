#pragma once

// Topological evolution features: per-layer nearest-same-class ranks, the
// rank profile across layers, its cumulative topological distance, and the
// per-layer k-nearest-neighbour graphs used for layer weighting.
//
// All distances are exact Euclidean (squared, accumulated in double). Ties
// are broken by the lower reference index, so every ordering is total and
// results are reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tedlast/activation_store.hpp"
#include "tedlast/error.hpp"
#include "tedlast/parallel.hpp"

namespace tedlast {

struct RankProfile {
  std::vector<std::uint32_t> ranks;  // ranks[l], 1-based
  std::uint64_t ctd = 0;

  bool operator==(const RankProfile&) const = default;
};

/// Undirected, unweighted graph on num_nodes nodes. Edges are stored once
/// with first < second, sorted ascending.
struct LayerGraph {
  std::size_t num_nodes = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<std::uint32_t> degrees;

  std::size_t num_edges() const noexcept { return edges.size(); }

  bool operator==(const LayerGraph&) const = default;
};

inline std::uint64_t cumulative_topological_distance(
    std::span<const std::uint32_t> ranks) {
  std::uint64_t total = 0;
  for (std::size_t l = 1; l < ranks.size(); ++l) {
    total += ranks[l] > ranks[l - 1] ? ranks[l] - ranks[l - 1]
                                     : ranks[l - 1] - ranks[l];
  }
  return total;
}

inline RankProfile make_profile(std::vector<std::uint32_t> ranks) {
  RankProfile p{std::move(ranks), 0};
  p.ctd = cumulative_topological_distance(p.ranks);
  return p;
}

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum;
}

/// Squared distances from `query` to every row of `refs`.
inline void distance_row(std::span<const float> query, const FloatMatrix& refs,
                         std::vector<double>& out) {
  out.resize(refs.rows());
  for (std::size_t j = 0; j < refs.rows(); ++j) {
    out[j] = squared_distance(query, refs.row(j));
  }
}

namespace detail {

inline constexpr std::size_t kNoExclusion = static_cast<std::size_t>(-1);

/// Rank of the first reference labelled `cls` in the (distance, index)
/// ordering of all references except `exclude`. Returns 0 if none qualifies.
inline std::uint32_t rank_in_row(std::span<const double> dist,
                                 std::span<const std::uint32_t> labels,
                                 std::uint32_t cls, std::size_t exclude) {
  std::size_t best = kNoExclusion;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (j == exclude || labels[j] != cls) continue;
    if (best == kNoExclusion || dist[j] < dist[best]) best = j;
  }
  if (best == kNoExclusion) return 0;
  const double db = dist[best];
  std::uint32_t ahead = 0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (j == exclude) continue;
    if (dist[j] < db || (dist[j] == db && j < best)) ++ahead;
  }
  return ahead + 1;
}

inline void check_dim(std::size_t query_dim, std::size_t ref_dim) {
  if (query_dim != ref_dim) {
    throw usage_error("dimension mismatch: query has " + std::to_string(query_dim) +
                      ", reference has " + std::to_string(ref_dim));
  }
}

}  // namespace detail

inline std::uint32_t nearest_same_class_rank(
    std::span<const float> query, const FloatMatrix& reference,
    std::span<const std::uint32_t> reference_labels, std::uint32_t predicted_class,
    std::optional<std::size_t> exclude_index = std::nullopt) {
  detail::check_dim(query.size(), reference.cols());
  if (reference_labels.size() != reference.rows()) {
    throw usage_error("reference label count does not match reference rows");
  }
  std::vector<double> dist;
  distance_row(query, reference, dist);
  const std::uint32_t rank = detail::rank_in_row(
      dist, reference_labels, predicted_class,
      exclude_index.value_or(detail::kNoExclusion));
  if (rank == 0) throw integrity_error("class absent from reference set");
  return rank;
}

namespace detail {

inline void check_same_layers(const ActivationDump& a, const ActivationDump& b) {
  if (a.layers != b.layers) {
    throw integrity_error("layer mismatch between query and reference dumps");
  }
}

/// Verifies that every class predicted among `queries` has enough reference
/// members (two when a query may exclude itself from the reference).
inline void check_class_presence(const ActivationDump& queries,
                                 const ActivationDump& reference,
                                 bool self_reference) {
  std::vector<std::size_t> count(std::max(reference.num_classes, queries.num_classes), 0);
  for (auto c : reference.predicted_labels) ++count[c];
  const std::size_t needed = self_reference ? 2 : 1;
  for (auto c : queries.predicted_labels) {
    if (count[c] < needed) {
      throw integrity_error("class absent from reference set (class " +
                            std::to_string(c) + ", layer 0)");
    }
  }
}

}  // namespace detail

inline RankProfile ted_profile(const ActivationDump& dump, std::size_t sample_index,
                               const ActivationDump& reference, bool self_reference) {
  detail::check_same_layers(dump, reference);
  if (sample_index >= dump.num_samples) {
    throw usage_error("sample index out of range");
  }
  if (self_reference && sample_index >= reference.num_samples) {
    throw usage_error("self-referenced sample index out of reference range");
  }
  const std::uint32_t cls = dump.predicted_labels[sample_index];
  const std::size_t exclude = self_reference ? sample_index : detail::kNoExclusion;
  std::vector<std::uint32_t> ranks(dump.num_layers());
  std::vector<double> dist;
  for (std::size_t l = 0; l < dump.num_layers(); ++l) {
    distance_row(dump.activations[l].row(sample_index), reference.activations[l], dist);
    ranks[l] = detail::rank_in_row(dist, reference.predicted_labels, cls, exclude);
    if (ranks[l] == 0) {
      throw integrity_error("class absent from reference set (class " +
                            std::to_string(cls) + ", layer " + std::to_string(l) + ")");
    }
  }
  return make_profile(std::move(ranks));
}

/// True when every layer has a defined rank (rank 0 marks "no eligible
/// reference of the predicted class").
inline bool is_defined(const RankProfile& profile) {
  return std::none_of(profile.ranks.begin(), profile.ranks.end(),
                      [](std::uint32_t r) { return r == 0; });
}

namespace detail {

/// Like ted_profiles, but a sample whose class has no eligible reference
/// gets rank 0 at every layer instead of failing the batch.
inline std::vector<RankProfile> profiles_lenient(const ActivationDump& queries,
                                                 const ActivationDump& reference,
                                                 bool self_reference) {
  check_same_layers(queries, reference);
  if (self_reference && queries.num_samples != reference.num_samples) {
    throw usage_error("self-referenced profiles need the reference as queries");
  }
  const std::size_t n = queries.num_samples;
  const std::size_t layers = queries.num_layers();
  std::vector<std::vector<std::uint32_t>> ranks(n, std::vector<std::uint32_t>(layers));
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> dist;
    for (std::size_t l = 0; l < layers; ++l) {
      distance_row(queries.activations[l].row(i), reference.activations[l], dist);
      ranks[i][l] = rank_in_row(dist, reference.predicted_labels,
                                queries.predicted_labels[i],
                                self_reference ? i : kNoExclusion);
    }
  });
  std::vector<RankProfile> out;
  out.reserve(n);
  for (auto& r : ranks) {
    if (std::find(r.begin(), r.end(), 0u) != r.end()) {
      std::fill(r.begin(), r.end(), 0u);
    }
    out.push_back(make_profile(std::move(r)));
  }
  return out;
}

}  // namespace detail

/// Profiles of every query against `reference`. With self_reference the
/// queries are the reference itself and each sample is excluded from its
/// own neighbourhood.
inline std::vector<RankProfile> ted_profiles(const ActivationDump& queries,
                                             const ActivationDump& reference,
                                             bool self_reference) {
  detail::check_same_layers(queries, reference);
  detail::check_class_presence(queries, reference, self_reference);
  return detail::profiles_lenient(queries, reference, self_reference);
}

/// floor(sqrt(n)) clamped to [1, n-1].
inline std::size_t default_k(std::size_t num_samples) {
  if (num_samples < 4) {
    throw usage_error("default k needs at least 4 samples");
  }
  auto k = static_cast<std::size_t>(std::sqrt(static_cast<double>(num_samples)));
  while (k * k > num_samples) --k;
  while ((k + 1) * (k + 1) <= num_samples) ++k;
  return std::clamp<std::size_t>(k, 1, num_samples - 1);
}

namespace detail {

/// Indices of the k nearest nodes to `self` by (distance, index).
inline void k_nearest(std::span<const double> dist, std::size_t self, std::size_t k,
                      std::vector<std::pair<double, std::uint32_t>>& scratch,
                      std::vector<std::uint32_t>& out) {
  scratch.clear();
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (j != self) scratch.emplace_back(dist[j], static_cast<std::uint32_t>(j));
  }
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   scratch.end());
  out.resize(k);
  for (std::size_t t = 0; t < k; ++t) out[t] = scratch[t].second;
}

inline LayerGraph graph_from_neighbours(
    std::size_t n, const std::vector<std::vector<std::uint32_t>>& neighbours) {
  LayerGraph g;
  g.num_nodes = n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint32_t j : neighbours[i]) {
      const auto a = static_cast<std::uint32_t>(i);
      g.edges.emplace_back(std::min(a, j), std::max(a, j));
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  g.degrees.assign(n, 0);
  for (const auto& [a, b] : g.edges) {
    ++g.degrees[a];
    ++g.degrees[b];
  }
  return g;
}

inline void check_k(std::size_t k, std::size_t n) {
  if (k < 1 || k >= n) {
    throw usage_error("k must be in [1, " + std::to_string(n) + ") but is " +
                      std::to_string(k));
  }
}

}  // namespace detail

/// Union-symmetrised k-NN graph: {i, j} is an edge if j is among i's k
/// nearest others or i among j's.
inline LayerGraph build_knn_graph(const FloatMatrix& activations, std::size_t k) {
  const std::size_t n = activations.rows();
  detail::check_k(k, n);
  for (float v : activations.data()) {
    if (!std::isfinite(v)) throw integrity_error("non-finite activation in graph input");
  }
  std::vector<std::vector<std::uint32_t>> neighbours(n);
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> dist;
    std::vector<std::pair<double, std::uint32_t>> scratch;
    distance_row(activations.row(i), activations, dist);
    detail::k_nearest(dist, i, k, scratch, neighbours[i]);
  });
  return detail::graph_from_neighbours(n, neighbours);
}

/// Self-referenced profiles and per-layer k-NN graphs of a reference dump,
/// computed from one distance pass per (sample, layer). Samples that are
/// the only member of their class get an all-zero (undefined) profile.
struct ReferenceScan {
  std::vector<RankProfile> profiles;
  std::vector<LayerGraph> graphs;  // empty when no graphs were requested
};

inline ReferenceScan scan_reference(const ActivationDump& reference,
                                    std::optional<std::size_t> k) {
  const std::size_t n = reference.num_samples;
  const std::size_t layers = reference.num_layers();
  if (k) detail::check_k(*k, n);

  std::vector<std::vector<std::uint32_t>> ranks(n, std::vector<std::uint32_t>(layers));
  ReferenceScan scan;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& acts = reference.activations[l];
    std::vector<std::vector<std::uint32_t>> neighbours(k ? n : 0);
    parallel_for(n, [&](std::size_t i) {
      std::vector<double> dist;
      distance_row(acts.row(i), acts, dist);
      ranks[i][l] = detail::rank_in_row(dist, reference.predicted_labels,
                                        reference.predicted_labels[i], i);
      if (k) {
        std::vector<std::pair<double, std::uint32_t>> scratch;
        scratch.reserve(n);
        detail::k_nearest(dist, i, *k, scratch, neighbours[i]);
      }
    });
    if (k) scan.graphs.push_back(detail::graph_from_neighbours(n, neighbours));
  }
  scan.profiles.reserve(n);
  for (auto& r : ranks) {
    if (std::find(r.begin(), r.end(), 0u) != r.end()) {
      std::fill(r.begin(), r.end(), 0u);
    }
    scan.profiles.push_back(make_profile(std::move(r)));
  }
  return scan;
}

/// Tab-separated table: sample, rank_0 .. rank_{N-1}, ctd.
inline void write_profiles_table(std::ostream& out,
                                 std::span<const RankProfile> profiles) {
  const std::size_t layers = profiles.empty() ? 0 : profiles.front().ranks.size();
  out << "sample";
  for (std::size_t l = 0; l < layers; ++l) out << "\trank_" << l;
  out << "\tctd\n";
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    out << i;
    for (auto r : profiles[i].ranks) out << '\t' << r;
    out << '\t' << profiles[i].ctd << '\n';
  }
}

}  // namespace tedlast
