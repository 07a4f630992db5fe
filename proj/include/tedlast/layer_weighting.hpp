#pragma once

// Modularity-based layer weights. For every class c and layer l the reference
// samples are split into "predicted c" and "the rest", the modularity of that
// split on the layer's k-NN graph is computed, and each class row is min-max
// normalised across layers. Rank profiles are then scaled elementwise by the
// row of their predicted class.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tedlast/activation_store.hpp"
#include "tedlast/error.hpp"
#include "tedlast/topo_dynamics.hpp"

namespace tedlast {

/// 0 for samples predicted as `cls`, 1 otherwise.
inline std::vector<std::uint8_t> community_labels(
    std::span<const std::uint32_t> predicted_labels, std::uint32_t cls) {
  std::vector<std::uint8_t> out(predicted_labels.size());
  for (std::size_t i = 0; i < predicted_labels.size(); ++i) {
    out[i] = predicted_labels[i] == cls ? 0 : 1;
  }
  return out;
}

/// Newman modularity of a two-community partition:
///   Q = sum_i [ E_i / m - gamma * (k_i / 2m)^2 ]
/// with E_i the intra-community edge count and k_i the community degree sum.
inline double modularity(const LayerGraph& graph,
                         std::span<const std::uint8_t> communities,
                         double resolution = 1.0) {
  if (graph.num_edges() == 0) throw integrity_error("empty graph");
  if (communities.size() != graph.num_nodes) {
    throw usage_error("community label count does not match graph size");
  }
  double intra[2] = {0.0, 0.0};
  double degree_sum[2] = {0.0, 0.0};
  for (const auto& [a, b] : graph.edges) {
    if (communities[a] == communities[b]) intra[communities[a] ? 1 : 0] += 1.0;
  }
  for (std::size_t i = 0; i < graph.num_nodes; ++i) {
    degree_sum[communities[i] ? 1 : 0] += graph.degrees[i];
  }
  const double m = static_cast<double>(graph.num_edges());
  double q = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double share = degree_sum[c] / (2.0 * m);
    q += intra[c] / m - resolution * share * share;
  }
  return q;
}

/// Min-max normalisation; a constant input maps to all ones.
inline std::vector<double> layer_weights(std::span<const double> modularity_per_layer) {
  if (modularity_per_layer.empty()) throw usage_error("no layers to weight");
  for (double q : modularity_per_layer) {
    if (!std::isfinite(q)) throw usage_error("non-finite modularity value");
  }
  const auto [lo, hi] =
      std::minmax_element(modularity_per_layer.begin(), modularity_per_layer.end());
  const double qmin = *lo;
  const double range = *hi - *lo;
  std::vector<double> w(modularity_per_layer.size(), 1.0);
  if (range > 0.0) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      w[l] = (modularity_per_layer[l] - qmin) / range;
    }
  }
  return w;
}

inline std::vector<double> weighted_profile(const RankProfile& profile,
                                            std::span<const double> weights) {
  if (weights.size() != profile.ranks.size()) {
    throw usage_error("weight count does not match profile length");
  }
  std::vector<double> out(weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out[l] = static_cast<double>(profile.ranks[l]) * weights[l];
  }
  return out;
}

/// Per-class, per-layer weights. Row c holds w_{., c}.
struct WeightTable {
  std::size_t num_classes = 0;
  std::size_t num_layers = 0;
  std::vector<double> weights;         // [num_classes * num_layers]
  std::vector<double> modularity_raw;  // [num_classes * num_layers]
  double resolution = 1.0;
  std::vector<std::string> warnings;

  static WeightTable identity(std::size_t classes, std::size_t layers,
                              double resolution = 1.0) {
    WeightTable t;
    t.num_classes = classes;
    t.num_layers = layers;
    t.weights.assign(classes * layers, 1.0);
    t.modularity_raw.assign(classes * layers, 0.0);
    t.resolution = resolution;
    return t;
  }

  std::span<const double> row(std::size_t cls) const {
    return {weights.data() + cls * num_layers, num_layers};
  }
  std::span<const double> raw_row(std::size_t cls) const {
    return {modularity_raw.data() + cls * num_layers, num_layers};
  }

  bool operator==(const WeightTable&) const = default;
};

/// Weight table from prebuilt per-layer graphs over the reference samples.
inline WeightTable weight_table_from_graphs(std::span<const LayerGraph> graphs,
                                            std::span<const std::uint32_t> predicted_labels,
                                            std::size_t num_classes, double resolution) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw usage_error("resolution must be a positive finite number");
  }
  WeightTable table = WeightTable::identity(num_classes, graphs.size(), resolution);
  std::vector<std::size_t> members(num_classes, 0);
  for (auto c : predicted_labels) ++members[c];

  for (std::size_t c = 0; c < num_classes; ++c) {
    if (members[c] < 2) {
      table.warnings.push_back("class " + std::to_string(c) + " has " +
                               std::to_string(members[c]) +
                               " member(s); using unit layer weights");
      continue;
    }
    const auto communities =
        community_labels(predicted_labels, static_cast<std::uint32_t>(c));
    std::vector<double> q(graphs.size());
    for (std::size_t l = 0; l < graphs.size(); ++l) {
      q[l] = modularity(graphs[l], communities, resolution);
    }
    const auto w = layer_weights(q);
    std::copy(q.begin(), q.end(),
              table.modularity_raw.begin() + static_cast<std::ptrdiff_t>(c * graphs.size()));
    std::copy(w.begin(), w.end(),
              table.weights.begin() + static_cast<std::ptrdiff_t>(c * graphs.size()));
  }
  return table;
}

inline WeightTable fit_weight_table(const ActivationDump& reference,
                                    std::optional<std::size_t> k = std::nullopt,
                                    double resolution = 1.0) {
  validate(reference);
  const std::size_t kk = k.value_or(default_k(reference.num_samples));
  std::vector<LayerGraph> graphs;
  graphs.reserve(reference.num_layers());
  for (const auto& acts : reference.activations) {
    graphs.push_back(build_knn_graph(acts, kk));
  }
  return weight_table_from_graphs(graphs, reference.predicted_labels,
                                  reference.num_classes, resolution);
}

/// Tab-separated table: class, layer, raw modularity, weight.
inline void write_weight_table(std::ostream& out, const WeightTable& table) {
  out << "class\tlayer\tmodularity\tweight\n";
  out.precision(17);
  for (std::size_t c = 0; c < table.num_classes; ++c) {
    for (std::size_t l = 0; l < table.num_layers; ++l) {
      out << c << '\t' << l << '\t' << table.raw_row(c)[l] << '\t' << table.row(c)[l]
          << '\n';
    }
  }
}

}  // namespace tedlast
