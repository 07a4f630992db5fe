#pragma once

// Straightforward reference implementations the production code is checked
// against. Deliberately naive; no shared code with the library beyond types.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "tedlast/activation_store.hpp"
#include "tedlast/topo_dynamics.hpp"

namespace tedlast::oracle {

inline double sq_dist(const FloatMatrix& a, std::size_t i, const FloatMatrix& b,
                      std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    const double d = static_cast<double>(a(i, c)) - static_cast<double>(b(j, c));
    s += d * d;
  }
  return s;
}

/// Full sort of (distance, index), then the 1-based position of the first
/// same-class entry. 0 if the class is absent.
inline std::uint32_t rank(const ActivationDump& q, std::size_t i, const ActivationDump& ref,
                          std::size_t layer, bool self_reference) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t j = 0; j < ref.num_samples; ++j) {
    if (self_reference && j == i) continue;
    order.emplace_back(sq_dist(q.activations[layer], i, ref.activations[layer], j), j);
  }
  std::sort(order.begin(), order.end());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    if (ref.predicted_labels[order[pos].second] == q.predicted_labels[i]) {
      return static_cast<std::uint32_t>(pos + 1);
    }
  }
  return 0;
}

inline std::uint64_t ctd(const std::vector<std::uint32_t>& ranks) {
  std::uint64_t total = 0;
  for (std::size_t l = 1; l < ranks.size(); ++l) {
    const auto a = static_cast<std::int64_t>(ranks[l]);
    const auto b = static_cast<std::int64_t>(ranks[l - 1]);
    total += static_cast<std::uint64_t>(a > b ? a - b : b - a);
  }
  return total;
}

/// Edge set of the union-symmetrised k-NN graph, by full sort per node.
inline std::set<std::pair<std::uint32_t, std::uint32_t>> knn_edges(const FloatMatrix& m,
                                                                   std::size_t k) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t j = 0; j < m.rows(); ++j) {
      if (j != i) order.emplace_back(sq_dist(m, i, m, j), j);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t t = 0; t < k; ++t) {
      const auto a = static_cast<std::uint32_t>(std::min(i, order[t].second));
      const auto b = static_cast<std::uint32_t>(std::max(i, order[t].second));
      edges.emplace(a, b);
    }
  }
  return edges;
}

/// Pairwise form: Q = 1/(2m) sum_ij [A_ij - gamma k_i k_j / 2m] delta(c_i, c_j).
inline double modularity(std::size_t n,
                         const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                         const std::vector<std::uint8_t>& community, double gamma) {
  std::vector<std::vector<int>> adj(n, std::vector<int>(n, 0));
  std::vector<double> deg(n, 0.0);
  for (const auto& [a, b] : edges) {
    adj[a][b] = adj[b][a] = 1;
    deg[a] += 1.0;
    deg[b] += 1.0;
  }
  const double two_m = 2.0 * static_cast<double>(edges.size());
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (community[i] != community[j]) continue;
      q += adj[i][j] - gamma * deg[i] * deg[j] / two_m;
    }
  }
  return q / two_m;
}

/// Area under the empirical ROC curve by trapezoids over distinct thresholds.
inline double trapezoid_auroc(const std::vector<double>& scores,
                              const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double P = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double N = static_cast<double>(scores.size()) - P;
  double tp = 0, fp = 0, prev_tpr = 0, prev_fpr = 0, area = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (positive[order[i]] ? tp : fp) += 1.0;
      ++i;
    }
    const double tpr = tp / P, fpr = fp / N;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return area;
}

}  // namespace tedlast::oracle
