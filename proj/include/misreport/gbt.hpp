#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "json.hpp"
#include "misreport/error.hpp"
#include "misreport/matrix.hpp"

namespace misreport {

struct GbtParams {
  double learning_rate = 0.3;
  int max_depth = 6;
  double l2_lambda = 1.0;
  int n_rounds = 100;
  double min_child_weight = 1.0;
};

inline double sigmoid(double margin) { return 1.0 / (1.0 + std::exp(-margin)); }

/// Probabilities are clamped to [1e-9, 1-1e-9] before any loss evaluation.
inline double clamp_probability(double p) { return std::clamp(p, 1e-9, 1.0 - 1e-9); }

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double weight = 0.0;  // leaf value, learning rate already applied
};

class GbtModel {
 public:
  double base_margin = 0.0;
  std::size_t n_features = 0;
  std::vector<std::vector<TreeNode>> trees;
  /// Mean training logistic loss before the first round and after each round.
  std::vector<double> loss_history;

  double margin(std::span<const double> x) const {
    double m = base_margin;
    for (const auto& tree : trees) m += leaf_of(tree, x).weight;
    return m;
  }

  double predict(std::span<const double> x) const { return sigmoid(margin(x)); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["base_margin"] = base_margin;
    j["n_features"] = n_features;
    j["trees"] = nlohmann::json::array();
    for (const auto& tree : trees) {
      nlohmann::json t;
      for (const auto& node : tree) {
        t["feature"].push_back(node.feature);
        t["threshold"].push_back(node.threshold);
        t["left"].push_back(node.left);
        t["right"].push_back(node.right);
        t["weight"].push_back(node.weight);
      }
      j["trees"].push_back(std::move(t));
    }
    return j;
  }

 private:
  static const TreeNode& leaf_of(const std::vector<TreeNode>& tree, std::span<const double> x) {
    const TreeNode* node = &tree[0];
    while (node->feature >= 0) {
      node = &tree[x[static_cast<std::size_t>(node->feature)] < node->threshold ? node->left : node->right];
    }
    return *node;
  }
};

namespace detail {

/// Identical feature rows always share a prediction, so their gradient and
/// hessian sums can be accumulated once per distinct row. This is exact and
/// makes the learner cost depend on the number of distinct rows.
struct RowGroups {
  Matrix values;                 // one row per distinct feature vector
  std::vector<double> count;     // rows in the group
  std::vector<double> positives; // rows with label 1
};

inline RowGroups group_rows(const Matrix& x, std::span<const std::uint8_t> labels) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    auto ra = x.row(a);
    auto rb = x.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(order.begin(), order.end(), less);
  RowGroups g;
  g.values = Matrix(0, d);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    const bool fresh = k == 0 || less(order[k - 1], i);
    if (fresh) {
      g.values.append_row(x.row(i));
      g.count.push_back(0.0);
      g.positives.push_back(0.0);
    }
    g.count.back() += 1.0;
    g.positives.back() += labels[i];
  }
  return g;
}

inline double grouped_log_loss(const RowGroups& g, std::span<const double> margins, double n) {
  double total = 0.0;
  for (std::size_t k = 0; k < g.count.size(); ++k) {
    const double p = clamp_probability(sigmoid(margins[k]));
    total -= g.positives[k] * std::log(p) + (g.count[k] - g.positives[k]) * std::log(1.0 - p);
  }
  return total / n;
}

}  // namespace detail

/// Second-order boosting on logistic loss with exact greedy split search.
/// Splits send x < threshold left; thresholds are midpoints between
/// consecutive distinct values. Ties in gain keep the lowest feature index,
/// then the lowest threshold.
inline GbtModel fit_gbt(const Matrix& x, std::span<const std::uint8_t> labels, const GbtParams& params) {
  if (x.rows() == 0) throw Error(ErrorKind::Size, "cannot fit on empty data");
  if (x.rows() != labels.size()) throw Error(ErrorKind::Shape, "feature/label row mismatch");
  if (params.learning_rate <= 0 || params.max_depth < 1 || params.l2_lambda < 0 ||
      params.n_rounds < 0 || params.min_child_weight < 0) {
    throw Error(ErrorKind::Parameter, "invalid gradient boosting parameters");
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::Validation, "non-finite feature value");
  }
  constexpr double kMinGain = 1e-6;
  const double lambda = params.l2_lambda;
  const auto groups = detail::group_rows(x, labels);
  const std::size_t m = groups.count.size();
  const std::size_t d = x.cols();
  const double n = static_cast<double>(x.rows());

  GbtModel model;
  model.n_features = d;
  const double positives = std::accumulate(groups.positives.begin(), groups.positives.end(), 0.0);
  const double mean = std::clamp(positives / n, 1e-15, 1.0 - 1e-15);
  model.base_margin = std::clamp(std::log(mean / (1.0 - mean)), -10.0, 10.0);

  std::vector<double> margins(m, model.base_margin);
  model.loss_history.push_back(detail::grouped_log_loss(groups, margins, n));

  std::vector<std::vector<std::uint32_t>> sorted(d);
  for (std::size_t j = 0; j < d; ++j) {
    auto& s = sorted[j];
    s.resize(m);
    std::iota(s.begin(), s.end(), 0U);
    std::stable_sort(s.begin(), s.end(), [&](std::uint32_t a, std::uint32_t b) {
      return groups.values(a, j) < groups.values(b, j);
    });
  }

  std::vector<double> grad(m), hess(m);
  std::vector<int> node_of(m);
  for (int round = 0; round < params.n_rounds; ++round) {
    for (std::size_t k = 0; k < m; ++k) {
      const double p = sigmoid(margins[k]);
      grad[k] = groups.count[k] * p - groups.positives[k];
      hess[k] = groups.count[k] * std::max(p * (1.0 - p), 1e-16);
    }
    std::vector<TreeNode> tree(1);
    std::vector<double> node_g(1, 0.0), node_h(1, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      node_g[0] += grad[k];
      node_h[0] += hess[k];
    }
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<int> frontier{0};

    struct Candidate {
      double gain = kMinGain;
      int feature = -1;
      double threshold = 0.0;
    };

    for (int depth = 0; depth < params.max_depth && !frontier.empty(); ++depth) {
      std::vector<int> slot(tree.size(), -1);
      for (std::size_t f = 0; f < frontier.size(); ++f) slot[static_cast<std::size_t>(frontier[f])] = static_cast<int>(f);
      std::vector<Candidate> best(frontier.size());
      std::vector<double> gl(frontier.size()), hl(frontier.size()), last(frontier.size());
      std::vector<char> seen(frontier.size());
      for (std::size_t j = 0; j < d; ++j) {
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(hl.begin(), hl.end(), 0.0);
        std::fill(seen.begin(), seen.end(), 0);
        for (std::uint32_t k : sorted[j]) {
          const int s = slot[static_cast<std::size_t>(node_of[k])];
          if (s < 0) continue;
          const auto f = static_cast<std::size_t>(s);
          const double v = groups.values(k, j);
          if (seen[f] && v != last[f]) {
            const auto node = static_cast<std::size_t>(frontier[f]);
            const double gr = node_g[node] - gl[f];
            const double hr = node_h[node] - hl[f];
            if (hl[f] >= params.min_child_weight && hr >= params.min_child_weight) {
              const double gain = gl[f] * gl[f] / (hl[f] + lambda) + gr * gr / (hr + lambda) -
                                  node_g[node] * node_g[node] / (node_h[node] + lambda);
              if (gain > best[f].gain) best[f] = {gain, static_cast<int>(j), 0.5 * (last[f] + v)};
            }
          }
          gl[f] += grad[k];
          hl[f] += hess[k];
          last[f] = v;
          seen[f] = 1;
        }
      }
      std::vector<int> next;
      for (std::size_t f = 0; f < frontier.size(); ++f) {
        if (best[f].feature < 0) continue;
        const auto node = static_cast<std::size_t>(frontier[f]);
        const int left = static_cast<int>(tree.size());
        tree[node].feature = best[f].feature;
        tree[node].threshold = best[f].threshold;
        tree[node].left = left;
        tree[node].right = left + 1;
        tree.emplace_back();
        tree.emplace_back();
        node_g.push_back(0.0);
        node_g.push_back(0.0);
        node_h.push_back(0.0);
        node_h.push_back(0.0);
        next.push_back(left);
        next.push_back(left + 1);
      }
      if (next.empty()) break;
      for (std::size_t k = 0; k < m; ++k) {
        const TreeNode& node = tree[static_cast<std::size_t>(node_of[k])];
        if (node.feature < 0) continue;
        const int child = groups.values(k, static_cast<std::size_t>(node.feature)) < node.threshold ? node.left : node.right;
        node_of[k] = child;
        node_g[static_cast<std::size_t>(child)] += grad[k];
        node_h[static_cast<std::size_t>(child)] += hess[k];
      }
      frontier = std::move(next);
    }
    for (std::size_t i = 0; i < tree.size(); ++i) {
      if (tree[i].feature < 0) {
        tree[i].weight = -params.learning_rate * node_g[i] / (node_h[i] + lambda);
      }
    }
    for (std::size_t k = 0; k < m; ++k) margins[k] += tree[static_cast<std::size_t>(node_of[k])].weight;
    model.trees.push_back(std::move(tree));
    model.loss_history.push_back(detail::grouped_log_loss(groups, margins, n));
  }
  return model;
}

}  // namespace misreport
