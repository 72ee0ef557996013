#pragma once

// Graph containers, batching, and deterministic synthetic graph-classification
// tasks (triangle detection and degree-profile classification).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "crossfire/linalg.hpp"

namespace crossfire {

struct Graph {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;  // undirected, u < v, no self loops
  Matrix features;                         // num_nodes x F
  Vector label;                            // num_tasks
};

struct Dataset {
  std::vector<Graph> graphs;
  int feature_dim = 0;
  int num_tasks = 1;

  std::size_t size() const noexcept { return graphs.size(); }
};

/// A disjoint union of graphs with nodes in canonical (graph-major) order.
struct GraphBatch {
  Matrix node_features;                     // N_total x F
  std::vector<std::vector<int>> neighbors;  // symmetric adjacency over global node ids
  std::vector<int> graph_of_node;           // non-decreasing
  int num_graphs = 0;
  Matrix labels;                            // num_graphs x T, empty when unlabeled

  std::size_t num_nodes() const noexcept { return graph_of_node.size(); }
  bool has_labels() const noexcept { return labels.size() > 0; }
};

inline GraphBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices,
                             bool with_labels = true) {
  GraphBatch b;
  std::size_t total = 0;
  for (auto i : indices) total += static_cast<std::size_t>(ds.graphs.at(i).num_nodes);
  b.node_features.resize(static_cast<Eigen::Index>(total), ds.feature_dim);
  b.neighbors.assign(total, {});
  b.graph_of_node.reserve(total);
  b.num_graphs = static_cast<int>(indices.size());
  if (with_labels) b.labels.resize(b.num_graphs, ds.num_tasks);

  int offset = 0;
  for (std::size_t gi = 0; gi < indices.size(); ++gi) {
    const Graph& g = ds.graphs[indices[gi]];
    b.node_features.middleRows(offset, g.num_nodes) = g.features;
    for (auto [u, v] : g.edges) {
      b.neighbors[static_cast<std::size_t>(offset + u)].push_back(offset + v);
      b.neighbors[static_cast<std::size_t>(offset + v)].push_back(offset + u);
    }
    for (int v = 0; v < g.num_nodes; ++v) b.graph_of_node.push_back(static_cast<int>(gi));
    if (with_labels) b.labels.row(static_cast<Eigen::Index>(gi)) = g.label.transpose();
    offset += g.num_nodes;
  }
  return b;
}

inline GraphBatch make_batch(const Dataset& ds, std::initializer_list<std::size_t> indices,
                             bool with_labels = true) {
  std::vector<std::size_t> v(indices);
  return make_batch(ds, std::span<const std::size_t>(v), with_labels);
}

inline GraphBatch without_labels(GraphBatch b) {
  b.labels.resize(0, 0);
  return b;
}

enum class TaskKind { kTriangle, kDegreeProfile };

inline std::string to_string(TaskKind k) {
  return k == TaskKind::kTriangle ? "triangle" : "degree";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "triangle") return TaskKind::kTriangle;
  if (s == "degree") return TaskKind::kDegreeProfile;
  throw std::invalid_argument("unknown task '" + s + "'");
}

struct TaskSpec {
  TaskKind kind = TaskKind::kTriangle;
  int min_nodes = 5;
  int max_nodes = 35;
  /// Extra edges beyond the spanning tree: uniform in [1, max(1, n / extra_edge_divisor)].
  int extra_edge_divisor = 3;
};

/// Node features: a constant channel plus a one-hot degree bucket (1..7+).
inline constexpr int kFeatureDim = 8;

namespace detail {

struct EdgeSet {
  int n;
  std::set<std::pair<int, int>> edges;
  std::vector<std::vector<int>> adj;

  explicit EdgeSet(int n_) : n(n_), adj(static_cast<std::size_t>(n_)) {}

  bool has(int u, int v) const { return edges.count(std::minmax(u, v)) > 0; }

  bool add(int u, int v) {
    if (u == v || has(u, v)) return false;
    edges.insert(std::minmax(u, v));
    adj[static_cast<std::size_t>(u)].push_back(v);
    adj[static_cast<std::size_t>(v)].push_back(u);
    return true;
  }

  int degree(int v) const { return static_cast<int>(adj[static_cast<std::size_t>(v)].size()); }
};

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Random recursive tree; returns the bipartition colour of each node.
inline std::vector<int> grow_tree(EdgeSet& es, std::mt19937_64& rng) {
  std::vector<int> colour(static_cast<std::size_t>(es.n), 0);
  for (int v = 1; v < es.n; ++v) {
    const int parent = uniform_int(rng, 0, v - 1);
    es.add(parent, v);
    colour[static_cast<std::size_t>(v)] = 1 - colour[static_cast<std::size_t>(parent)];
  }
  return colour;
}

inline bool add_cross_edge(EdgeSet& es, const std::vector<int>& colour, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const int u = uniform_int(rng, 0, es.n - 1);
    const int v = uniform_int(rng, 0, es.n - 1);
    if (colour[static_cast<std::size_t>(u)] != colour[static_cast<std::size_t>(v)] && es.add(u, v)) {
      return true;
    }
  }
  return false;
}

// Connect two distinct neighbours of a random node, closing a triangle.
inline bool add_triangle_edge(EdgeSet& es, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const int x = uniform_int(rng, 0, es.n - 1);
    const auto& nb = es.adj[static_cast<std::size_t>(x)];
    if (nb.size() < 2) continue;
    const int a = nb[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(nb.size()) - 1))];
    const int b = nb[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(nb.size()) - 1))];
    if (es.add(a, b)) return true;
  }
  return false;
}

inline bool degree_profile_label(const EdgeSet& es) {
  int hubs = 0;
  int leaves = 0;
  for (int v = 0; v < es.n; ++v) {
    if (es.degree(v) >= 3) ++hubs;
    if (es.degree(v) == 1) ++leaves;
  }
  return hubs > leaves;
}

inline Graph finish_graph(const EdgeSet& es, double label) {
  Graph g;
  g.num_nodes = es.n;
  g.edges.assign(es.edges.begin(), es.edges.end());
  g.features = Matrix::Zero(es.n, kFeatureDim);
  for (int v = 0; v < es.n; ++v) {
    g.features(v, 0) = 1.0;
    const int bucket = std::clamp(es.degree(v), 1, 7);
    g.features(v, bucket) = 1.0;
  }
  g.label = Vector::Constant(1, label);
  return g;
}

}  // namespace detail

inline bool has_triangle(const Graph& g) {
  std::vector<std::set<int>> adj(static_cast<std::size_t>(g.num_nodes));
  for (auto [u, v] : g.edges) {
    adj[static_cast<std::size_t>(u)].insert(v);
    adj[static_cast<std::size_t>(v)].insert(u);
  }
  for (auto [u, v] : g.edges) {
    for (int w : adj[static_cast<std::size_t>(u)]) {
      if (w != v && adj[static_cast<std::size_t>(v)].count(w)) return true;
    }
  }
  return false;
}

/// Deterministic given `seed`. Labels are exactly balanced (alternating
/// targets, then shuffled), and each graph is generated to match its target.
inline Dataset synth_dataset(std::uint64_t seed, int n_graphs, const TaskSpec& spec = {}) {
  if (n_graphs <= 0) throw std::invalid_argument("synth_dataset: n_graphs must be positive");
  if (spec.min_nodes < 3 || spec.max_nodes < spec.min_nodes) {
    throw std::invalid_argument("synth_dataset: invalid node range");
  }
  std::mt19937_64 rng(seed);
  std::vector<int> targets(static_cast<std::size_t>(n_graphs));
  for (int i = 0; i < n_graphs; ++i) targets[static_cast<std::size_t>(i)] = i % 2;
  std::shuffle(targets.begin(), targets.end(), rng);

  Dataset ds;
  ds.feature_dim = kFeatureDim;
  ds.num_tasks = 1;
  ds.graphs.reserve(static_cast<std::size_t>(n_graphs));
  for (int target : targets) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw std::runtime_error("synth_dataset: generator failed to converge");
      const int n = detail::uniform_int(rng, spec.min_nodes, spec.max_nodes);
      const int extra = detail::uniform_int(rng, 1, std::max(1, n / spec.extra_edge_divisor));
      detail::EdgeSet es(n);
      const auto colour = detail::grow_tree(es, rng);
      bool ok = true;
      if (spec.kind == TaskKind::kTriangle) {
        const int triangles = target == 1 ? detail::uniform_int(rng, 1, std::min(3, extra)) : 0;
        for (int t = 0; t < triangles && ok; ++t) ok = detail::add_triangle_edge(es, rng);
        for (int e = triangles; e < extra && ok; ++e) ok = detail::add_cross_edge(es, colour, rng);
      } else {
        for (int e = 0; e < extra; ++e) {
          const int u = detail::uniform_int(rng, 0, n - 1);
          const int v = detail::uniform_int(rng, 0, n - 1);
          es.add(u, v);
        }
        ok = detail::degree_profile_label(es) == (target == 1);
      }
      if (!ok) continue;
      ds.graphs.push_back(detail::finish_graph(es, static_cast<double>(target)));
      break;
    }
  }
  return ds;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline Split train_test_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(static_cast<double>(n) * test_fraction + 0.5);
  Split s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  return s;
}

/// `count` batches of `batch_size` graphs drawn without replacement within a
/// batch from `pool`.
inline std::vector<GraphBatch> sample_batches(const Dataset& ds, std::span<const std::size_t> pool,
                                              int count, int batch_size, std::mt19937_64& rng,
                                              bool with_labels = true) {
  std::vector<GraphBatch> out;
  std::vector<std::size_t> p(pool.begin(), pool.end());
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(batch_size), p.size());
  for (int i = 0; i < count; ++i) {
    std::shuffle(p.begin(), p.end(), rng);
    out.push_back(make_batch(ds, std::span<const std::size_t>(p.data(), take), with_labels));
  }
  return out;
}

}  // namespace crossfire
