#include "ensograph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <type_traits>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "ensograph/errors.hpp"
#include "ensograph/metrics.hpp"

namespace ensograph::graph {

using adiff::Shape;
using adiff::Tensor;
using adiff::Var;

void GraphLearnConfig::validate(std::size_t n_nodes) const {
  if (d < 1) throw UsageError("embedding width d must be >= 1");
  if (!(alpha > 0.0)) throw UsageError(fmt::format("alpha must be > 0, got {}", alpha));
  if (topk < 1 || topk > n_nodes) {
    throw UsageError(fmt::format("topk={} must lie in [1, {}]", topk, n_nodes));
  }
}

std::size_t Adjacency::nonzeros() const {
  return static_cast<std::size_t>(std::count_if(weights.begin(), weights.end(), [](double w) { return w != 0.0; }));
}

template <typename T>
Adjacency Adjacency::from_tensor(const Tensor<T>& t) {
  if (t.rank() != 2 || t.shape()[0] != t.shape()[1]) {
    throw UsageError(fmt::format("adjacency must be square, got {}", adiff::to_string(t.shape())));
  }
  Adjacency a(t.shape()[0]);
  std::copy(t.data().begin(), t.data().end(), a.weights.begin());
  return a;
}

template <typename T>
Tensor<T> Adjacency::to_tensor() const {
  return Tensor<T>(Shape{n, n}, std::vector<T>(weights.begin(), weights.end()));
}

namespace {

// tanh rounds to exactly 1 once its argument passes ~9 (float) or ~19 (double).
// Capping the argument keeps every weight strictly below 1; the true derivative
// beyond the cap is already below 1e-6, so the gradient is cut to zero there.
template <typename T>
Var<T> cap_for_tanh(const Var<T>& x) {
  constexpr T cap = std::is_same_v<T, float> ? T{8} : T{18};
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::clamp(v, -cap, cap);
  return x.tape().record(std::move(out), {x}, [](const adiff::BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.input_grads[0];
    if (!gx) return;
    const auto xin = ctx.inputs[0]->data();
    const auto g = ctx.grad_out.data();
    auto dx = gx->data();
    for (std::size_t n = 0; n < g.size(); ++n) {
      if (std::abs(xin[n]) < cap) dx[n] += g[n];
    }
  });
}

}  // namespace

template <typename T>
Var<T> learn_adjacency(const Var<T>& e1, const Var<T>& e2, T alpha) {
  if (!(alpha > T{0})) throw UsageError("alpha must be > 0");
  if (e1.shape() != e2.shape() || e1.shape().size() != 2) {
    throw UsageError(fmt::format("embeddings must share an N x d shape, got {} and {}",
                                 adiff::to_string(e1.shape()), adiff::to_string(e2.shape())));
  }
  const Var<T> m = matmul(e1, transpose(e2)) - matmul(e2, transpose(e1));
  return relu(tanh(cap_for_tanh(scale(m, alpha))));
}

template <typename T>
Adjacency learn_adjacency(const Tensor<T>& e1, const Tensor<T>& e2, double alpha) {
  adiff::Tape<T> tape;
  const Var<T> a = learn_adjacency(tape.constant(e1), tape.constant(e2), static_cast<T>(alpha));
  return Adjacency::from_tensor(a.value());
}

template <typename T>
Tensor<T> topk_mask(const Tensor<T>& a, std::size_t k) {
  if (a.rank() != 2 || a.shape()[0] != a.shape()[1]) throw UsageError("topk needs a square matrix");
  const std::size_t n = a.shape()[0];
  if (k < 1 || k > n) throw UsageError(fmt::format("topk k={} outside [1, {}]", k, n));
  Tensor<T> mask(Shape{n, n}, T{0});
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const T* row = a.data().data() + i * n;
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                      [row](std::size_t x, std::size_t y) { return row[x] > row[y] || (row[x] == row[y] && x < y); });
    for (std::size_t q = 0; q < k; ++q) mask[i * n + order[q]] = T{1};
  }
  return mask;
}

template <typename T>
Var<T> topk_sparsify(const Var<T>& a, std::size_t k) {
  const Var<T> mask = a.tape().constant(topk_mask(a.value(), k));
  return a * mask;
}

Adjacency topk_sparsify(const Adjacency& a, std::size_t k) {
  const Tensor<double> mask = topk_mask(a.to_tensor<double>(), k);
  Adjacency out = a;
  for (std::size_t n = 0; n < out.weights.size(); ++n) out.weights[n] *= mask[n];
  return out;
}

template <typename T>
Var<T> normalize(const Var<T>& a) {
  const Shape& shape = a.shape();
  if (shape.size() != 2 || shape[0] != shape[1]) throw UsageError("normalize needs a square matrix");
  const std::size_t n = shape[0];
  Tensor<T> eye(Shape{n, n}, T{0});
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = T{1};
  const Var<T> with_self = a + a.tape().constant(std::move(eye));
  const std::size_t axis = 1;
  const Var<T> degree = reduce(with_self, std::span<const std::size_t>(&axis, 1), adiff::Reduction::Sum, true);
  return with_self / degree;
}

Adjacency normalize(const Adjacency& a) {
  adiff::Tape<double> tape;
  return Adjacency::from_tensor(normalize(tape.constant(a.to_tensor<double>())).value());
}

Adjacency correlation_graph(const data::AnomalyCube& anoms, std::span<const data::NodeId> nodes, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError(fmt::format("tau={} outside [0, 1]", tau));
  if (anoms.n_time < 3) throw ValidationError("correlation graph needs at least 3 months");
  const std::size_t n = nodes.size();
  std::vector<std::vector<double>> series(n, std::vector<double>(anoms.n_time));
  for (std::size_t k = 0; k < n; ++k) {
    const data::NodeId node = nodes[k];
    for (std::size_t t = 0; t < anoms.n_time; ++t) {
      if (anoms.is_missing(t, node.lat, node.lon)) {
        throw ValidationError(fmt::format("node {} (lat {}, lon {}) has missing values", k,
                                          anoms.grid.lats[node.lat], anoms.grid.lons[node.lon]));
      }
      series[k][t] = anoms.at(t, node.lat, node.lon);
    }
    const auto [lo, hi] = std::minmax_element(series[k].begin(), series[k].end());
    if (*lo == *hi) {
      throw ValidationError(fmt::format("node {} (lat {}, lon {}) has zero variance", k,
                                        anoms.grid.lats[node.lat], anoms.grid.lons[node.lon]));
    }
  }
  Adjacency a(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double r = 0.0;
      try {
        r = std::abs(eval::pearson(series[i], series[j]));
      } catch (const ValidationError&) {
        throw ValidationError(fmt::format("node {} or {} has zero variance", i, j));
      }
      if (r >= tau) {
        a(i, j) = r;
        a(j, i) = r;
      }
    }
  }
  return a;
}

void write_edges(std::ostream& out, const Adjacency& a, const data::GridSpec& grid,
                 std::span<const data::NodeId> nodes) {
  if (nodes.size() != a.n) {
    throw UsageError(fmt::format("{} node ids for a {}-node adjacency", nodes.size(), a.n));
  }
  struct Edge {
    std::size_t src, dst;
    double w;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < a.n; ++i) {
    for (std::size_t j = 0; j < a.n; ++j) {
      if (a(i, j) != 0.0) edges.push_back({i, j, a(i, j)});
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) { return x.w > y.w; });
  out << "src_lat,src_lon,dst_lat,dst_lon,weight\n";
  for (const Edge& e : edges) {
    fmt::print(out, "{},{},{},{},{:.6g}\n", grid.lats[nodes[e.src].lat], grid.lons[nodes[e.src].lon],
               grid.lats[nodes[e.dst].lat], grid.lons[nodes[e.dst].lon], e.w);
  }
}

void export_edges(const Adjacency& a, const data::GridSpec& grid, std::span<const data::NodeId> nodes,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  write_edges(out, a, grid, nodes);
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

#define ENSOGRAPH_GRAPH_INSTANTIATE(T)                                                         \
  template Adjacency Adjacency::from_tensor(const Tensor<T>&);                                 \
  template Tensor<T> Adjacency::to_tensor() const;                                             \
  template Var<T> learn_adjacency(const Var<T>&, const Var<T>&, T);                            \
  template Adjacency learn_adjacency(const Tensor<T>&, const Tensor<T>&, double);              \
  template Tensor<T> topk_mask(const Tensor<T>&, std::size_t);                                 \
  template Var<T> topk_sparsify(const Var<T>&, std::size_t);                                   \
  template Var<T> normalize(const Var<T>&);

ENSOGRAPH_GRAPH_INSTANTIATE(float)
ENSOGRAPH_GRAPH_INSTANTIATE(double)

#undef ENSOGRAPH_GRAPH_INSTANTIATE

}  // namespace ensograph::graph
