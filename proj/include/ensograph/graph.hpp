#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "ensograph/adiff.hpp"
#include "ensograph/data.hpp"

namespace ensograph::graph {

struct GraphLearnConfig {
  std::size_t d = 16;     // embedding width
  double alpha = 3.0;     // saturation rate
  std::size_t topk = 20;  // neighbours kept per row

  /// Throws UsageError for alpha <= 0, d == 0 or topk outside [1, n_nodes].
  void validate(std::size_t n_nodes) const;

  friend bool operator==(const GraphLearnConfig&, const GraphLearnConfig&) = default;
};

/// Directed weighted graph over N nodes; weights[i * n + j] is the edge i -> j.
struct Adjacency {
  std::size_t n = 0;
  std::vector<double> weights;

  Adjacency() = default;
  explicit Adjacency(std::size_t nodes) : n(nodes), weights(nodes * nodes, 0.0) {}

  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return weights[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) { return weights[i * n + j]; }
  [[nodiscard]] std::size_t nonzeros() const;

  template <typename T>
  [[nodiscard]] static Adjacency from_tensor(const adiff::Tensor<T>& t);
  template <typename T>
  [[nodiscard]] adiff::Tensor<T> to_tensor() const;
};

// Learned adjacency. With M = E1 E2^T - E2 E1^T (antisymmetric),
//   A = relu(tanh(alpha * M)).
// Antisymmetry gives a zero diagonal and lets at most one of A[i][j], A[j][i]
// survive the relu; tanh bounds every weight below 1 (its argument is capped so
// rounding never reaches 1).

template <typename T>
adiff::Var<T> learn_adjacency(const adiff::Var<T>& e1, const adiff::Var<T>& e2, T alpha);

/// Value-only evaluation of the formula above.
template <typename T>
[[nodiscard]] Adjacency learn_adjacency(const adiff::Tensor<T>& e1, const adiff::Tensor<T>& e2, double alpha);

/// 0/1 mask keeping the k largest entries per row (ties go to the lower column).
template <typename T>
[[nodiscard]] adiff::Tensor<T> topk_mask(const adiff::Tensor<T>& a, std::size_t k);

/// A * topk_mask(A); the mask is a constant, so gradients reach retained entries only.
template <typename T>
adiff::Var<T> topk_sparsify(const adiff::Var<T>& a, std::size_t k);
[[nodiscard]] Adjacency topk_sparsify(const Adjacency& a, std::size_t k);

/// D^-1 (A + I), D the row sums of A + I. Rows sum to 1.
template <typename T>
adiff::Var<T> normalize(const adiff::Var<T>& a);
[[nodiscard]] Adjacency normalize(const Adjacency& a);

/// |pearson(i, j)| where >= tau and i != j; symmetric.
[[nodiscard]] Adjacency correlation_graph(const data::AnomalyCube& anoms, std::span<const data::NodeId> nodes,
                                          double tau);

/// CSV `src_lat,src_lon,dst_lat,dst_lon,weight`, one row per nonzero edge, heaviest first.
void write_edges(std::ostream& out, const Adjacency& a, const data::GridSpec& grid,
                 std::span<const data::NodeId> nodes);
void export_edges(const Adjacency& a, const data::GridSpec& grid, std::span<const data::NodeId> nodes,
                  const std::filesystem::path& path);

}  // namespace ensograph::graph
