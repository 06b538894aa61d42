#pragma once

// Two-layer spatiotemporal GNN over grid-cell nodes.
//
// Input [B, 1, N, w] (SST anomalies, degC) flows through
//   1x1 projection
//   -> per layer: gated dilated temporal conv
//                 -> mix-hop propagation over the learned graph (both directions)
//                 -> residual add -> skip projection (kernel spans remaining time)
//   -> relu(sum of skips) -> 1x1 -> relu -> 1x1 to H channels
// giving per-node anomaly forecasts [B, H, N] for leads 1..H.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensograph/adiff.hpp"
#include "ensograph/graph.hpp"

namespace ensograph::stgnn {

struct ModelConfig {
  std::size_t n_nodes = 130;
  std::size_t window = 3;
  std::size_t horizon = 7;
  std::size_t layers = 2;
  std::size_t residual_channels = 8;
  std::size_t conv_channels = 8;
  std::size_t skip_channels = 16;
  std::size_t end_channels = 32;
  std::size_t kernel_size = 2;
  std::vector<std::size_t> dilations{1, 1};
  std::size_t mixhop_depth = 2;
  double beta = 0.05;
  graph::GraphLearnConfig graph;
  std::uint64_t seed = 0;

  /// 1 + sum_l d_l (K - 1): input months consumed per output step.
  [[nodiscard]] std::size_t receptive_field() const;

  /// Throws UsageError, naming the broken constraint.
  void validate() const;

  /// Time length entering layer `l` (l == layers gives the final length).
  [[nodiscard]] std::size_t time_length(std::size_t l) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named trainable tensors in a fixed order, plus the input scale.
template <typename T>
struct ModelParams {
  std::vector<std::string> names;
  std::vector<adiff::Tensor<T>> tensors;
  double input_scale = 1.0;  // anomalies are divided by this before the first layer

  [[nodiscard]] std::size_t index_of(const std::string& name) const;
  [[nodiscard]] const adiff::Tensor<T>& operator[](const std::string& name) const { return tensors[index_of(name)]; }
  adiff::Tensor<T>& operator[](const std::string& name) { return tensors[index_of(name)]; }
  [[nodiscard]] std::size_t size() const { return tensors.size(); }
  [[nodiscard]] std::size_t parameter_count() const;

  template <typename U>
  [[nodiscard]] ModelParams<U> cast() const {
    ModelParams<U> out{names, {}, input_scale};
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Uniform(-b, b) weights with b = sqrt(1 / fan_in); embeddings N(0, 1) * 0.1.
template <typename T>
[[nodiscard]] ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Zero-filled parameters with the right names and shapes.
template <typename T>
[[nodiscard]] ModelParams<T> zero_params(const ModelConfig& config);

/// tanh(conv(x, filter) + b_f) * sigmoid(conv(x, gate) + b_g).
template <typename T>
adiff::Var<T> temporal_block(const adiff::Var<T>& x, const adiff::Var<T>& filter, const adiff::Var<T>& filter_bias,
                             const adiff::Var<T>& gate, const adiff::Var<T>& gate_bias, std::size_t dilation);

/// Hop states h0 = h, hj = beta h + (1 - beta) A h_{j-1} along the node axis;
/// returns sum_j conv1x1(hj, W_j) + bias. hop_weights holds D + 1 kernels [C', C, 1, 1].
/// Throws UsageError if a row of `a_norm` does not sum to 1 within 1e-4.
template <typename T>
adiff::Var<T> mixhop_conv(const adiff::Var<T>& h, const adiff::Var<T>& a_norm, double beta,
                          std::span<const adiff::Var<T>> hop_weights, const adiff::Var<T>& bias);

/// Forward pass on the tape. `vars` are the leaves for `params.tensors`, same order.
template <typename T>
adiff::Var<T> forward(const ModelConfig& config, const ModelParams<T>& params, std::span<const adiff::Var<T>> vars,
                      const adiff::Var<T>& x);

/// Inference convenience: x [B, 1, N, w] -> [B, H, N].
template <typename T>
[[nodiscard]] adiff::Tensor<T> forward(const ModelConfig& config, const ModelParams<T>& params,
                                       const adiff::Tensor<T>& x);

/// Post-top-k learned adjacency (before normalization), for export.
template <typename T>
[[nodiscard]] graph::Adjacency learned_adjacency(const ModelConfig& config, const ModelParams<T>& params);

/// Index forecast from node forecasts. node_preds is [H][N]; lead 0 is the
/// observed area mean. Returns ONI(n) = mean(p[n-1], p[n], p[n+1]) for n = 1..H-1
/// where p[h] is the weighted area mean at lead h.
[[nodiscard]] std::vector<double> predict_oni(std::span<const double> node_preds, std::size_t horizon,
                                              double last_observed, std::span<const double> weights, int k = 3);

}  // namespace ensograph::stgnn
