#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ensograph/adiff.hpp"
#include "ensograph/checkpoint.hpp"
#include "ensograph/data.hpp"
#include "ensograph/stgnn.hpp"

namespace ensograph::train {

enum class Loss { Mae, Mse };

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool shuffle = true;
  Loss loss = Loss::Mae;
  double validation_fraction = 0.1;  // trailing share of samples held out for reporting

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;  // empty when no samples were held out
  std::size_t steps = 0;
  double seconds = 0.0;
};

template <typename T>
adiff::Var<T> mae_loss(const adiff::Var<T>& pred, const adiff::Var<T>& target);
template <typename T>
adiff::Var<T> mse_loss(const adiff::Var<T>& pred, const adiff::Var<T>& target);

template <typename T>
struct AdamState {
  std::vector<adiff::Tensor<T>> m;
  std::vector<adiff::Tensor<T>> v;
};

/// One bias-corrected Adam update at step t >= 1. Throws NumericalError
/// naming the first tensor whose gradient is not finite.
template <typename T>
void adam_step(stgnn::ModelParams<T>& params, const std::vector<adiff::Tensor<T>>& grads, AdamState<T>& state,
               std::size_t t, const TrainConfig& config);

/// Rescales all gradients jointly when their global L2 norm exceeds max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_gradients(std::vector<adiff::Tensor<T>>& grads, double max_norm);

/// Standard deviation of all input values; 1 if degenerate.
[[nodiscard]] double input_scale(const data::SampleSet& samples);

/// [B, 1, N, w] input and [B, H, N] target tensors for the listed samples.
[[nodiscard]] adiff::Tensor<float> batch_inputs(const data::SampleSet& samples, std::span<const std::size_t> ids);
[[nodiscard]] adiff::Tensor<float> batch_targets(const data::SampleSet& samples, std::span<const std::size_t> ids);

struct TrainResult {
  stgnn::ModelParams<float> params;
  TrainHistory history;
};

using EpochCallback = std::function<void(std::size_t epoch, double train_loss, std::optional<double> val_loss)>;

/// Deterministic single-threaded training. Parameters start from
/// init_params(config, config.seed); batches are shuffled by a generator
/// seeded from tconfig.seed.
[[nodiscard]] TrainResult train(const stgnn::ModelConfig& config, const TrainConfig& tconfig,
                                const data::SampleSet& samples, const EpochCallback& on_epoch = {});

struct RunManifest {
  stgnn::ModelConfig model;
  TrainConfig train;
  stgnn::DataBinding data;
  std::vector<std::filesystem::path> data_files;
  std::size_t n_samples = 0;
  std::size_t n_dropped = 0;
  TrainHistory history;
};

[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);
[[nodiscard]] const char* build_version();

/// JSON manifest with every config field, seeds, data hashes and the build version.
/// Wall-clock time is deliberately left out so reruns are byte-identical.
void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

}  // namespace ensograph::train
