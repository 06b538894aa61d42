#include "ensograph/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "ensograph/config_json.hpp"
#include "ensograph/errors.hpp"
#include "ensograph/rng.hpp"

#ifndef ENSOGRAPH_GIT_DESCRIBE
#define ENSOGRAPH_GIT_DESCRIBE "unknown"
#endif

namespace ensograph::train {

using adiff::Shape;
using adiff::Tape;
using adiff::Tensor;
using adiff::Var;

namespace {
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;  // "SHUFF"
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw UsageError(fmt::format("learning rate must be > 0, got {}", lr));
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (!(clip_norm > 0.0)) throw UsageError("clip max-norm must be > 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw UsageError("validation fraction must lie in [0, 1)");
  }
}

template <typename T>
Var<T> mae_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) {
    throw UsageError(fmt::format("loss shapes differ: {} vs {}", adiff::to_string(pred.shape()),
                                 adiff::to_string(target.shape())));
  }
  return reduce_all(abs(pred - target), adiff::Reduction::Mean);
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) {
    throw UsageError(fmt::format("loss shapes differ: {} vs {}", adiff::to_string(pred.shape()),
                                 adiff::to_string(target.shape())));
  }
  const Var<T> diff = pred - target;
  return reduce_all(diff * diff, adiff::Reduction::Mean);
}

template <typename T>
void adam_step(stgnn::ModelParams<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               std::size_t t, const TrainConfig& config) {
  if (t < 1) throw UsageError("adam step index starts at 1");
  if (grads.size() != params.size()) throw UsageError("gradient count differs from parameter count");
  if (state.m.empty()) {
    for (const auto& p : params.tensors) {
      state.m.emplace_back(p.shape(), T{0});
      state.v.emplace_back(p.shape(), T{0});
    }
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].shape() != params.tensors[k].shape()) {
      throw UsageError(fmt::format("gradient shape mismatch for '{}'", params.names[k]));
    }
    if (!grads[k].all_finite()) {
      throw NumericalError(fmt::format("non-finite gradient in '{}'", params.names[k]));
    }
  }
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto p = params.tensors[k].data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t n = 0; n < p.size(); ++n) {
      const double gn = g[n];
      const double mn = b1 * static_cast<double>(m[n]) + (1.0 - b1) * gn;
      const double vn = b2 * static_cast<double>(v[n]) + (1.0 - b2) * gn * gn;
      m[n] = static_cast<T>(mn);
      v[n] = static_cast<T>(vn);
      const double m_hat = mn / c1;
      const double v_hat = vn / c2;
      p[n] = static_cast<T>(static_cast<double>(p[n]) - config.lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
  }
}

template <typename T>
double clip_gradients(std::vector<Tensor<T>>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw UsageError("clip max-norm must be > 0");
  double ss = 0.0;
  for (const auto& g : grads) {
    for (T v : g.data()) ss += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      for (T& v : g.data()) v = static_cast<T>(static_cast<double>(v) * factor);
    }
  }
  return norm;
}

double input_scale(const data::SampleSet& samples) {
  if (samples.inputs.empty()) return 1.0;
  const auto n = static_cast<double>(samples.inputs.size());
  const double mean = std::accumulate(samples.inputs.begin(), samples.inputs.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : samples.inputs) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  return sd > 0.0 && std::isfinite(sd) ? sd : 1.0;
}

Tensor<float> batch_inputs(const data::SampleSet& samples, std::span<const std::size_t> ids) {
  const std::size_t N = samples.n_nodes();
  const auto w = static_cast<std::size_t>(samples.window);
  Tensor<float> x(Shape{ids.size(), 1, N, w});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const auto in = samples.input(ids[b]);
    for (std::size_t t = 0; t < w; ++t) {
      for (std::size_t n = 0; n < N; ++n) x[(b * N + n) * w + t] = static_cast<float>(in[t * N + n]);
    }
  }
  return x;
}

Tensor<float> batch_targets(const data::SampleSet& samples, std::span<const std::size_t> ids) {
  const std::size_t N = samples.n_nodes();
  const auto H = static_cast<std::size_t>(samples.horizon);
  Tensor<float> y(Shape{ids.size(), H, N});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const auto tg = samples.target(ids[b]);
    for (std::size_t e = 0; e < H * N; ++e) y[b * H * N + e] = static_cast<float>(tg[e]);
  }
  return y;
}

TrainResult train(const stgnn::ModelConfig& config, const TrainConfig& tconfig, const data::SampleSet& samples,
                  const EpochCallback& on_epoch) {
  config.validate();
  tconfig.validate();
  if (samples.size() == 0) throw ValidationError("no training samples");
  if (samples.n_nodes() != config.n_nodes || static_cast<std::size_t>(samples.window) != config.window ||
      static_cast<std::size_t>(samples.horizon) != config.horizon) {
    throw UsageError(fmt::format("samples ({} nodes, window {}, horizon {}) do not fit the model ({}, {}, {})",
                                 samples.n_nodes(), samples.window, samples.horizon, config.n_nodes, config.window,
                                 config.horizon));
  }
  const auto start_time = std::chrono::steady_clock::now();

  const auto n_val = static_cast<std::size_t>(std::floor(tconfig.validation_fraction * static_cast<double>(samples.size())));
  const std::size_t n_train = samples.size() - n_val;
  if (n_train == 0) throw ValidationError("validation split leaves no training samples");

  TrainResult result;
  result.params = stgnn::init_params<float>(config, config.seed);
  result.params.input_scale = input_scale(samples);

  auto loss_fn = [&](const Var<float>& pred, const Var<float>& target) {
    return tconfig.loss == Loss::Mae ? mae_loss(pred, target) : mse_loss(pred, target);
  };

  AdamState<float> adam;
  Rng shuffle_rng = Rng::stream(tconfig.seed, kShuffleStream);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < tconfig.epochs; ++epoch) {
    if (tconfig.shuffle) shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n_train; begin += tconfig.batch_size) {
      const std::size_t end = std::min(n_train, begin + tconfig.batch_size);
      const std::span<const std::size_t> ids(order.data() + begin, end - begin);
      Tape<float> tape;
      std::vector<Var<float>> vars;
      vars.reserve(result.params.size());
      for (const auto& t : result.params.tensors) vars.push_back(tape.leaf(t, true));
      const Var<float> x = tape.constant(batch_inputs(samples, ids));
      const Var<float> y = tape.constant(batch_targets(samples, ids));
      Var<float> loss;
      try {
        loss = loss_fn(stgnn::forward(config, result.params, std::span<const Var<float>>(vars), x), y);
      } catch (const NumericalError& e) {
        throw NumericalError(fmt::format("epoch {} step {}: {}", epoch + 1, result.history.steps + 1, e.what()));
      }
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericalError(fmt::format("non-finite loss at epoch {} step {}", epoch + 1, result.history.steps + 1));
      }
      loss_sum += value * static_cast<double>(ids.size());
      const adiff::Gradients<float> grads = tape.backward(loss);
      std::vector<Tensor<float>> g;
      g.reserve(vars.size());
      for (const auto& v : vars) g.push_back(grads[v]);
      clip_gradients(g, tconfig.clip_norm);
      ++result.history.steps;
      try {
        adam_step(result.params, g, adam, result.history.steps, tconfig);
      } catch (const NumericalError& e) {
        throw NumericalError(fmt::format("epoch {} step {}: {}", epoch + 1, result.history.steps, e.what()));
      }
    }
    result.history.train_loss.push_back(loss_sum / static_cast<double>(n_train));

    std::optional<double> val;
    if (n_val > 0) {
      double val_sum = 0.0;
      for (std::size_t begin = n_train; begin < samples.size(); begin += tconfig.batch_size) {
        const std::size_t end = std::min(samples.size(), begin + tconfig.batch_size);
        std::vector<std::size_t> ids(end - begin);
        std::iota(ids.begin(), ids.end(), begin);
        Tape<float> tape;
        std::vector<Var<float>> vars;
        for (const auto& t : result.params.tensors) vars.push_back(tape.constant(t));
        const Var<float> pred = stgnn::forward(config, result.params, std::span<const Var<float>>(vars),
                                               tape.constant(batch_inputs(samples, ids)));
        val_sum += loss_fn(pred, tape.constant(batch_targets(samples, ids))).value().item() *
                   static_cast<double>(ids.size());
      }
      val = val_sum / static_cast<double>(n_val);
      result.history.val_loss.push_back(*val);
    }
    if (on_epoch) on_epoch(epoch + 1, result.history.train_loss.back(), val);
  }
  result.history.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return result;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {} for hashing", path.string()));
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buffer(1 << 16);
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

const char* build_version() { return ENSOGRAPH_GIT_DESCRIBE; }

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  using nlohmann::json;
  json files = json::array();
  for (const auto& f : m.data_files) files.push_back({{"path", f.string()}, {"sha256", sha256_file(f)}});
  const TrainConfig& t = m.train;
  const json manifest{
      {"build", build_version()},
      {"model", to_json(m.model)},
      {"train",
       {{"lr", t.lr},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"seed", t.seed},
        {"clip_norm", t.clip_norm},
        {"adam_beta1", t.beta1},
        {"adam_beta2", t.beta2},
        {"adam_eps", t.eps},
        {"shuffle", t.shuffle},
        {"loss", t.loss == Loss::Mae ? "mae" : "mse"},
        {"validation_fraction", t.validation_fraction}}},
      {"data",
       {{"box", {m.data.box.lat_min, m.data.box.lat_max, m.data.box.lon_min, m.data.box.lon_max}},
        {"base_period", {m.data.base_period.first, m.data.base_period.last}},
        {"train_period", {m.data.train_period.first, m.data.train_period.last}},
        {"weighting", weighting_name(m.data.weighting)},
        {"k", m.data.k},
        {"leads", m.data.leads},
        {"n_samples", m.n_samples},
        {"n_dropped", m.n_dropped},
        {"files", files}}},
      {"history", {{"train_loss", m.history.train_loss}, {"val_loss", m.history.val_loss}, {"steps", m.history.steps}}}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write manifest {}", path.string()));
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

#define ENSOGRAPH_TRAIN_INSTANTIATE(T)                                                                 \
  template Var<T> mae_loss(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mse_loss(const Var<T>&, const Var<T>&);                                              \
  template struct AdamState<T>;                                                                        \
  template void adam_step(stgnn::ModelParams<T>&, const std::vector<Tensor<T>>&, AdamState<T>&, std::size_t, \
                          const TrainConfig&);                                                         \
  template double clip_gradients(std::vector<Tensor<T>>&, double);

ENSOGRAPH_TRAIN_INSTANTIATE(float)
ENSOGRAPH_TRAIN_INSTANTIATE(double)

#undef ENSOGRAPH_TRAIN_INSTANTIATE

}  // namespace ensograph::train
