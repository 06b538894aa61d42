#include "ensograph/stgnn.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "ensograph/errors.hpp"
#include "ensograph/rng.hpp"

namespace ensograph::stgnn {

using adiff::Shape;
using adiff::Tape;
using adiff::Tensor;
using adiff::Var;

std::size_t ModelConfig::receptive_field() const {
  std::size_t field = 1;
  for (std::size_t d : dilations) field += d * (kernel_size - 1);
  return field;
}

std::size_t ModelConfig::time_length(std::size_t l) const {
  std::size_t t = window;
  for (std::size_t q = 0; q < l; ++q) t -= dilations[q] * (kernel_size - 1);
  return t;
}

void ModelConfig::validate() const {
  if (n_nodes < 1) throw UsageError("n_nodes must be >= 1");
  if (horizon < 1) throw UsageError("horizon must be >= 1");
  if (layers < 1) throw UsageError("layers must be >= 1");
  if (kernel_size < 1) throw UsageError("kernel_size must be >= 1");
  if (dilations.size() != layers) {
    throw UsageError(fmt::format("{} dilations given for {} layers", dilations.size(), layers));
  }
  for (std::size_t d : dilations) {
    if (d < 1) throw UsageError("dilations must be >= 1");
  }
  if (residual_channels < 1 || conv_channels < 1 || skip_channels < 1 || end_channels < 1) {
    throw UsageError("channel widths must be >= 1");
  }
  if (mixhop_depth < 1) throw UsageError("mixhop_depth must be >= 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw UsageError(fmt::format("beta={} outside [0, 1]", beta));
  if (window < receptive_field()) {
    std::string terms;
    for (std::size_t d : dilations) terms += fmt::format(" + {}*{}", d, kernel_size - 1);
    throw UsageError(fmt::format(
        "window {} is shorter than the receptive field 1{} = {}; use smaller dilations or a longer window", window,
        terms, receptive_field()));
  }
  graph.validate(n_nodes);
}

template <typename T>
std::size_t ModelParams<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw UsageError(fmt::format("model has no parameter '{}'", name));
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 marks a node embedding
};

std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  const std::size_t N = c.n_nodes, R = c.residual_channels, Cc = c.conv_channels, S = c.skip_channels,
                    E = c.end_channels, K = c.kernel_size;
  std::vector<ParamSpec> specs;
  specs.push_back({"emb.e1", {N, c.graph.d}, 0});
  specs.push_back({"emb.e2", {N, c.graph.d}, 0});
  specs.push_back({"start.w", {R, 1, 1, 1}, 1});
  specs.push_back({"start.b", {R, 1, 1}, 1});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = fmt::format("layer{}.", l);
    specs.push_back({p + "filter.w", {Cc, R, 1, K}, R * K});
    specs.push_back({p + "filter.b", {Cc, 1, 1}, R * K});
    specs.push_back({p + "gate.w", {Cc, R, 1, K}, R * K});
    specs.push_back({p + "gate.b", {Cc, 1, 1}, R * K});
    for (const char* dir : {"fwd", "bwd"}) {
      for (std::size_t j = 0; j <= c.mixhop_depth; ++j) {
        specs.push_back({fmt::format("{}mix.{}.{}.w", p, dir, j), {R, Cc, 1, 1}, Cc});
      }
      specs.push_back({fmt::format("{}mix.{}.b", p, dir), {R, 1, 1}, Cc});
    }
    const std::size_t t_out = c.time_length(l + 1);
    specs.push_back({p + "skip.w", {S, R, 1, t_out}, R * t_out});
    specs.push_back({p + "skip.b", {S, 1, 1}, R * t_out});
  }
  specs.push_back({"end1.w", {E, S, 1, 1}, S});
  specs.push_back({"end1.b", {E, 1, 1}, S});
  specs.push_back({"end2.w", {c.horizon, E, 1, 1}, E});
  specs.push_back({"end2.b", {c.horizon, 1, 1}, E});
  return specs;
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams<T> params;
  Rng rng(seed);
  for (const ParamSpec& spec : param_specs(config)) {
    Tensor<T> t(spec.shape);
    if (spec.fan_in == 0) {
      for (T& v : t.data()) v = static_cast<T>(0.1 * rng.normal());
    } else {
      const double bound = std::sqrt(1.0 / static_cast<double>(spec.fan_in));
      for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    params.names.push_back(spec.name);
    params.tensors.push_back(std::move(t));
  }
  return params;
}

template <typename T>
ModelParams<T> zero_params(const ModelConfig& config) {
  config.validate();
  ModelParams<T> params;
  for (const ParamSpec& spec : param_specs(config)) {
    params.names.push_back(spec.name);
    params.tensors.emplace_back(spec.shape, T{0});
  }
  return params;
}

template <typename T>
Var<T> temporal_block(const Var<T>& x, const Var<T>& filter, const Var<T>& filter_bias, const Var<T>& gate,
                      const Var<T>& gate_bias, std::size_t dilation) {
  const Var<T> f = tanh(dilated_conv1d(x, filter, dilation) + filter_bias);
  const Var<T> g = sigmoid(dilated_conv1d(x, gate, dilation) + gate_bias);
  return f * g;
}

template <typename T>
Var<T> mixhop_conv(const Var<T>& h, const Var<T>& a_norm, double beta, std::span<const Var<T>> hop_weights,
                   const Var<T>& bias) {
  const Tensor<T>& a = a_norm.value();
  if (a.rank() != 2 || a.shape()[0] != a.shape()[1]) throw UsageError("mix-hop adjacency must be square");
  const std::size_t n = a.shape()[0];
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += static_cast<double>(a[i * n + j]);
    if (std::abs(row - 1.0) > 1e-4) {
      throw UsageError(fmt::format("mix-hop adjacency row {} sums to {}, expected 1", i, row));
    }
  }
  if (hop_weights.empty()) throw UsageError("mix-hop needs at least one hop weight");

  Var<T> out = dilated_conv1d(h, hop_weights[0], 1);
  Var<T> state = h;
  const Var<T> retained = scale(h, static_cast<T>(beta));
  for (std::size_t j = 1; j < hop_weights.size(); ++j) {
    state = retained + scale(matmul(a_norm, state), static_cast<T>(1.0 - beta));
    out = out + dilated_conv1d(state, hop_weights[j], 1);
  }
  return out + bias;
}

template <typename T>
Var<T> forward(const ModelConfig& config, const ModelParams<T>& params, std::span<const Var<T>> vars,
               const Var<T>& x) {
  if (vars.size() != params.size()) throw UsageError("parameter variable count mismatch");
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != 1 || xs[2] != config.n_nodes || xs[3] != config.window) {
    throw UsageError(fmt::format("input shape {} does not match [B,1,{},{}]", adiff::to_string(xs),
                                 config.n_nodes, config.window));
  }
  auto p = [&](const std::string& name) -> const Var<T>& { return vars[params.index_of(name)]; };
  auto check_finite = [](const Var<T>& v, const std::string& where) {
    if (!v.value().all_finite()) throw NumericalError(fmt::format("non-finite values after {}", where));
  };

  const T scale_in = static_cast<T>(1.0 / params.input_scale);
  Var<T> h = dilated_conv1d(scale(x, scale_in), p("start.w"), 1) + p("start.b");

  const Var<T> a = graph::topk_sparsify(
      graph::learn_adjacency(p("emb.e1"), p("emb.e2"), static_cast<T>(config.graph.alpha)), config.graph.topk);
  const Var<T> a_fwd = graph::normalize(a);
  const Var<T> a_bwd = graph::normalize(transpose(a));

  Var<T> skip;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string pre = fmt::format("layer{}.", l);
    const std::size_t t_in = config.time_length(l);
    const std::size_t t_out = config.time_length(l + 1);
    const Var<T> g = temporal_block(h, p(pre + "filter.w"), p(pre + "filter.b"), p(pre + "gate.w"),
                                    p(pre + "gate.b"), config.dilations[l]);
    std::vector<Var<T>> fwd_w;
    std::vector<Var<T>> bwd_w;
    for (std::size_t j = 0; j <= config.mixhop_depth; ++j) {
      fwd_w.push_back(p(fmt::format("{}mix.fwd.{}.w", pre, j)));
      bwd_w.push_back(p(fmt::format("{}mix.bwd.{}.w", pre, j)));
    }
    const Var<T> mixed = mixhop_conv<T>(g, a_fwd, config.beta, fwd_w, p(pre + "mix.fwd.b")) +
                         mixhop_conv<T>(g, a_bwd, config.beta, bwd_w, p(pre + "mix.bwd.b"));
    h = mixed + slice(h, 3, t_in - t_out, t_out);
    const Var<T> s = dilated_conv1d(h, p(pre + "skip.w"), 1) + p(pre + "skip.b");
    skip = l == 0 ? s : skip + s;
    check_finite(h, fmt::format("layer {}", l));
  }
  Var<T> out = relu(skip);
  out = relu(dilated_conv1d(out, p("end1.w"), 1) + p("end1.b"));
  out = dilated_conv1d(out, p("end2.w"), 1) + p("end2.b");
  out = scale(reshape(out, Shape{xs[0], config.horizon, config.n_nodes}), static_cast<T>(params.input_scale));
  check_finite(out, "output head");
  return out;
}

template <typename T>
Tensor<T> forward(const ModelConfig& config, const ModelParams<T>& params, const Tensor<T>& x) {
  Tape<T> tape;
  std::vector<Var<T>> vars;
  vars.reserve(params.size());
  for (const auto& t : params.tensors) vars.push_back(tape.constant(t));
  return forward(config, params, std::span<const Var<T>>(vars), tape.constant(x)).value();
}

template <typename T>
graph::Adjacency learned_adjacency(const ModelConfig& config, const ModelParams<T>& params) {
  Tape<T> tape;
  const Var<T> a = graph::topk_sparsify(
      graph::learn_adjacency(tape.constant(params["emb.e1"]), tape.constant(params["emb.e2"]),
                             static_cast<T>(config.graph.alpha)),
      config.graph.topk);
  return graph::Adjacency::from_tensor(a.value());
}

std::vector<double> predict_oni(std::span<const double> node_preds, std::size_t horizon, double last_observed,
                                std::span<const double> weights, int k) {
  if (k != 3) throw UsageError(fmt::format("index forecasts use k=3, got k={}", k));
  if (horizon < 2) throw UsageError(fmt::format("horizon {} too short for a centered 3-month mean", horizon));
  const std::size_t n = weights.size();
  if (node_preds.size() != horizon * n) {
    throw UsageError(fmt::format("{} node predictions for horizon {} x {} nodes", node_preds.size(), horizon, n));
  }
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<double> area(horizon + 1);
  area[0] = last_observed;
  for (std::size_t h = 0; h < horizon; ++h) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += weights[i] * node_preds[h * n + i];
    area[h + 1] = acc / wsum;
  }
  std::vector<double> out(horizon - 1);
  for (std::size_t lead = 1; lead < horizon; ++lead) {
    out[lead - 1] = (area[lead - 1] + area[lead] + area[lead + 1]) / 3.0;
  }
  return out;
}

#define ENSOGRAPH_STGNN_INSTANTIATE(T)                                                                        \
  template struct ModelParams<T>;                                                                             \
  template ModelParams<T> init_params(const ModelConfig&, std::uint64_t);                                     \
  template ModelParams<T> zero_params(const ModelConfig&);                                                    \
  template Var<T> temporal_block(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,   \
                                 std::size_t);                                                                \
  template Var<T> mixhop_conv(const Var<T>&, const Var<T>&, double, std::span<const Var<T>>, const Var<T>&); \
  template Var<T> forward(const ModelConfig&, const ModelParams<T>&, std::span<const Var<T>>, const Var<T>&); \
  template Tensor<T> forward(const ModelConfig&, const ModelParams<T>&, const Tensor<T>&);                    \
  template graph::Adjacency learned_adjacency(const ModelConfig&, const ModelParams<T>&);

ENSOGRAPH_STGNN_INSTANTIATE(float)
ENSOGRAPH_STGNN_INSTANTIATE(double)

#undef ENSOGRAPH_STGNN_INSTANTIATE

}  // namespace ensograph::stgnn
