#include "ensograph/adiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <fmt/format.h>

#include "ensograph/errors.hpp"

namespace ensograph::adiff {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_)) {
    throw UsageError(fmt::format("tensor data length {} does not match shape {}", data_.size(),
                                 to_string(shape_)));
  }
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw UsageError("index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw UsageError("index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw UsageError(fmt::format("item() on tensor of shape {}", to_string(shape_)));
  return data_[0];
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Var / Gradients / Tape

template <typename T>
bool Var<T>::attached() const {
  return tape_ != nullptr && tape_->generation_ == generation_ && id_ < tape_->nodes_.size();
}

template <typename T>
const Tensor<T>& Var<T>::value() const {
  if (!attached()) throw UsageError("variable is detached from its tape");
  return tape_->nodes_[id_].value;
}

template <typename T>
Tape<T>& Var<T>::tape() const {
  if (!attached()) throw UsageError("variable is detached from its tape");
  return *tape_;
}

template <typename T>
bool Var<T>::requires_grad() const {
  if (!attached()) throw UsageError("variable is detached from its tape");
  return tape_->nodes_[id_].requires_grad;
}

template <typename T>
bool Gradients<T>::contains(const Var<T>& leaf) const {
  return leaf.generation_ == generation_ && leaf.id_ < grads_.size() && grads_[leaf.id_].has_value();
}

template <typename T>
const Tensor<T>& Gradients<T>::operator[](const Var<T>& leaf) const {
  if (!contains(leaf)) throw UsageError("no gradient recorded for this variable");
  return *grads_[leaf.id_];
}

template <typename T>
void Tape<T>::check(const Var<T>& v) const {
  if (v.tape_ != this || !v.attached()) throw UsageError("variable is detached from this tape");
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad, true, {}, {}});
  return Var<T>(this, nodes_.size() - 1, generation_);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardRule<T> rule) {
  Node node;
  node.value = std::move(value);
  for (const Var<T>& in : inputs) {
    check(in);
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1, generation_);
}

template <typename T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) {
  check(loss);
  const Node& loss_node = nodes_[loss.id_];
  if (loss_node.value.size() != 1) {
    throw UsageError(fmt::format("backward needs a scalar loss, got shape {}",
                                 to_string(loss_node.value.shape())));
  }
  std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
  if (loss_node.requires_grad) grads[loss.id_] = Tensor<T>(loss_node.value.shape(), T{1});

  std::vector<const Tensor<T>*> in_values;
  std::vector<Tensor<T>*> in_grads;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.is_leaf || !grads[i] || !node.rule) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t j : node.inputs) {
      in_values.push_back(&nodes_[j].value);
      if (nodes_[j].requires_grad) {
        if (!grads[j]) grads[j] = Tensor<T>(nodes_[j].value.shape(), T{0});
        in_grads.push_back(&*grads[j]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.rule(BackwardContext<T>{*grads[i], node.value, in_values, in_grads});
    grads[i].reset();
  }

  Gradients<T> out;
  out.generation_ = generation_;
  out.grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].is_leaf || !nodes_[i].requires_grad) continue;
    out.grads_[i] = grads[i] ? std::move(*grads[i]) : Tensor<T>(nodes_[i].value.shape(), T{0});
  }
  clear();
  return out;
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
  ++generation_;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t r = 0; r < rank; ++r) {
    const std::size_t da = r < rank - a.size() ? 1 : a[r - (rank - a.size())];
    const std::size_t db = r < rank - b.size() ? 1 : b[r - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw UsageError(fmt::format("shapes {} and {} are not broadcastable", to_string(a), to_string(b)));
    }
    out[r] = da == 1 ? db : da;
  }
  return out;
}

namespace {

/// Element strides of `shape` right-aligned into `out`; stretched axes get 0.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    const std::size_t axis_in = shape.size() - 1 - k;
    const std::size_t axis_out = out.size() - 1 - k;
    if (shape[axis_in] != 1) strides[axis_out] = stride;
    stride *= shape[axis_in];
  }
  return strides;
}

/// Calls f(out_index, a_offset, b_offset) for every element of `out`.
template <typename F>
void broadcast_loop(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                    F&& f) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  if (out.empty()) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t rank = out.size();
  const std::size_t inner = out[rank - 1];
  const std::size_t step_a = sa[rank - 1];
  const std::size_t step_b = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t r = 0; r < inner; ++r) f(base + r, oa + r * step_a, ob + r * step_b);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations

template <typename T>
Var<T> apply_unary(const Var<T>& x, Unary f) {
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  auto src = in.data();
  auto dst = out.data();
  for (std::size_t n = 0; n < src.size(); ++n) {
    const T v = src[n];
    switch (f) {
      case Unary::Relu: dst[n] = v > T{0} ? v : T{0}; break;
      case Unary::Tanh: dst[n] = std::tanh(v); break;
      case Unary::Sigmoid: dst[n] = sigmoid_value(v); break;
      case Unary::Neg: dst[n] = -v; break;
      case Unary::Abs: dst[n] = std::abs(v); break;
    }
  }
  return x.tape().record(std::move(out), {x}, [f](const BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.input_grads[0];
    if (!gx) return;
    auto g = ctx.grad_out.data();
    auto xin = ctx.inputs[0]->data();
    auto y = ctx.output.data();
    auto dx = gx->data();
    for (std::size_t n = 0; n < g.size(); ++n) {
      switch (f) {
        case Unary::Relu: dx[n] += xin[n] > T{0} ? g[n] : T{0}; break;
        case Unary::Tanh: dx[n] += g[n] * (T{1} - y[n] * y[n]); break;
        case Unary::Sigmoid: dx[n] += g[n] * y[n] * (T{1} - y[n]); break;
        case Unary::Neg: dx[n] -= g[n]; break;
        case Unary::Abs: dx[n] += xin[n] > T{0} ? g[n] : (xin[n] < T{0} ? -g[n] : T{0}); break;
      }
    }
  });
}

template <typename T>
Var<T> combine_binary(const Var<T>& a, const Var<T>& b, Binary f) {
  const Tensor<T>& va = a.value();
  const Tensor<T>& vb = b.value();
  const Shape out_shape = broadcast_shape(va.shape(), vb.shape());
  Tensor<T> out(out_shape);
  const auto sa = broadcast_strides(va.shape(), out_shape);
  const auto sb = broadcast_strides(vb.shape(), out_shape);
  {
    auto pa = va.data();
    auto pb = vb.data();
    auto po = out.data();
    switch (f) {
      case Binary::Add: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] + pb[j]; }); break;
      case Binary::Sub: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] - pb[j]; }); break;
      case Binary::Mul: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] * pb[j]; }); break;
      case Binary::Div: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] / pb[j]; }); break;
    }
  }
  return a.tape().record(std::move(out), {a, b}, [f, out_shape, sa, sb](const BackwardContext<T>& ctx) {
    auto g = ctx.grad_out.data();
    auto pa = ctx.inputs[0]->data();
    auto pb = ctx.inputs[1]->data();
    Tensor<T>* ga = ctx.input_grads[0];
    Tensor<T>* gb = ctx.input_grads[1];
    if (ga) {
      auto da = ga->data();
      switch (f) {
        case Binary::Add:
        case Binary::Sub: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t) { da[i] += g[o]; }); break;
        case Binary::Mul: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { da[i] += g[o] * pb[j]; }); break;
        case Binary::Div: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { da[i] += g[o] / pb[j]; }); break;
      }
    }
    if (gb) {
      auto db = gb->data();
      switch (f) {
        case Binary::Add: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t, std::size_t j) { db[j] += g[o]; }); break;
        case Binary::Sub: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t, std::size_t j) { db[j] -= g[o]; }); break;
        case Binary::Mul: broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { db[j] += g[o] * pa[i]; }); break;
        case Binary::Div:
          broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
            db[j] -= g[o] * pa[i] / (pb[j] * pb[j]);
          });
          break;
      }
    }
  });
}

namespace {

struct MatmulPlan {
  std::size_t m = 0, k = 0, n = 0;
  Shape out_shape;
  std::vector<std::size_t> a_offsets;  // per output matrix, offset of the a matrix
  std::vector<std::size_t> b_offsets;
};

MatmulPlan plan_matmul(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw UsageError(fmt::format("matmul needs rank >= 2 operands, got {} and {}", to_string(a), to_string(b)));
  }
  MatmulPlan plan;
  plan.m = a[a.size() - 2];
  plan.k = a[a.size() - 1];
  plan.n = b[b.size() - 1];
  if (b[b.size() - 2] != plan.k) {
    throw UsageError(fmt::format("matmul inner dimensions differ: {} x {}", to_string(a), to_string(b)));
  }
  const Shape batch_a(a.begin(), a.end() - 2);
  const Shape batch_b(b.begin(), b.end() - 2);
  const Shape batch = broadcast_shape(batch_a, batch_b);
  auto sa = broadcast_strides(batch_a, batch);
  auto sb = broadcast_strides(batch_b, batch);
  for (auto& s : sa) s *= plan.m * plan.k;
  for (auto& s : sb) s *= plan.k * plan.n;
  const std::size_t count = numel(batch);
  plan.a_offsets.resize(count);
  plan.b_offsets.resize(count);
  broadcast_loop(batch, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
    plan.a_offsets[o] = i;
    plan.b_offsets[o] = j;
  });
  plan.out_shape = batch;
  plan.out_shape.push_back(plan.m);
  plan.out_shape.push_back(plan.n);
  return plan;
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& va = a.value();
  const Tensor<T>& vb = b.value();
  auto plan = std::make_shared<const MatmulPlan>(plan_matmul(va.shape(), vb.shape()));
  Tensor<T> out(plan->out_shape);
  {
    const std::size_t m = plan->m, k = plan->k, n = plan->n;
    auto pa = va.data();
    auto pb = vb.data();
    auto po = out.data();
    for (std::size_t q = 0; q < plan->a_offsets.size(); ++q) {
      const T* A = pa.data() + plan->a_offsets[q];
      const T* B = pb.data() + plan->b_offsets[q];
      T* C = po.data() + q * m * n;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = A[i * k + p];
          if (aip == T{0}) continue;
          const T* brow = B + p * n;
          T* crow = C + i * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
      }
    }
  }
  return a.tape().record(std::move(out), {a, b}, [plan](const BackwardContext<T>& ctx) {
    const std::size_t m = plan->m, k = plan->k, n = plan->n;
    auto g = ctx.grad_out.data();
    auto pa = ctx.inputs[0]->data();
    auto pb = ctx.inputs[1]->data();
    Tensor<T>* ga = ctx.input_grads[0];
    Tensor<T>* gb = ctx.input_grads[1];
    for (std::size_t q = 0; q < plan->a_offsets.size(); ++q) {
      const T* G = g.data() + q * m * n;
      const T* A = pa.data() + plan->a_offsets[q];
      const T* B = pb.data() + plan->b_offsets[q];
      if (ga) {
        // dA = dC * B^T
        T* dA = ga->data().data() + plan->a_offsets[q];
        for (std::size_t i = 0; i < m; ++i) {
          const T* grow = G + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const T* brow = B + p * n;
            T acc{0};
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            dA[i * k + p] += acc;
          }
        }
      }
      if (gb) {
        // dB = A^T * dC
        T* dB = gb->data().data() + plan->b_offsets[q];
        for (std::size_t i = 0; i < m; ++i) {
          const T* grow = G + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const T aip = A[i * k + p];
            if (aip == T{0}) continue;
            T* drow = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  if (in.rank() < 2) throw UsageError("transpose needs rank >= 2");
  Shape shape = in.shape();
  const std::size_t rows = shape[shape.size() - 2];
  const std::size_t cols = shape[shape.size() - 1];
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  const std::size_t batch = rows * cols == 0 ? 0 : in.size() / (rows * cols);
  Tensor<T> out(shape);
  auto src = in.data();
  auto dst = out.data();
  for (std::size_t q = 0; q < batch; ++q) {
    const std::size_t base = q * rows * cols;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) dst[base + j * rows + i] = src[base + i * cols + j];
    }
  }
  return x.tape().record(std::move(out), {x}, [rows, cols, batch](const BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.input_grads[0];
    if (!gx) return;
    auto g = ctx.grad_out.data();
    auto dx = gx->data();
    for (std::size_t q = 0; q < batch; ++q) {
      const std::size_t base = q * rows * cols;
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) dx[base + i * cols + j] += g[base + j * rows + i];
      }
    }
  });
}

template <typename T>
Var<T> dilated_conv1d(const Var<T>& x, const Var<T>& kernel, std::size_t dilation) {
  const Tensor<T>& vx = x.value();
  const Tensor<T>& vk = kernel.value();
  if (vx.rank() != 4 || vk.rank() != 4) {
    throw UsageError(fmt::format("dilated_conv1d expects [B,C,N,T] and [O,C,1,K], got {} and {}",
                                 to_string(vx.shape()), to_string(vk.shape())));
  }
  if (dilation < 1) throw UsageError("dilation must be >= 1");
  const std::size_t B = vx.shape()[0], C = vx.shape()[1], N = vx.shape()[2], T_in = vx.shape()[3];
  const std::size_t O = vk.shape()[0], K = vk.shape()[3];
  if (vk.shape()[1] != C || vk.shape()[2] != 1 || K < 1) {
    throw UsageError(fmt::format("kernel {} does not fit input {}", to_string(vk.shape()), to_string(vx.shape())));
  }
  const std::size_t span = dilation * (K - 1);
  if (T_in < span + 1) {
    throw UsageError(fmt::format("time length {} too short for kernel {} with dilation {}", T_in, K, dilation));
  }
  const std::size_t T_out = T_in - span;
  Tensor<T> out(Shape{B, O, N, T_out});
  {
    auto px = vx.data();
    auto pk = vk.data();
    auto po = out.data();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < O; ++o) {
        T* dst = po.data() + (b * O + o) * N * T_out;
        for (std::size_t c = 0; c < C; ++c) {
          const T* src = px.data() + (b * C + c) * N * T_in;
          for (std::size_t q = 0; q < K; ++q) {
            const T w = pk[(o * C + c) * K + q];
            if (w == T{0}) continue;
            const std::size_t shift = q * dilation;
            for (std::size_t n = 0; n < N; ++n) {
              const T* s = src + n * T_in + shift;
              T* d = dst + n * T_out;
              for (std::size_t t = 0; t < T_out; ++t) d[t] += w * s[t];
            }
          }
        }
      }
    }
  }
  return x.tape().record(std::move(out), {x, kernel}, [=](const BackwardContext<T>& ctx) {
    auto g = ctx.grad_out.data();
    auto px = ctx.inputs[0]->data();
    auto pk = ctx.inputs[1]->data();
    Tensor<T>* gx = ctx.input_grads[0];
    Tensor<T>* gk = ctx.input_grads[1];
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < O; ++o) {
        const T* gsrc = g.data() + (b * O + o) * N * T_out;
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t xbase = (b * C + c) * N * T_in;
          for (std::size_t q = 0; q < K; ++q) {
            const std::size_t widx = (o * C + c) * K + q;
            const std::size_t shift = q * dilation;
            if (gk) {
              T acc{0};
              for (std::size_t n = 0; n < N; ++n) {
                const T* s = px.data() + xbase + n * T_in + shift;
                const T* gg = gsrc + n * T_out;
                for (std::size_t t = 0; t < T_out; ++t) acc += gg[t] * s[t];
              }
              gk->data()[widx] += acc;
            }
            if (gx) {
              const T w = pk[widx];
              if (w == T{0}) continue;
              T* dx = gx->data().data() + xbase;
              for (std::size_t n = 0; n < N; ++n) {
                T* d = dx + n * T_in + shift;
                const T* gg = gsrc + n * T_out;
                for (std::size_t t = 0; t < T_out; ++t) d[t] += w * gg[t];
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> reduce(const Var<T>& x, std::span<const std::size_t> axes, Reduction f, bool keep_dims) {
  const Tensor<T>& in = x.value();
  const Shape& shape = in.shape();
  std::vector<bool> reduced(shape.size(), false);
  for (std::size_t axis : axes) {
    if (axis >= shape.size()) {
      throw UsageError(fmt::format("reduce axis {} invalid for shape {}", axis, to_string(shape)));
    }
    reduced[axis] = true;
  }
  Shape kept = shape;
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t r = 0; r < shape.size(); ++r) {
    if (reduced[r]) {
      kept[r] = 1;
      count *= shape[r];
      if (keep_dims) out_shape.push_back(1);
    } else {
      out_shape.push_back(shape[r]);
    }
  }
  const auto s_in = broadcast_strides(shape, shape);
  const auto s_out = broadcast_strides(kept, shape);
  const T divisor = f == Reduction::Mean ? static_cast<T>(count) : T{1};
  Tensor<T> out(out_shape);
  {
    auto src = in.data();
    auto dst = out.data();
    broadcast_loop(shape, s_in, s_out, [&](std::size_t, std::size_t i, std::size_t o) { dst[o] += src[i]; });
    if (f == Reduction::Mean) {
      for (T& v : dst) v /= divisor;
    }
  }
  return x.tape().record(std::move(out), {x}, [shape, s_in, s_out, divisor](const BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.input_grads[0];
    if (!gx) return;
    auto g = ctx.grad_out.data();
    auto dx = gx->data();
    broadcast_loop(shape, s_in, s_out, [&](std::size_t, std::size_t i, std::size_t o) { dx[i] += g[o] / divisor; });
  });
}

template <typename T>
Var<T> reduce_all(const Var<T>& x, Reduction f) {
  std::vector<std::size_t> axes(x.value().rank());
  for (std::size_t r = 0; r < axes.size(); ++r) axes[r] = r;
  return reduce(x, std::span<const std::size_t>(axes), f, false);
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [factor](const BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.input_grads[0];
    if (!gx) return;
    auto g = ctx.grad_out.data();
    auto dx = gx->data();
    for (std::size_t n = 0; n < g.size(); ++n) dx[n] += factor * g[n];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  const Tensor<T>& in = x.value();
  if (numel(shape) != in.size()) {
    throw UsageError(fmt::format("cannot reshape {} to {}", to_string(in.shape()), to_string(shape)));
  }
  Tensor<T> out(std::move(shape), in.vec());
  return x.tape().record(std::move(out), {x}, [](const BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.input_grads[0];
    if (!gx) return;
    auto g = ctx.grad_out.data();
    auto dx = gx->data();
    for (std::size_t n = 0; n < g.size(); ++n) dx[n] += g[n];
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor<T>& in = x.value();
  const Shape& shape = in.shape();
  if (axis >= shape.size() || start + length > shape[axis]) {
    throw UsageError(fmt::format("slice [{}, {}) on axis {} out of range for {}", start, start + length, axis,
                                 to_string(shape)));
  }
  std::size_t outer = 1;
  for (std::size_t r = 0; r < axis; ++r) outer *= shape[r];
  std::size_t inner = 1;
  for (std::size_t r = axis + 1; r < shape.size(); ++r) inner *= shape[r];
  const std::size_t full = shape[axis];
  Shape out_shape = shape;
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  {
    auto src = in.data();
    auto dst = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + static_cast<long>((o * full + start) * inner), length * inner,
                  dst.begin() + static_cast<long>(o * length * inner));
    }
  }
  return x.tape().record(std::move(out), {x}, [=](const BackwardContext<T>& ctx) {
    Tensor<T>* gx = ctx.input_grads[0];
    if (!gx) return;
    auto g = ctx.grad_out.data();
    auto dx = gx->data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t e = 0; e < length * inner; ++e) {
        dx[(o * full + start) * inner + e] += g[o * length * inner + e];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Finite differences

GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor<double>> params, double h, double tol,
                           double abs_floor) {
  Gradients<double> analytic;
  std::vector<Var<double>> leaves;
  {
    Tape<double> tape;
    for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
    Var<double> loss = f(tape, leaves);
    analytic = tape.backward(loss);
  }
  auto evaluate = [&](const std::vector<Tensor<double>>& values) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& p : values) vars.push_back(tape.leaf(p, false));
    return f(tape, vars).value().item();
  };

  GradCheckReport report;
  std::vector<Tensor<double>> work(params.begin(), params.end());
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradCheckEntry entry;
    const Tensor<double>& grad = analytic[leaves[k]];
    for (std::size_t n = 0; n < params[k].size(); ++n) {
      const double saved = work[k][n];
      work[k][n] = saved + h;
      const double up = evaluate(work);
      work[k][n] = saved - h;
      const double down = evaluate(work);
      work[k][n] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grad[n];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (!(rel <= entry.max_rel_error)) {
        entry.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        entry.worst_index = n;
      }
    }
    entry.passed = entry.max_rel_error <= tol;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.per_param.push_back(entry);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Instantiations

#define ENSOGRAPH_ADIFF_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                                     \
  template class Var<T>;                                                                        \
  template class Gradients<T>;                                                                  \
  template class Tape<T>;                                                                       \
  template Var<T> apply_unary(const Var<T>&, Unary);                                            \
  template Var<T> combine_binary(const Var<T>&, const Var<T>&, Binary);                         \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                         \
  template Var<T> transpose(const Var<T>&);                                                     \
  template Var<T> dilated_conv1d(const Var<T>&, const Var<T>&, std::size_t);                    \
  template Var<T> reduce(const Var<T>&, std::span<const std::size_t>, Reduction, bool);         \
  template Var<T> reduce_all(const Var<T>&, Reduction);                                         \
  template Var<T> scale(const Var<T>&, T);                                                      \
  template Var<T> reshape(const Var<T>&, Shape);                                                \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);

ENSOGRAPH_ADIFF_INSTANTIATE(float)
ENSOGRAPH_ADIFF_INSTANTIATE(double)

#undef ENSOGRAPH_ADIFF_INSTANTIATE

}  // namespace ensograph::adiff
