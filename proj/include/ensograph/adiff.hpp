#pragma once

// Dense tensors with a reverse-mode tape.
//
// Tensor<T> is a plain value (shape + contiguous row-major data). A Tape<T>
// records every operation applied to Var<T> handles, in execution order, so
// the record is topologically sorted by construction. backward() walks it once
// in reverse and then clears it; handles from a cleared tape are detached.
//
// Broadcasting follows the trailing-axis rule: shapes are right-aligned and
// size-1 axes stretch. Gradients are summed back over stretched axes.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ensograph::adiff {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t numel(const Shape& shape);
[[nodiscard]] std::string to_string(const Shape& shape);

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{});
  Tensor(Shape shape, std::vector<T> data);

  [[nodiscard]] static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] const std::vector<T>& vec() const { return data_; }

  [[nodiscard]] T operator[](std::size_t n) const { return data_[n]; }
  T& operator[](std::size_t n) { return data_[n]; }

  /// Row-major element access; index count must equal rank.
  [[nodiscard]] T at(std::initializer_list<std::size_t> index) const;
  T& at(std::initializer_list<std::size_t> index);

  [[nodiscard]] T item() const;
  [[nodiscard]] bool all_finite() const;

  /// Same data, other precision.
  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  [[nodiscard]] std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
class Tape;
template <typename T>
class Gradients;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Tensor<T>& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] Tape<T>& tape() const;
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool attached() const;

 private:
  friend class Tape<T>;
  friend class Gradients<T>;
  Var(Tape<T>* tape, std::size_t id, std::uint64_t generation)
      : tape_(tape), id_(id), generation_(generation) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t generation_ = 0;
};

/// Gradients of one backward pass, one tensor per requires_grad leaf.
template <typename T>
class Gradients {
 public:
  [[nodiscard]] const Tensor<T>& operator[](const Var<T>& leaf) const;
  [[nodiscard]] bool contains(const Var<T>& leaf) const;

 private:
  friend class Tape<T>;
  std::uint64_t generation_ = 0;
  std::vector<std::optional<Tensor<T>>> grads_;
};

/// Read access handed to backward rules.
template <typename T>
struct BackwardContext {
  const Tensor<T>& grad_out;
  const Tensor<T>& output;
  std::span<const Tensor<T>* const> inputs;
  std::span<Tensor<T>* const> input_grads;  // nullptr when that input needs no gradient
};

template <typename T>
using BackwardRule = std::function<void(const BackwardContext<T>&)>;

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records an input. Only requires_grad leaves receive gradients.
  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Records an operation result. `rule` runs only if some input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardRule<T> rule);

  /// Reverse sweep from a scalar loss. Clears the tape afterwards.
  Gradients<T> backward(const Var<T>& loss);

  void clear();
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] std::uint64_t generation() const { return generation_; }

 private:
  friend class Var<T>;

  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<std::size_t> inputs;
    BackwardRule<T> rule;
  };

  void check(const Var<T>& v) const;

  std::deque<Node> nodes_;  // deque keeps value references stable while recording
  std::uint64_t generation_ = 1;
};

enum class Unary { Relu, Tanh, Sigmoid, Neg, Abs };
enum class Binary { Add, Sub, Mul, Div };
enum class Reduction { Sum, Mean };

/// Broadcast result shape; throws UsageError when incompatible.
[[nodiscard]] Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T> Var<T> apply_unary(const Var<T>& x, Unary f);
template <typename T> Var<T> combine_binary(const Var<T>& a, const Var<T>& b, Binary f);

/// [.., m, k] x [.., k, n] with broadcast batch axes.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Swaps the last two axes.
template <typename T> Var<T> transpose(const Var<T>& x);

/// x: [B, C_in, N, T], kernel: [C_out, C_in, 1, K] -> [B, C_out, N, T - d(K-1)]; valid-only.
template <typename T> Var<T> dilated_conv1d(const Var<T>& x, const Var<T>& kernel, std::size_t dilation);

template <typename T>
Var<T> reduce(const Var<T>& x, std::span<const std::size_t> axes, Reduction f, bool keep_dims = false);
template <typename T> Var<T> reduce_all(const Var<T>& x, Reduction f);

template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);

/// Contiguous range [start, start+length) along one axis.
template <typename T> Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename T> Var<T> relu(const Var<T>& x) { return apply_unary(x, Unary::Relu); }
template <typename T> Var<T> tanh(const Var<T>& x) { return apply_unary(x, Unary::Tanh); }
template <typename T> Var<T> sigmoid(const Var<T>& x) { return apply_unary(x, Unary::Sigmoid); }
template <typename T> Var<T> abs(const Var<T>& x) { return apply_unary(x, Unary::Abs); }
template <typename T> Var<T> operator-(const Var<T>& x) { return apply_unary(x, Unary::Neg); }
template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return combine_binary(a, b, Binary::Add); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return combine_binary(a, b, Binary::Sub); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return combine_binary(a, b, Binary::Mul); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return combine_binary(a, b, Binary::Div); }

// Finite-difference verification (64-bit only).

using ScalarFunction = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckEntry {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Central differences against the tape gradient for every coordinate.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
[[nodiscard]] GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor<double>> params,
                                         double h = 1e-5, double tol = 1e-4, double abs_floor = 1e-6);

}  // namespace ensograph::adiff
