#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcav/tensor.hpp"

namespace dcav {

/// A named learnable tensor with its gradient accumulator and momentum buffer.
template <typename Real>
class Parameter {
 public:
  Parameter(std::string name, Tensor<Real> value);

  const std::string& name() const { return name_; }
  Tensor<Real>& value() { return value_; }
  const Tensor<Real>& value() const { return value_; }
  Tensor<Real>& grad() { return grad_; }
  const Tensor<Real>& grad() const { return grad_; }
  Tensor<Real>& momentum() { return momentum_; }
  const Tensor<Real>& momentum() const { return momentum_; }

  void zero_grad() { grad_.fill(Real(0)); }

 private:
  std::string name_;
  Tensor<Real> value_;
  Tensor<Real> grad_;
  Tensor<Real> momentum_;
};

template <typename Real>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Real>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient after backward(); a zero tensor when nothing flowed here.
  Tensor<Real> grad() const;

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive applications in creation order, which is already a
/// topological order; backward() walks it once in reverse.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Tensor<Real> value);
  /// Leaf that collects a gradient on the tape itself (used by gradient checks).
  Var<Real> input(Tensor<Real> value);
  /// Leaf bound to a parameter; gradients accumulate into Parameter::grad().
  Var<Real> param(Parameter<Real>& p);

  Var<Real> record(const char* op, Tensor<Real> value, std::vector<std::size_t> inputs,
                   BackwardFn backward);

  const Tensor<Real>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const;
  const Tensor<Real>& grad(std::size_t id) const;
  /// Gradient accumulator for node `id`, allocated on first use.
  Tensor<Real>& grad_buffer(std::size_t id);
  std::size_t input(std::size_t node, std::size_t k) const { return nodes_[node].inputs[k]; }
  const char* op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  void backward(const Var<Real>& loss);

 private:
  struct Node {
    const char* op = "";
    Tensor<Real> value;
    Tensor<Real> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<Real>* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Real>*, std::size_t> param_nodes_;
};

// Differentiable primitives. Every op validates shapes (ShapeError) and
// rejects non-finite outputs (NonFiniteError naming the op).

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> transpose(const Var<Real>& a);
template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
/// x (T×n) plus a 1×n row added to every row.
template <typename Real>
Var<Real> add_row(const Var<Real>& x, const Var<Real>& row);
template <typename Real>
Var<Real> scale(const Var<Real>& a, Real s);
template <typename Real>
Var<Real> sum(const Var<Real>& a);
template <typename Real>
Var<Real> concat(std::span<const Var<Real>> parts, std::size_t axis);
template <typename Real>
Var<Real> slice_cols(const Var<Real>& a, std::size_t begin, std::size_t end);
template <typename Real>
Var<Real> slice_rows(const Var<Real>& a, std::size_t begin, std::size_t end);
template <typename Real>
Var<Real> reshape(const Var<Real>& a, Shape shape);
template <typename Real>
Var<Real> sigmoid(const Var<Real>& a);
template <typename Real>
Var<Real> tanh(const Var<Real>& a);
/// Softmax along `axis` of a rank-2 tensor, max-shifted.
template <typename Real>
Var<Real> softmax(const Var<Real>& a, std::size_t axis);
/// Mode-`mode` product (1-based) of a rank-3 tensor with a matrix whose column
/// count equals the tensor's extent along that mode.
template <typename Real>
Var<Real> mode_product(const Var<Real>& t, const Var<Real>& m, std::size_t mode);
/// Sum over rows of −log softmax(logits_row)[target].
template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::span<const int> targets);
/// Σ (a − b)².
template <typename Real>
Var<Real> l2(const Var<Real>& a, const Var<Real>& b);
/// Rows of `table` selected by `ids`; gradients scatter-add into the rows.
template <typename Real>
Var<Real> gather_rows(const Var<Real>& table, std::span<const int> ids);
/// Elementwise clamp to constant bounds; gradient passes only inside the box.
template <typename Real>
Var<Real> clamp(const Var<Real>& a, const Tensor<Real>& lo, const Tensor<Real>& hi);
/// σ(L(t−c+l/2)) − σ(L(t−c−l/2)) over t_i = (i+0.5)/T for a 1×2 (c, l) segment.
template <typename Real>
Var<Real> soft_mask(const Var<Real>& segment, std::size_t frames, Real scale);
/// (mask · rows) / Σ mask for a 1×T mask and T×k rows.
template <typename Real>
Var<Real> weighted_mean(const Var<Real>& mask, const Var<Real>& rows);

}  // namespace dcav
