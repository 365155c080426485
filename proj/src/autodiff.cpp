#include "dcav/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace dcav {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
Eigen::Map<RowMat<Real>> as_mat(Tensor<Real>& t, std::size_t rows, std::size_t cols) {
  return {t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename Real>
Eigen::Map<const RowMat<Real>> as_mat(const Tensor<Real>& t, std::size_t rows,
                                      std::size_t cols) {
  return {t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename Real>
Eigen::Map<RowMat<Real>> as_mat(Tensor<Real>& t) {
  return as_mat(t, t.rows(), t.cols());
}

template <typename Real>
Eigen::Map<const RowMat<Real>> as_mat(const Tensor<Real>& t) {
  return as_mat(t, t.rows(), t.cols());
}

template <typename Real>
Real stable_sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

template <typename Real>
void require_rank2(const Var<Real>& v, const char* op) {
  require(v.value().rank() == 2, op, "expected a matrix, got " + shape_string(v.shape()));
}

template <typename Real>
void require_same_shape(const Var<Real>& a, const Var<Real>& b, const char* op) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <typename Real>
void require_same_tape(const Var<Real>& a, const Var<Real>& b, const char* op) {
  require(a.valid() && b.valid() && &a.tape() == &b.tape(), op, "operands on different tapes");
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter / Var / Tape

template <typename Real>
Parameter<Real>::Parameter(std::string name, Tensor<Real> value)
    : name_(std::move(name)),
      value_(std::move(value)),
      grad_(value_.shape()),
      momentum_(value_.shape()) {}

template <typename Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape_->value(id_);
}

template <typename Real>
Tensor<Real> Var<Real>::grad() const {
  if (tape_->has_grad(id_)) return tape_->grad(id_);
  return Tensor<Real>(value().shape());
}

template <typename Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::input(Tensor<Real> value) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::param(Parameter<Real>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var<Real>(this, it->second);
  }
  Node n;
  n.op = "param";
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::record(const char* op, Tensor<Real> value, std::vector<std::size_t> inputs,
                             BackwardFn backward) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by op '") + op + "'");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
const Tensor<Real>& Tape<Real>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->value() : n.value;
}

template <typename Real>
bool Tape<Real>::has_grad(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param != nullptr || !n.grad.empty();
}

template <typename Real>
const Tensor<Real>& Tape<Real>::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->grad() : n.grad;
}

template <typename Real>
Tensor<Real>& Tape<Real>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad();
  if (n.grad.empty()) n.grad = Tensor<Real>(n.value.shape());
  return n.grad;
}

template <typename Real>
void Tape<Real>::backward(const Var<Real>& loss) {
  if (&loss.tape() != this) throw InvalidArgument("backward: loss recorded on another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] += Real(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Primitives

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  constexpr const char* op = "matmul";
  require_same_tape(a, b, op);
  require_rank2(a, op);
  require_rank2(b, op);
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  require(av.cols() == bv.rows(), op,
          "inner dimensions differ: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  Tensor<Real> out({av.rows(), bv.cols()});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return a.tape().record(op, std::move(out), {a.id(), b.id()}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    const auto g = as_mat(t.grad(self));
    if (t.requires_grad(ia)) {
      as_mat(t.grad_buffer(ia)).noalias() += g * as_mat(t.value(ib)).transpose();
    }
    if (t.requires_grad(ib)) {
      as_mat(t.grad_buffer(ib)).noalias() += as_mat(t.value(ia)).transpose() * g;
    }
  });
}

template <typename Real>
Var<Real> transpose(const Var<Real>& a) {
  constexpr const char* op = "transpose";
  require_rank2(a, op);
  const Tensor<Real>& av = a.value();
  Tensor<Real> out({av.cols(), av.rows()});
  as_mat(out) = as_mat(av).transpose();
  return a.tape().record(op, std::move(out), {a.id()}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t ia = t.input(self, 0);
    as_mat(t.grad_buffer(ia)) += as_mat(t.grad(self)).transpose();
  });
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  constexpr const char* op = "add";
  require_same_tape(a, b, op);
  require_same_shape(a, b, op);
  Tensor<Real> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(op, std::move(out), {a.id(), b.id()}, [](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t in = t.input(self, k);
      if (!t.requires_grad(in)) continue;
      auto dst = t.grad_buffer(in).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  constexpr const char* op = "sub";
  require_same_tape(a, b, op);
  require_same_shape(a, b, op);
  Tensor<Real> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(op, std::move(out), {a.id(), b.id()}, [](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    if (t.requires_grad(ia)) {
      auto dst = t.grad_buffer(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto dst = t.grad_buffer(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    }
  });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  constexpr const char* op = "mul";
  require_same_tape(a, b, op);
  require_same_shape(a, b, op);
  Tensor<Real> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(op, std::move(out), {a.id(), b.id()}, [](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
    if (t.requires_grad(ia)) {
      const auto other = t.value(ib).data();
      auto dst = t.grad_buffer(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
    if (t.requires_grad(ib)) {
      const auto other = t.value(ia).data();
      auto dst = t.grad_buffer(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
  });
}

template <typename Real>
Var<Real> add_row(const Var<Real>& x, const Var<Real>& row) {
  constexpr const char* op = "add_row";
  require_same_tape(x, row, op);
  require_rank2(x, op);
  require_rank2(row, op);
  require(row.value().rows() == 1 && row.value().cols() == x.value().cols(), op,
          "bias " + shape_string(row.shape()) + " does not fit " + shape_string(x.shape()));
  Tensor<Real> out = x.value();
  as_mat(out).rowwise() += as_mat(row.value()).row(0);
  return x.tape().record(op, std::move(out), {x.id(), row.id()}, [](Tape<Real>& t, std::size_t self) {
    const std::size_t ix = t.input(self, 0), ir = t.input(self, 1);
    const auto g = as_mat(t.grad(self));
    if (t.requires_grad(ix)) as_mat(t.grad_buffer(ix)) += g;
    if (t.requires_grad(ir)) as_mat(t.grad_buffer(ir)).row(0) += g.colwise().sum();
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real s) {
  Tensor<Real> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape().record("scale", std::move(out), {a.id()}, [s](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto dst = t.grad_buffer(t.input(self, 0)).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * g[i];
  });
}

template <typename Real>
Var<Real> sum(const Var<Real>& a) {
  Real total = 0;
  for (Real v : a.value().data()) total += v;
  return a.tape().record("sum", Tensor<Real>({1, 1}, {total}), {a.id()},
                         [](Tape<Real>& t, std::size_t self) {
                           const Real g = t.grad(self)[0];
                           for (auto& v : t.grad_buffer(t.input(self, 0)).data()) v += g;
                         });
}

template <typename Real>
Var<Real> concat(std::span<const Var<Real>> parts, std::size_t axis) {
  constexpr const char* op = "concat";
  require(!parts.empty(), op, "no inputs");
  require(axis < 2, op, "axis must be 0 or 1");
  Tape<Real>& tape = parts.front().tape();
  std::size_t rows = parts.front().value().rows();
  std::size_t cols = parts.front().value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    require(&p.tape() == &tape, op, "operands on different tapes");
    require_rank2(p, op);
    const std::size_t r = p.value().rows(), c = p.value().cols();
    if (axis == 0) {
      require(c == cols, op, "column counts differ");
      total += r;
    } else {
      require(r == rows, op, "row counts differ");
      total += c;
    }
    ids.push_back(p.id());
  }
  Tensor<Real> out(axis == 0 ? Shape{total, cols} : Shape{rows, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    if (axis == 0) {
      as_mat(out).middleRows(offset, v.rows()) = as_mat(v);
      offset += v.rows();
    } else {
      as_mat(out).middleCols(offset, v.cols()) = as_mat(v);
      offset += v.cols();
    }
  }
  return tape.record(op, std::move(out), std::move(ids), [axis, n = parts.size()](Tape<Real>& t, std::size_t self) {
    const auto g = as_mat(t.grad(self));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t in = t.input(self, k);
      const auto& v = t.value(in);
      const std::size_t extent = axis == 0 ? v.rows() : v.cols();
      if (t.requires_grad(in)) {
        if (axis == 0) {
          as_mat(t.grad_buffer(in)) += g.middleRows(offset, extent);
        } else {
          as_mat(t.grad_buffer(in)) += g.middleCols(offset, extent);
        }
      }
      offset += extent;
    }
  });
}

template <typename Real>
Var<Real> slice_cols(const Var<Real>& a, std::size_t begin, std::size_t end) {
  constexpr const char* op = "slice_cols";
  require_rank2(a, op);
  require(begin < end && end <= a.value().cols(), op, "column range out of bounds");
  Tensor<Real> out({a.value().rows(), end - begin});
  as_mat(out) = as_mat(a.value()).middleCols(begin, end - begin);
  return a.tape().record(op, std::move(out), {a.id()}, [begin, end](Tape<Real>& t, std::size_t self) {
    as_mat(t.grad_buffer(t.input(self, 0))).middleCols(begin, end - begin) += as_mat(t.grad(self));
  });
}

template <typename Real>
Var<Real> slice_rows(const Var<Real>& a, std::size_t begin, std::size_t end) {
  constexpr const char* op = "slice_rows";
  require_rank2(a, op);
  require(begin < end && end <= a.value().rows(), op, "row range out of bounds");
  const std::size_t cols = a.value().cols();
  const auto src = a.value().data();
  Tensor<Real> out({end - begin, cols},
                   std::vector<Real>(src.begin() + begin * cols, src.begin() + end * cols));
  return a.tape().record(op, std::move(out), {a.id()}, [begin, cols](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto dst = t.grad_buffer(t.input(self, 0)).data().subspan(begin * cols, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <typename Real>
Var<Real> reshape(const Var<Real>& a, Shape shape) {
  require(shape_size(shape) == a.value().size(), "reshape",
          shape_string(a.shape()) + " cannot become " + shape_string(shape));
  const auto src = a.value().data();
  Tensor<Real> out(std::move(shape), std::vector<Real>(src.begin(), src.end()));
  return a.tape().record("reshape", std::move(out), {a.id()}, [](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto dst = t.grad_buffer(t.input(self, 0)).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& a) {
  Tensor<Real> out = a.value();
  for (auto& v : out.data()) v = stable_sigmoid(v);
  return a.tape().record("sigmoid", std::move(out), {a.id()}, [](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto y = t.value(self).data();
    auto dst = t.grad_buffer(t.input(self, 0)).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i] * (Real(1) - y[i]);
  });
}

template <typename Real>
Var<Real> tanh(const Var<Real>& a) {
  Tensor<Real> out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return a.tape().record("tanh", std::move(out), {a.id()}, [](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto y = t.value(self).data();
    auto dst = t.grad_buffer(t.input(self, 0)).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (Real(1) - y[i] * y[i]);
  });
}

template <typename Real>
Var<Real> softmax(const Var<Real>& a, std::size_t axis) {
  constexpr const char* op = "softmax";
  require_rank2(a, op);
  require(axis < 2, op, "axis must be 0 or 1");
  Tensor<Real> out = a.value();
  auto m = as_mat(out);
  auto normalize = [](auto vec) {
    const Real mx = vec.maxCoeff();
    vec = (vec.array() - mx).exp();
    vec /= vec.sum();
  };
  if (axis == 1) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) normalize(m.row(r));
  } else {
    for (Eigen::Index c = 0; c < m.cols(); ++c) normalize(m.col(c));
  }
  return a.tape().record(op, std::move(out), {a.id()}, [axis](Tape<Real>& t, std::size_t self) {
    const auto y = as_mat(t.value(self));
    const auto g = as_mat(t.grad(self));
    auto dst = as_mat(t.grad_buffer(t.input(self, 0)));
    if (axis == 1) {
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const Real dot = y.row(r).dot(g.row(r));
        dst.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    } else {
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const Real dot = y.col(c).dot(g.col(c));
        dst.col(c).array() += y.col(c).array() * (g.col(c).array() - dot);
      }
    }
  });
}

template <typename Real>
Var<Real> mode_product(const Var<Real>& t3, const Var<Real>& m, std::size_t mode) {
  constexpr const char* op = "mode_product";
  require_same_tape(t3, m, op);
  require(t3.value().rank() == 3, op, "tensor operand must be rank 3");
  require_rank2(m, op);
  require(mode >= 1 && mode <= 3, op, "mode must be 1, 2 or 3");
  const Shape in = t3.shape();
  const std::size_t axis = mode - 1;
  const std::size_t j = m.value().rows();
  require(m.value().cols() == in[axis], op,
          "matrix " + shape_string(m.shape()) + " does not match mode " + std::to_string(mode) +
              " of " + shape_string(in));
  Shape out_shape = in;
  out_shape[axis] = j;
  Tensor<Real> out(out_shape);
  const auto& tv = t3.value();
  const auto mm = as_mat(m.value());
  if (mode == 1) {
    as_mat(out, j, in[1] * in[2]).noalias() = mm * as_mat(tv, in[0], in[1] * in[2]);
  } else if (mode == 2) {
    const std::size_t slab_in = in[1] * in[2], slab_out = j * in[2];
    for (std::size_t i = 0; i < in[0]; ++i) {
      Eigen::Map<const RowMat<Real>> s(tv.data().data() + i * slab_in, in[1], in[2]);
      Eigen::Map<RowMat<Real>> r(out.data().data() + i * slab_out, j, in[2]);
      r.noalias() = mm * s;
    }
  } else {
    as_mat(out, in[0] * in[1], j).noalias() = as_mat(tv, in[0] * in[1], in[2]) * mm.transpose();
  }
  return t3.tape().record(op, std::move(out), {t3.id(), m.id()}, [mode, in, j](Tape<Real>& t, std::size_t self) {
    const std::size_t it = t.input(self, 0), im = t.input(self, 1);
    const auto& g = t.grad(self);
    const auto& tv = t.value(it);
    const auto mm = as_mat(t.value(im));
    const bool need_t = t.requires_grad(it), need_m = t.requires_grad(im);
    if (mode == 1) {
      const auto gm = as_mat(g, j, in[1] * in[2]);
      if (need_m) as_mat(t.grad_buffer(im)).noalias() += gm * as_mat(tv, in[0], in[1] * in[2]).transpose();
      if (need_t) as_mat(t.grad_buffer(it), in[0], in[1] * in[2]).noalias() += mm.transpose() * gm;
    } else if (mode == 2) {
      const std::size_t slab_in = in[1] * in[2], slab_out = j * in[2];
      for (std::size_t i = 0; i < in[0]; ++i) {
        Eigen::Map<const RowMat<Real>> s(tv.data().data() + i * slab_in, in[1], in[2]);
        Eigen::Map<const RowMat<Real>> gs(g.data().data() + i * slab_out, j, in[2]);
        if (need_m) as_mat(t.grad_buffer(im)).noalias() += gs * s.transpose();
        if (need_t) {
          Eigen::Map<RowMat<Real>> ds(t.grad_buffer(it).data().data() + i * slab_in, in[1], in[2]);
          ds.noalias() += mm.transpose() * gs;
        }
      }
    } else {
      const auto gm = as_mat(g, in[0] * in[1], j);
      if (need_m) as_mat(t.grad_buffer(im)).noalias() += gm.transpose() * as_mat(tv, in[0] * in[1], in[2]);
      if (need_t) as_mat(t.grad_buffer(it), in[0] * in[1], in[2]).noalias() += gm * mm;
    }
  });
}

template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, std::span<const int> targets) {
  constexpr const char* op = "cross_entropy";
  require_rank2(logits, op);
  const auto lm = as_mat(logits.value());
  require(static_cast<std::size_t>(lm.rows()) == targets.size(), op,
          "expected one target per logit row");
  Tensor<Real> probs(logits.shape());
  auto pm = as_mat(probs);
  Real loss = 0;
  for (Eigen::Index r = 0; r < lm.rows(); ++r) {
    const int target = targets[r];
    if (target < 0 || target >= lm.cols()) {
      throw InvalidArgument("cross_entropy: target " + std::to_string(target) +
                            " outside [0, " + std::to_string(lm.cols()) + ")");
    }
    const Real mx = lm.row(r).maxCoeff();
    pm.row(r) = (lm.row(r).array() - mx).exp();
    const Real z = pm.row(r).sum();
    pm.row(r) /= z;
    loss += std::log(z) + mx - lm(r, target);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.tape().record(op, Tensor<Real>({1, 1}, {loss}), {logits.id()},
                              [probs = std::move(probs), tgt = std::move(tgt)](Tape<Real>& t, std::size_t self) {
                                const Real g = t.grad(self)[0];
                                auto dst = as_mat(t.grad_buffer(t.input(self, 0)));
                                const auto p = as_mat(probs);
                                dst += g * p;
                                for (std::size_t r = 0; r < tgt.size(); ++r) dst(r, tgt[r]) -= g;
                              });
}

template <typename Real>
Var<Real> l2(const Var<Real>& a, const Var<Real>& b) {
  constexpr const char* op = "l2";
  require_same_tape(a, b, op);
  require_same_shape(a, b, op);
  const auto av = a.value().data(), bv = b.value().data();
  Real total = 0;
  for (std::size_t i = 0; i < av.size(); ++i) total += (av[i] - bv[i]) * (av[i] - bv[i]);
  return a.tape().record(op, Tensor<Real>({1, 1}, {total}), {a.id(), b.id()},
                         [](Tape<Real>& t, std::size_t self) {
                           const Real g = t.grad(self)[0];
                           const std::size_t ia = t.input(self, 0), ib = t.input(self, 1);
                           const auto av = t.value(ia).data(), bv = t.value(ib).data();
                           if (t.requires_grad(ia)) {
                             auto dst = t.grad_buffer(ia).data();
                             for (std::size_t i = 0; i < av.size(); ++i) dst[i] += 2 * g * (av[i] - bv[i]);
                           }
                           if (t.requires_grad(ib)) {
                             auto dst = t.grad_buffer(ib).data();
                             for (std::size_t i = 0; i < av.size(); ++i) dst[i] -= 2 * g * (av[i] - bv[i]);
                           }
                         });
}

template <typename Real>
Var<Real> gather_rows(const Var<Real>& table, std::span<const int> ids) {
  constexpr const char* op = "gather_rows";
  require_rank2(table, op);
  const auto& tv = table.value();
  const std::size_t cols = tv.cols();
  Tensor<Real> out({ids.size(), cols});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw InvalidArgument("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                            std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.data().begin() + ids[r] * cols, cols, out.data().begin() + r * cols);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return table.tape().record(op, std::move(out), {table.id()},
                             [rows = std::move(rows), cols](Tape<Real>& t, std::size_t self) {
                               const auto g = t.grad(self).data();
                               auto dst = t.grad_buffer(t.input(self, 0)).data();
                               for (std::size_t r = 0; r < rows.size(); ++r) {
                                 for (std::size_t c = 0; c < cols; ++c) dst[rows[r] * cols + c] += g[r * cols + c];
                               }
                             });
}

template <typename Real>
Var<Real> clamp(const Var<Real>& a, const Tensor<Real>& lo, const Tensor<Real>& hi) {
  constexpr const char* op = "clamp";
  require(lo.shape() == a.shape() && hi.shape() == a.shape(), op, "bounds must match operand shape");
  Tensor<Real> out = a.value();
  std::vector<char> inside(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    inside[i] = out[i] >= lo[i] && out[i] <= hi[i];
    out[i] = std::clamp(out[i], lo[i], hi[i]);
  }
  return a.tape().record(op, std::move(out), {a.id()}, [inside = std::move(inside)](Tape<Real>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto dst = t.grad_buffer(t.input(self, 0)).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (inside[i]) dst[i] += g[i];
    }
  });
}

template <typename Real>
Var<Real> soft_mask(const Var<Real>& segment, std::size_t frames, Real scale) {
  constexpr const char* op = "soft_mask";
  require(segment.value().rank() == 2 && segment.value().size() == 2, op,
          "segment must be a 1x2 (center, length) row");
  require(frames >= 1, op, "frame count must be positive");
  if (!(scale > 0)) throw InvalidArgument("soft_mask: scale must be positive");
  const Real c = segment.value()[0], l = segment.value()[1];
  Tensor<Real> out({1, frames});
  std::vector<Real> lower(frames), upper(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const Real t = (Real(i) + Real(0.5)) / Real(frames);
    // rising edge at c − l/2, falling edge at c + l/2
    lower[i] = stable_sigmoid(scale * (t - c + l / 2));
    upper[i] = stable_sigmoid(scale * (t - c - l / 2));
    out[i] = lower[i] - upper[i];
  }
  return segment.tape().record(
      op, std::move(out), {segment.id()},
      [lower = std::move(lower), upper = std::move(upper), scale](Tape<Real>& t, std::size_t self) {
        const auto g = t.grad(self).data();
        Real dc = 0, dl = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const Real da = lower[i] * (1 - lower[i]);
          const Real db = upper[i] * (1 - upper[i]);
          dc -= g[i] * scale * (da - db);
          dl += g[i] * (scale / 2) * (da + db);
        }
        auto dst = t.grad_buffer(t.input(self, 0)).data();
        dst[0] += dc;
        dst[1] += dl;
      });
}

template <typename Real>
Var<Real> weighted_mean(const Var<Real>& mask, const Var<Real>& rows) {
  constexpr const char* op = "weighted_mean";
  require_same_tape(mask, rows, op);
  require_rank2(mask, op);
  require_rank2(rows, op);
  const auto& mv = mask.value();
  const auto& ov = rows.value();
  require(mv.rows() == 1 && mv.cols() == ov.rows(), op,
          "mask " + shape_string(mv.shape()) + " does not cover " + shape_string(ov.shape()));
  Real total = 0;
  for (Real w : mv.data()) total += w;
  if (!(total > 0)) {
    throw InvalidArgument("weighted_mean: mask weights sum to zero (segment below grid resolution)");
  }
  Tensor<Real> out({1, ov.cols()});
  as_mat(out).noalias() = (as_mat(mv) * as_mat(ov)) / total;
  return mask.tape().record(op, std::move(out), {mask.id(), rows.id()}, [total](Tape<Real>& t, std::size_t self) {
    const std::size_t im = t.input(self, 0), io = t.input(self, 1);
    const auto g = as_mat(t.grad(self));
    const auto y = as_mat(t.value(self));
    const auto o = as_mat(t.value(io));
    if (t.requires_grad(im)) {
      // d/dm_i = (o_i − y) · g / total
      auto dst = as_mat(t.grad_buffer(im));
      dst.noalias() += (g * o.transpose()) / total;
      dst.array() -= y.row(0).dot(g.row(0)) / total;
    }
    if (t.requires_grad(io)) {
      as_mat(t.grad_buffer(io)).noalias() += as_mat(t.value(im)).transpose() * g / total;
    }
  });
}

// ---------------------------------------------------------------------------

#define DCAV_INSTANTIATE(R)                                                        \
  template class Parameter<R>;                                                     \
  template class Var<R>;                                                           \
  template class Tape<R>;                                                          \
  template Var<R> matmul(const Var<R>&, const Var<R>&);                            \
  template Var<R> transpose(const Var<R>&);                                        \
  template Var<R> add(const Var<R>&, const Var<R>&);                               \
  template Var<R> sub(const Var<R>&, const Var<R>&);                               \
  template Var<R> mul(const Var<R>&, const Var<R>&);                               \
  template Var<R> add_row(const Var<R>&, const Var<R>&);                           \
  template Var<R> scale(const Var<R>&, R);                                         \
  template Var<R> sum(const Var<R>&);                                              \
  template Var<R> concat(std::span<const Var<R>>, std::size_t);                    \
  template Var<R> slice_cols(const Var<R>&, std::size_t, std::size_t);             \
  template Var<R> slice_rows(const Var<R>&, std::size_t, std::size_t);             \
  template Var<R> reshape(const Var<R>&, Shape);                                   \
  template Var<R> sigmoid(const Var<R>&);                                          \
  template Var<R> tanh(const Var<R>&);                                             \
  template Var<R> softmax(const Var<R>&, std::size_t);                             \
  template Var<R> mode_product(const Var<R>&, const Var<R>&, std::size_t);         \
  template Var<R> cross_entropy(const Var<R>&, std::span<const int>);              \
  template Var<R> l2(const Var<R>&, const Var<R>&);                                \
  template Var<R> gather_rows(const Var<R>&, std::span<const int>);                \
  template Var<R> clamp(const Var<R>&, const Tensor<R>&, const Tensor<R>&);        \
  template Var<R> soft_mask(const Var<R>&, std::size_t, R);                        \
  template Var<R> weighted_mean(const Var<R>&, const Var<R>&);

DCAV_INSTANTIATE(float)
DCAV_INSTANTIATE(double)

#undef DCAV_INSTANTIATE

}  // namespace dcav
