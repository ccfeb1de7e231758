#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace eddpm {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles with an optional gradient slot.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;

  Tensor(Shape s, std::vector<double> d, bool needs_grad = false)
      : shape(std::move(s)), data(std::move(d)), requires_grad(needs_grad) {
    for (auto dim : shape)
      if (dim == 0) throw ShapeError("Tensor: zero-sized dimension in " + shape_str(shape));
    if (numel(shape) != data.size())
      throw ShapeError("Tensor: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " values");
    if (requires_grad) grad.assign(data.size(), 0.0);
  }

  static Tensor zeros(Shape s, bool needs_grad = false) {
    const auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0), needs_grad);
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  double item() const {
    if (data.size() != 1) throw ShapeError("Tensor::item on shape " + shape_str(shape));
    return data[0];
  }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  void zero_grad() {
    if (requires_grad) grad.assign(data.size(), 0.0);
  }
};

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  Relu,
  Silu,
  Tanh,
  Exp,
  Softmax,
  LogSoftmax,
  Sum,
  Mean,
  Square,
  Sqrt,
  Concat,
  Slice,
  Gather,
  Reshape,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Relu: return "relu";
    case Op::Silu: return "silu";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Gather: return "gather";
    case Op::Reshape: return "reshape";
  }
  return "?";
}

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of primitive applications. Nodes are appended in
/// evaluation order, so reverse iteration is a valid topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records `t` as an input. When `t.requires_grad`, backward accumulates into `t.grad`;
  /// `t` must outlive the tape.
  Var leaf(Tensor& t) {
    check_finite(Op::Leaf, t);
    if (t.requires_grad && t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
    Node n;
    n.op = Op::Leaf;
    n.value = Tensor(t.shape, t.data);
    n.bound = &t;
    n.needs_grad = t.requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor t) {
    t.requires_grad = false;
    t.grad.clear();
    check_finite(Op::Constant, t);
    Node n;
    n.op = Op::Constant;
    n.value = std::move(t);
    return push(std::move(n));
  }
  Var constant(Shape shape, std::vector<double> data) {
    return constant(Tensor(std::move(shape), std::move(data)));
  }

  const Tensor& value(Var v) const { return node(v).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Grads accumulate into bound leaf tensors.
  void backward(Var loss) {
    const Node& out = node(loss);
    if (!out.value.shape.empty())
      throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(out.value.shape));
    if (backward_done_) throw StateError("backward: already run on this tape; call reset() first");
    backward_done_ = true;

    std::vector<std::vector<double>> adj(loss.id() + 1);
    adj[loss.id()] = {1.0};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      if (adj[i].empty()) continue;
      const Node& n = nodes_[i];
      if (!n.needs_grad) continue;
      propagate(n, adj[i], adj);
      if (n.op == Op::Leaf && n.bound != nullptr && n.bound->requires_grad) {
        auto& g = n.bound->grad;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += adj[i][k];
      }
    }
    for (const auto& n : nodes_) {
      if (n.op == Op::Leaf && n.bound != nullptr && n.bound->requires_grad) {
        for (double g : n.bound->grad)
          if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient");
      }
    }
  }

  /// Allows another backward pass over the same recording.
  void reset() { backward_done_ = false; }

  // Primitive recorders; the free functions below are the public spelling.
  Var record_unary(Op op, Var a, double scalar = 0.0);
  Var record_binary(Op op, Var a, Var b);
  Var record_matmul(Var a, Var b);
  Var record_reduce(Op op, Var a);
  Var record_concat(Var a, Var b);
  Var record_slice(Var a, std::size_t begin, std::size_t end);
  Var record_gather(Var table, std::vector<std::size_t> rows);
  Var record_reshape(Var a, Shape shape);

 private:
  struct Node {
    Op op = Op::Constant;
    std::size_t in0 = 0, in1 = 0;
    std::size_t n_in = 0;
    Tensor value;
    Tensor* bound = nullptr;
    bool needs_grad = false;
    double scalar = 0.0;
    std::size_t a = 0, b = 0;
    std::vector<std::size_t> rows;
  };

  const Node& node(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size())
      throw StateError("Var does not belong to this tape");
    return nodes_[v.id()];
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  static void check_finite(Op op, const Tensor& t) {
    for (double v : t.data)
      if (!std::isfinite(v))
        throw NumericError(std::string(op_name(op)) + ": non-finite value in output of shape " +
                           shape_str(t.shape));
  }

  static std::vector<double>& grad_slot(std::vector<std::vector<double>>& adj, std::size_t id,
                                        std::size_t n) {
    if (adj[id].empty()) adj[id].assign(n, 0.0);
    return adj[id];
  }

  void propagate(const Node& n, const std::vector<double>& g, std::vector<std::vector<double>>& adj);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const {
  if (tape_ == nullptr) throw StateError("Var: unbound handle");
  return tape_->value(*this);
}

namespace detail {

inline Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw StateError(std::string(op) + ": operands recorded on different tapes");
  return *a.tape();
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

inline Var Tape::record_unary(Op op, Var a, double scalar) {
  const Tensor& x = value(a);
  Tensor y(x.shape, x.data);
  switch (op) {
    case Op::Scale:
      for (auto& v : y.data) v *= scalar;
      break;
    case Op::Relu:
      for (auto& v : y.data) v = v > 0 ? v : 0.0;
      break;
    case Op::Silu:
      for (auto& v : y.data) v = v * detail::sigmoid(v);
      break;
    case Op::Tanh:
      for (auto& v : y.data) v = std::tanh(v);
      break;
    case Op::Exp:
      for (auto& v : y.data) v = std::exp(v);
      break;
    case Op::Square:
      for (auto& v : y.data) v = v * v;
      break;
    case Op::Sqrt:
      for (auto& v : y.data) {
        if (v < 0) throw NumericError("sqrt: negative input");
        v = std::sqrt(v);
      }
      break;
    case Op::Softmax:
    case Op::LogSoftmax: {
      const std::size_t c = x.cols();
      for (std::size_t r = 0; r < x.size() / c; ++r) {
        double* row = y.data.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
        const double lz = std::log(z) + mx;
        for (std::size_t k = 0; k < c; ++k)
          row[k] = op == Op::Softmax ? std::exp(row[k] - lz) : row[k] - lz;
      }
      break;
    }
    default:
      throw StateError(std::string("record_unary: not a unary op: ") + op_name(op));
  }
  check_finite(op, y);
  Node n;
  n.op = op;
  n.in0 = a.id();
  n.n_in = 1;
  n.value = std::move(y);
  n.scalar = scalar;
  n.needs_grad = nodes_[a.id()].needs_grad;
  return push(std::move(n));
}

inline Var Tape::record_binary(Op op, Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& z = value(b);
  if (x.shape != z.shape)
    throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + shape_str(x.shape) + " vs " +
                     shape_str(z.shape));
  Tensor y(x.shape, x.data);
  for (std::size_t k = 0; k < y.size(); ++k) {
    switch (op) {
      case Op::Add: y.data[k] += z.data[k]; break;
      case Op::Sub: y.data[k] -= z.data[k]; break;
      case Op::Mul: y.data[k] *= z.data[k]; break;
      default: throw StateError(std::string("record_binary: not a binary op: ") + op_name(op));
    }
  }
  check_finite(op, y);
  Node n;
  n.op = op;
  n.in0 = a.id();
  n.in1 = b.id();
  n.n_in = 2;
  n.value = std::move(y);
  n.needs_grad = nodes_[a.id()].needs_grad || nodes_[b.id()].needs_grad;
  return push(std::move(n));
}

inline Var Tape::record_matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& w = value(b);
  if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[0])
    throw ShapeError("matmul: shape mismatch " + shape_str(x.shape) + " x " + shape_str(w.shape));
  const std::size_t m = x.shape[0], k = x.shape[1], p = w.shape[1];
  Tensor y = Tensor::zeros({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    double* yr = y.data.data() + i * p;
    for (std::size_t j = 0; j < k; ++j) {
      const double xv = x.data[i * k + j];
      if (xv == 0.0) continue;
      const double* wr = w.data.data() + j * p;
      for (std::size_t c = 0; c < p; ++c) yr[c] += xv * wr[c];
    }
  }
  check_finite(Op::MatMul, y);
  Node n;
  n.op = Op::MatMul;
  n.in0 = a.id();
  n.in1 = b.id();
  n.n_in = 2;
  n.value = std::move(y);
  n.needs_grad = nodes_[a.id()].needs_grad || nodes_[b.id()].needs_grad;
  return push(std::move(n));
}

inline Var Tape::record_reduce(Op op, Var a) {
  const Tensor& x = value(a);
  double s = 0.0;
  for (double v : x.data) s += v;
  if (op == Op::Mean) s /= static_cast<double>(x.size());
  Tensor y = Tensor::scalar(s);
  check_finite(op, y);
  Node n;
  n.op = op;
  n.in0 = a.id();
  n.n_in = 1;
  n.value = std::move(y);
  n.needs_grad = nodes_[a.id()].needs_grad;
  return push(std::move(n));
}

inline Var Tape::record_concat(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& z = value(b);
  if (x.rank() != 2 || z.rank() != 2 || x.shape[0] != z.shape[0])
    throw ShapeError("concat: shape mismatch " + shape_str(x.shape) + " and " + shape_str(z.shape));
  const std::size_t r = x.shape[0], ca = x.shape[1], cb = z.shape[1];
  Tensor y = Tensor::zeros({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.data.begin() + i * ca, ca, y.data.begin() + i * (ca + cb));
    std::copy_n(z.data.begin() + i * cb, cb, y.data.begin() + i * (ca + cb) + ca);
  }
  Node n;
  n.op = Op::Concat;
  n.in0 = a.id();
  n.in1 = b.id();
  n.n_in = 2;
  n.value = std::move(y);
  n.needs_grad = nodes_[a.id()].needs_grad || nodes_[b.id()].needs_grad;
  return push(std::move(n));
}

inline Var Tape::record_slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = value(a);
  if (x.rank() != 2 || begin >= end || end > x.shape[1])
    throw ShapeError("slice: columns [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + shape_str(x.shape));
  const std::size_t r = x.shape[0], c = x.shape[1], w = end - begin;
  Tensor y = Tensor::zeros({r, w});
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.data.begin() + i * c + begin, w, y.data.begin() + i * w);
  Node n;
  n.op = Op::Slice;
  n.in0 = a.id();
  n.n_in = 1;
  n.a = begin;
  n.b = end;
  n.value = std::move(y);
  n.needs_grad = nodes_[a.id()].needs_grad;
  return push(std::move(n));
}

inline Var Tape::record_gather(Var table, std::vector<std::size_t> rows) {
  const Tensor& t = value(table);
  if (t.rank() != 2 || rows.empty())
    throw ShapeError("gather: table must be 2-D with a non-empty index list, got " +
                     shape_str(t.shape));
  const std::size_t c = t.shape[1];
  Tensor y = Tensor::zeros({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.shape[0])
      throw ShapeError("gather: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(t.shape));
    std::copy_n(t.data.begin() + rows[i] * c, c, y.data.begin() + i * c);
  }
  Node n;
  n.op = Op::Gather;
  n.in0 = table.id();
  n.n_in = 1;
  n.rows = std::move(rows);
  n.value = std::move(y);
  n.needs_grad = nodes_[table.id()].needs_grad;
  return push(std::move(n));
}

inline Var Tape::record_reshape(Var a, Shape shape) {
  const Tensor& x = value(a);
  if (shape.empty() || numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(shape));
  Node n;
  n.op = Op::Reshape;
  n.in0 = a.id();
  n.n_in = 1;
  n.value = Tensor(std::move(shape), x.data);
  n.needs_grad = nodes_[a.id()].needs_grad;
  return push(std::move(n));
}

inline void Tape::propagate(const Node& n, const std::vector<double>& g,
                            std::vector<std::vector<double>>& adj) {
  const auto wants = [&](std::size_t id) { return nodes_[id].needs_grad; };
  const Tensor& y = n.value;
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Tensor& x0 = nodes_[n.in0].value;
      const Tensor& x1 = nodes_[n.in1].value;
      if (wants(n.in0)) {
        auto& d = grad_slot(adj, n.in0, g.size());
        for (std::size_t k = 0; k < g.size(); ++k) d[k] += n.op == Op::Mul ? g[k] * x1.data[k] : g[k];
      }
      if (wants(n.in1)) {
        auto& d = grad_slot(adj, n.in1, g.size());
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (n.op == Op::Add) d[k] += g[k];
          else if (n.op == Op::Sub) d[k] -= g[k];
          else d[k] += g[k] * x0.data[k];
        }
      }
      return;
    }
    case Op::MatMul: {
      const Tensor& x = nodes_[n.in0].value;
      const Tensor& w = nodes_[n.in1].value;
      const std::size_t m = x.shape[0], k = x.shape[1], p = w.shape[1];
      if (wants(n.in0)) {
        auto& dx = grad_slot(adj, n.in0, x.size());
        std::vector<double> wt(k * p);
        for (std::size_t j = 0; j < k; ++j)
          for (std::size_t c = 0; c < p; ++c) wt[c * k + j] = w.data[j * p + c];
        for (std::size_t i = 0; i < m; ++i) {
          double* dr = dx.data() + i * k;
          for (std::size_t c = 0; c < p; ++c) {
            const double gv = g[i * p + c];
            if (gv == 0.0) continue;
            const double* wr = wt.data() + c * k;
            for (std::size_t j = 0; j < k; ++j) dr[j] += gv * wr[j];
          }
        }
      }
      if (wants(n.in1)) {
        auto& dw = grad_slot(adj, n.in1, w.size());
        for (std::size_t i = 0; i < m; ++i) {
          const double* gr = g.data() + i * p;
          for (std::size_t j = 0; j < k; ++j) {
            const double xv = x.data[i * k + j];
            if (xv == 0.0) continue;
            double* dr = dw.data() + j * p;
            for (std::size_t c = 0; c < p; ++c) dr[c] += xv * gr[c];
          }
        }
      }
      return;
    }
    case Op::Scale:
    case Op::Relu:
    case Op::Silu:
    case Op::Tanh:
    case Op::Exp:
    case Op::Square:
    case Op::Sqrt: {
      const Tensor& x = nodes_[n.in0].value;
      auto& d = grad_slot(adj, n.in0, g.size());
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double xv = x.data[k];
        double dydx = 0.0;
        switch (n.op) {
          case Op::Scale: dydx = n.scalar; break;
          case Op::Relu: dydx = xv > 0 ? 1.0 : 0.0; break;
          case Op::Silu: {
            const double s = detail::sigmoid(xv);
            dydx = s * (1.0 + xv * (1.0 - s));
            break;
          }
          case Op::Tanh: dydx = 1.0 - y.data[k] * y.data[k]; break;
          case Op::Exp: dydx = y.data[k]; break;
          case Op::Square: dydx = 2.0 * xv; break;
          case Op::Sqrt: dydx = 0.5 / y.data[k]; break;
          default: break;
        }
        d[k] += g[k] * dydx;
      }
      return;
    }
    case Op::Softmax:
    case Op::LogSoftmax: {
      auto& d = grad_slot(adj, n.in0, g.size());
      const std::size_t c = y.cols();
      for (std::size_t r = 0; r < y.size() / c; ++r) {
        const double* yr = y.data.data() + r * c;
        const double* gr = g.data() + r * c;
        double* dr = d.data() + r * c;
        if (n.op == Op::Softmax) {
          double dot = 0.0;
          for (std::size_t k = 0; k < c; ++k) dot += gr[k] * yr[k];
          for (std::size_t k = 0; k < c; ++k) dr[k] += yr[k] * (gr[k] - dot);
        } else {
          double gs = 0.0;
          for (std::size_t k = 0; k < c; ++k) gs += gr[k];
          for (std::size_t k = 0; k < c; ++k) dr[k] += gr[k] - std::exp(yr[k]) * gs;
        }
      }
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      const std::size_t sz = nodes_[n.in0].value.size();
      auto& d = grad_slot(adj, n.in0, sz);
      const double v = n.op == Op::Mean ? g[0] / static_cast<double>(sz) : g[0];
      for (auto& e : d) e += v;
      return;
    }
    case Op::Concat: {
      const std::size_t ca = nodes_[n.in0].value.shape[1];
      const std::size_t cb = nodes_[n.in1].value.shape[1];
      const std::size_t r = y.shape[0];
      if (wants(n.in0)) {
        auto& d = grad_slot(adj, n.in0, r * ca);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t k = 0; k < ca; ++k) d[i * ca + k] += g[i * (ca + cb) + k];
      }
      if (wants(n.in1)) {
        auto& d = grad_slot(adj, n.in1, r * cb);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t k = 0; k < cb; ++k) d[i * cb + k] += g[i * (ca + cb) + ca + k];
      }
      return;
    }
    case Op::Slice: {
      const Tensor& x = nodes_[n.in0].value;
      const std::size_t c = x.shape[1], w = n.b - n.a;
      auto& d = grad_slot(adj, n.in0, x.size());
      for (std::size_t i = 0; i < x.shape[0]; ++i)
        for (std::size_t k = 0; k < w; ++k) d[i * c + n.a + k] += g[i * w + k];
      return;
    }
    case Op::Gather: {
      const Tensor& t = nodes_[n.in0].value;
      const std::size_t c = t.shape[1];
      auto& d = grad_slot(adj, n.in0, t.size());
      for (std::size_t i = 0; i < n.rows.size(); ++i)
        for (std::size_t k = 0; k < c; ++k) d[n.rows[i] * c + k] += g[i * c + k];
      return;
    }
    case Op::Reshape: {
      auto& d = grad_slot(adj, n.in0, g.size());
      for (std::size_t k = 0; k < g.size(); ++k) d[k] += g[k];
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Primitive spellings. Elementwise ops require identical shapes; the only
// broadcast is multiplication by a scalar constant (`scale`).

inline Var matmul(Var a, Var b) { return detail::same_tape(a, b, "matmul").record_matmul(a, b); }
inline Var operator+(Var a, Var b) { return detail::same_tape(a, b, "add").record_binary(Op::Add, a, b); }
inline Var operator-(Var a, Var b) { return detail::same_tape(a, b, "sub").record_binary(Op::Sub, a, b); }
inline Var operator*(Var a, Var b) { return detail::same_tape(a, b, "mul").record_binary(Op::Mul, a, b); }
inline Var scale(Var a, double c) { return a.tape()->record_unary(Op::Scale, a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var relu(Var a) { return a.tape()->record_unary(Op::Relu, a); }
inline Var silu(Var a) { return a.tape()->record_unary(Op::Silu, a); }
inline Var tanh(Var a) { return a.tape()->record_unary(Op::Tanh, a); }
inline Var exp(Var a) { return a.tape()->record_unary(Op::Exp, a); }
inline Var square(Var a) { return a.tape()->record_unary(Op::Square, a); }
inline Var sqrt(Var a) { return a.tape()->record_unary(Op::Sqrt, a); }
inline Var softmax(Var a) { return a.tape()->record_unary(Op::Softmax, a); }
inline Var log_softmax(Var a) { return a.tape()->record_unary(Op::LogSoftmax, a); }
inline Var sum(Var a) { return a.tape()->record_reduce(Op::Sum, a); }
inline Var mean(Var a) { return a.tape()->record_reduce(Op::Mean, a); }
inline Var concat(Var a, Var b) { return detail::same_tape(a, b, "concat").record_concat(a, b); }
inline Var slice(Var a, std::size_t begin, std::size_t end) {
  return a.tape()->record_slice(a, begin, end);
}
/// Embedding lookup: row i of the result is row `rows[i]` of `table`.
inline Var gather(Var table, std::vector<std::size_t> rows) {
  return table.tape()->record_gather(table, std::move(rows));
}
/// Same data, new shape (row-major order is kept).
inline Var reshape(Var a, Shape shape) { return a.tape()->record_reshape(a, std::move(shape)); }

// ---------------------------------------------------------------------------
// Gradient oracle.

/// Evaluates f at x; when `grad` is non-null it also receives the analytic gradient.
using ValueAndGrad = std::function<double(std::span<const double> x, std::vector<double>* grad)>;

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
inline double finite_diff_check(const ValueAndGrad& f, std::span<const double> point, double step) {
  if (!(step > 0)) throw RangeError("finite_diff_check: step must be positive");
  std::vector<double> analytic;
  f(point, &analytic);
  if (analytic.size() != point.size())
    throw ShapeError("finite_diff_check: gradient length " + std::to_string(analytic.size()) +
                     " != point length " + std::to_string(point.size()));
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x, nullptr);
    x[i] = orig - step;
    const double down = f(x, nullptr);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_check: non-finite value at perturbed coordinate " +
                         std::to_string(i));
    const double central = (up - down) / (2.0 * step);
    const double err =
        std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

/// Adapts a tape-built scalar function of a flat vector into a ValueAndGrad.
/// `build` receives the input as a leaf of shape `shape`.
inline ValueAndGrad tape_function(Shape shape, std::function<Var(Tape&, Var)> build) {
  return [shape = std::move(shape), build = std::move(build)](std::span<const double> x,
                                                              std::vector<double>* grad) {
    Tensor input(shape, std::vector<double>(x.begin(), x.end()), grad != nullptr);
    Tape tape;
    Var out = build(tape, tape.leaf(input));
    if (grad != nullptr) {
      tape.backward(out);
      *grad = input.grad;
    }
    return out.item();
  };
}

}  // namespace eddpm
