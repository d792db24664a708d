#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "sgac/tensor.hpp"

namespace sgac {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Index size() const { return value().size(); }
  /// Value of a single-element tensor.
  double item() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-use reverse-mode recording.
///
/// Every op appends a node holding its output value and, if any input
/// requires a gradient, a closure that propagates the output gradient to
/// those inputs. Nodes are appended in evaluation order, so a reverse sweep
/// over the node list is a valid topological order.
class Tape {
 public:
  using Array = Eigen::ArrayXd;
  using Backward = std::function<void(Tape&, const Array& out_grad)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Appends an op output. `backward` is dropped when no input needs a gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward);

  /// Accumulates d(loss)/d(node) for every node reachable from `loss`.
  void backward(Var loss);

  /// Gradient of the last backward pass; zeros for nodes it did not reach.
  Array grad(Var v) const;

  const Tensor& value(Var v) const { return nodes_[v.id_].value; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of `v` (no-op if `v` needs no gradient).
  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

 private:
  struct Node {
    Tensor value;
    Array grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var make(Tensor value, bool requires_grad, Backward backward);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Elementwise binary ops on equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double k, Var a) { return scale(a, k); }
inline Var operator*(Var a, double k) { return scale(a, k); }
inline Var operator+(Var a, double k) { return add_scalar(a, k); }
inline Var operator+(double k, Var a) { return add_scalar(a, k); }
inline Var operator-(Var a, double k) { return add_scalar(a, -k); }
inline Var operator-(double k, Var a) { return add_scalar(neg(a), k); }

/// [m,k] x [k,n] -> [m,n].
Var matmul(Var a, Var b);

/// x: [Cin,H,W], weight: [Cout,Cin,k,k] -> [Cout,Ho,Wo] with Ho = (H+2p-k)/s+1.
Var conv2d(Var x, Var weight, Index stride, Index padding);
/// x: [Cin,H,W], weight: [Cin,Cout,k,k] -> [Cout,(H-1)s-2p+k,(W-1)s-2p+k].
/// Adjoint of conv2d with the same geometry.
Var conv_transpose2d(Var x, Var weight, Index stride, Index padding);

/// Per-channel broadcast along the leading axis: x is [C,...], p is [C].
Var channel_add(Var x, Var p);
Var channel_mul(Var x, Var p);

Var leaky_relu(Var a, double slope = 0.01);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// Requires every input in (-1, 1).
Var atanh(Var a);
Var abs(Var a);
Var square(Var a);
/// Standard normal CDF.
Var normal_cdf(Var a);
/// Gradient passes through inside [lo, hi] and is zero outside.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);

Var reshape(Var a, Shape shape);
/// Channels [begin, begin+count) of a [C,...] tensor.
Var slice_channels(Var a, Index begin, Index count);

}  // namespace sgac
