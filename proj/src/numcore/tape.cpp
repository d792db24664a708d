#include "sgac/tape.hpp"

#include <stdexcept>
#include <string>

namespace sgac {

const Tensor& Var::value() const { return tape_->value(*this); }

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("item() on tensor of shape " + v.shape().str());
  return v[0];
}

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::make(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Array(), requires_grad, std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant");
  return make(std::move(value), false, nullptr);
}

Var Tape::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite variable");
  return make(std::move(value), true, nullptr);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
  bool needs_grad = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw std::logic_error(std::string(op) + ": input from another tape");
    needs_grad = needs_grad || nodes_[in.id_].requires_grad;
  }
  return make(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
}

void Tape::backward(Var loss) {
  if (consumed_) throw std::logic_error("tape already consumed by a backward pass");
  if (loss.tape_ != this) throw std::logic_error("loss recorded on another tape");
  if (value(loss).size() != 1) throw ShapeError("backward() needs a scalar loss, got " + value(loss).shape().str());
  consumed_ = true;
  if (!nodes_[loss.id_].requires_grad) return;

  nodes_[loss.id_].grad = Array::Ones(1);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
    if (!n.grad.isFinite().all()) throw NumericError("non-finite gradient");
  }
}

Tape::Array Tape::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.size() == 0) return Array::Zero(n.value.size());
  return n.grad;
}

}  // namespace sgac
