#include "geoecon/tape.hpp"

#include "geoecon/error.hpp"

namespace geoecon {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, false, {}, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), nullptr, requires_grad && record_, {}, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::param(const Tensor& external, bool requires_grad) {
  nodes_.push_back(Node{{}, &external, requires_grad && record_, {}, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const auto& in : inputs) {
      if (in.tape() != this) throw ContractError("Var from a different tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), nullptr, needs, {}, needs ? std::move(backward) : Backward{}});
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

Tensor* Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
  return &n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("loss recorded on a different tape");
  if (loss.value().size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(loss.value().shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  Tensor* seed = grad_slot(loss.id());
  if (!seed) return;
  seed->fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(n.grad, value(i), *this);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor(value(v.id()).shape(), 0.0);
  return n.grad;
}

}  // namespace geoecon
