#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "geoecon/tensor.hpp"

namespace geoecon {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive applications in execution order; backward() replays them
// in reverse to accumulate gradients of a scalar into every node that
// requires one. A tape built with record=false keeps values only, which is
// the inference path.
class Tape {
 public:
  // Receives the output gradient and value; accumulates into inputs via
  // grad_slot().
  using Backward =
      std::function<void(const Tensor& out_grad, const Tensor& out_value, Tape& tape)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  // Leaf that reads `external` in place (no copy). The tensor must outlive
  // the tape and must not change while the tape is in use.
  Var param(const Tensor& external, bool requires_grad = true);

  Var push(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer for node id, allocated on first use; nullptr when the
  // node does not require a gradient.
  Tensor* grad_slot(std::size_t id);

  // Throws ContractError when loss is not a single-element tensor.
  void backward(const Var& loss);

  // Gradient accumulated by the last backward(); zeros if none reached it.
  Tensor grad(const Var& v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    Tensor grad;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
};

}  // namespace geoecon
