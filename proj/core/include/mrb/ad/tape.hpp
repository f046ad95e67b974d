#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "mrb/ad/parameters.hpp"
#include "mrb/ad/tensor.hpp"

namespace mrb::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  bool requires_grad() const;

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Gradients;

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the trace is acyclic by
/// construction and reverse insertion order is a valid topological order.
class Tape {
 public:
  /// Receives the gradient of the output w.r.t. this node's value.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf bound to a parameter; repeated calls with the same (set, id) return the same node.
  Var param(const ParameterSet& set, ParamId id);

  /// Records an operation result. `backward` runs only if some input requires grad.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  Gradients backward(Var output);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adds `g` into the pending gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Tensor& g);
  /// Mutable gradient buffer for node `id`, zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable addresses: values stay valid while the tape grows
  std::map<std::pair<const ParameterSet*, ParamId>, std::size_t> param_nodes_;
  std::vector<std::size_t> variable_leaves_;
};

/// Result of a backward pass.
class Gradients {
 public:
  /// Gradient w.r.t. a requires-grad leaf; zero when the leaf did not participate.
  const Tensor& wrt(Var leaf) const;

  /// One tensor per parameter of `set`, in id order; zeros for parameters
  /// that were never placed on the tape or did not reach the output.
  std::vector<Tensor> for_set(const ParameterSet& set) const;

 private:
  friend class Tape;
  std::map<std::size_t, Tensor> leaves_;
  std::map<std::pair<const ParameterSet*, ParamId>, std::size_t> param_nodes_;
};

}  // namespace mrb::ad
