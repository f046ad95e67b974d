#include "mrb/ad/tape.hpp"

#include "mrb/error.hpp"

namespace mrb::ad {

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, {}});
  variable_leaves_.push_back(nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParameterSet& set, ParamId id) {
  const auto key = std::make_pair(&set, id);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{set.value(id), {}, true, {}, {}});
  const std::size_t node = nodes_.size() - 1;
  param_nodes_.emplace(key, node);
  variable_leaves_.push_back(node);
  return Var(this, node);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (std::size_t in : inputs) needs = needs || nodes_.at(in).requires_grad;
  Node node{std::move(value), {}, needs, std::move(inputs), {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), std::vector<double>(n.value.size(), 0.0));
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw ShapeError("gradient " + g.shape_string() + " does not match node " +
                     n.value.shape_string());
  }
  if (n.grad.empty()) {
    n.grad = Tensor(n.value.shape(), std::vector<double>(g.data().begin(), g.data().end()));
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Gradients Tape::backward(Var output) {
  if (output.tape() != this) throw Error("backward called with a Var from another tape");
  const Tensor& out = nodes_.at(output.id()).value;
  if (out.size() != 1) {
    throw ShapeError("backward requires a scalar output, got " + out.shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();

  if (nodes_[output.id()].requires_grad) {
    nodes_[output.id()].grad = Tensor(out.shape(), {1.0});
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      // Move the gradient out so the callback may freely grow other buffers.
      Tensor g = std::move(n.grad);
      n.backward(*this, g);
      nodes_[i].grad = std::move(g);
    }
  }

  Gradients result;
  for (std::size_t leaf : variable_leaves_) {
    const Node& n = nodes_[leaf];
    result.leaves_.emplace(leaf, n.grad.empty() ? Tensor(n.value.shape(),
                                                         std::vector<double>(n.value.size(), 0.0))
                                                : n.grad);
  }
  result.param_nodes_ = param_nodes_;
  return result;
}

const Tensor& Gradients::wrt(Var leaf) const {
  auto it = leaves_.find(leaf.id());
  if (it == leaves_.end()) throw Error("requested gradient of a node that is not a leaf");
  return it->second;
}

std::vector<Tensor> Gradients::for_set(const ParameterSet& set) const {
  std::vector<Tensor> out;
  out.reserve(set.size());
  for (ParamId id = 0; id < set.size(); ++id) {
    auto it = param_nodes_.find({&set, id});
    if (it != param_nodes_.end()) {
      out.push_back(leaves_.at(it->second));
    } else {
      const Tensor& v = set.value(id);
      out.emplace_back(v.shape(), std::vector<double>(v.size(), 0.0));
    }
  }
  return out;
}

}  // namespace mrb::ad
