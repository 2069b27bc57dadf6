#include "pimms/tape.hpp"

#include <stdexcept>

namespace pimms::ad {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an empty Var");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  if (consumed_) throw std::logic_error("recording on a tape that already ran backward; reset() it first");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& t) {
  t.check_finite("parameter");
  Node n;
  n.value = Tensor(t.shape(), t.storage());
  n.requires_grad = t.requires_grad();
  n.bound = &t;
  return push(std::move(n));
}

Var Tape::input(Tensor t, bool requires_grad) {
  t.check_finite("input tensor");
  Node n;
  n.value = std::move(t);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, Backward fn) {
  bool any = false;
  for (const auto& v : inputs) {
    if (&v.tape() != this) throw std::logic_error(std::string(op) + ": inputs recorded on a different tape");
    any = any || nodes_[v.id()].requires_grad;
  }
  if (!value.all_finite()) throw NonFiniteError("non-finite value produced by " + std::string(op));
  Node n;
  n.value = std::move(value);
  n.requires_grad = any;
  if (any) n.backward = std::move(fn);
  return push(std::move(n));
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::logic_error("backward: loss belongs to a different tape");
  if (consumed_) throw std::logic_error("backward: stale tape (backward already ran for this forward pass)");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_string(loss.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.bound && n.bound->requires_grad() && !n.grad.empty()) {
      auto g = n.bound->ensure_grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  branches_.clear();
  consumed_ = false;
}

}  // namespace pimms::ad
