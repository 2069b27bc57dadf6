#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pimms/tensor.hpp"

namespace pimms::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive and has not been reset.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so recording
/// order is already a topological order.
///
/// A tape supports exactly one backward pass; call reset() before recording
/// a new forward pass.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to an external tensor. When `t.requires_grad()` the gradient
  /// is accumulated into `t.grad()` at the end of backward().
  Var param(Tensor& t);
  /// Owned leaf. Its gradient stays on the tape (see grad()).
  Var input(Tensor t, bool requires_grad = false);
  Var constant(Tensor t) { return input(std::move(t), false); }

  /// Appends an operation result. `fn` is skipped when no input needs a
  /// gradient. The value is checked for NaN/Inf.
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, Backward fn);
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id()); }
  /// Gradient buffer for node `id`, allocated (zeroed) on first use.
  std::span<double> grad_buffer(std::size_t id);
  /// Gradient after backward(); empty span when the node was unreachable.
  std::span<const double> grad(Var v) const { return nodes_[v.id()].grad; }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void reset();

  // Branch tracking. Piecewise ops (relu, maxpool, clamped log) push a hash of
  // their branch decisions so gradient checks can discard finite-difference
  // probes that cross a kink.
  void set_branch_tracking(bool on) { track_branches_ = on; }
  bool tracking_branches() const { return track_branches_; }
  void note_branch(std::uint64_t code) { branches_.push_back(code); }
  const std::vector<std::uint64_t>& branches() const { return branches_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* bound = nullptr;
    Backward backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  bool consumed_ = false;
  bool track_branches_ = false;
  std::vector<std::uint64_t> branches_;
};

/// Incremental FNV-1a hash used for branch signatures.
class BranchHash {
 public:
  void add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xffu;
      h_ *= 1099511628211ull;
    }
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ull;
};

}  // namespace pimms::ad
