#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spherehead/errors.hpp"
#include "spherehead/nd/tensor.hpp"

namespace spherehead::nd {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const {
    if (!tape_) throw StateError("use of an unbound Var");
    return *tape_;
  }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of primitive operations.
///
/// Nodes are appended in creation order, so every node's inputs precede it
/// and replaying the list backwards is a valid topological traversal.
/// Parameters enter through watch(); their gradients accumulate into the
/// bound Tensor's grad buffer when backward() runs. Everything else is owned
/// by the tape and dies with it.
class Tape {
 public:
  /// Receives the output adjoint and one writable adjoint span per input.
  /// Spans of inputs that do not need a gradient are empty.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

  struct NodeInfo {
    std::string_view op;
    std::span<const std::size_t> inputs;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to an external tensor (typically a model parameter).
  Var watch(Tensor& param) {
    Node node;
    node.op = "param";
    node.bound = &param;
    node.needs_grad = param.requires_grad();
    return push(std::move(node));
  }

  /// Leaf without gradient.
  Var constant(Tensor value) {
    Node node;
    node.op = "const";
    node.owned = std::move(value);
    return push(std::move(node));
  }

  /// Leaf owned by the tape whose gradient is readable through grad().
  Var variable(Tensor value) {
    Node node;
    node.op = "var";
    node.owned = std::move(value);
    node.needs_grad = true;
    return push(std::move(node));
  }

  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node node;
    node.op = std::string(op);
    node.owned = std::move(value);
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw StateError("operation '" + node.op + "' mixes tapes");
      node.inputs.push_back(in.id_);
      node.needs_grad = node.needs_grad || nodes_[in.id_].needs_grad;
    }
    node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.bound ? *n.bound : n.owned;
  }

  bool needs_grad(const Var& v) const { return nodes_.at(v.id_).needs_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

  NodeInfo info(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return {n.op, n.inputs};
  }

  /// Populates d loss / d node for every node that needs a gradient and
  /// accumulates leaf gradients into watched tensors. Adjoints from a
  /// previous call are discarded first.
  void backward(const Var& loss) {
    if (loss.tape_ != this) throw StateError("backward on a Var from another tape");
    const Tensor& out = value(loss.id_);
    if (out.size() != 1) {
      throw DimensionError("backward needs a scalar loss, got shape " + to_string(out.shape()));
    }
    adjoints_.assign(nodes_.size(), {});
    if (!nodes_[loss.id_].needs_grad) return;
    adjoints_[loss.id_].assign(1, 1.0);

    std::vector<std::span<double>> grad_in;
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.needs_grad || adjoints_[id].empty()) continue;
      if (node.backward) {
        grad_in.clear();
        for (std::size_t in : node.inputs) {
          if (!nodes_[in].needs_grad) {
            grad_in.emplace_back();
            continue;
          }
          if (adjoints_[in].empty()) adjoints_[in].assign(value(in).size(), 0.0);
          grad_in.emplace_back(adjoints_[in]);
        }
        node.backward(adjoints_[id], grad_in);
      } else if (node.bound) {
        node.bound->accumulate_grad(adjoints_[id]);
      }
    }
  }

  /// Adjoint of `v` from the last backward() call, if `v` was reached.
  std::optional<Tensor> grad(const Var& v) const {
    if (v.id_ >= adjoints_.size() || adjoints_[v.id_].empty()) return std::nullopt;
    return Tensor(value(v.id_).shape(), adjoints_[v.id_]);
  }

 private:
  struct Node {
    std::string op;
    Tensor owned;
    Tensor* bound = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  // deque: values stay addressable while new nodes are recorded.
  std::deque<Node> nodes_;
  std::vector<std::vector<double>> adjoints_;
};

inline const Tensor& Var::value() const { return tape().value(id_); }

/// Copies the value out of the tape; the copy carries no history.
inline Tensor detach(const Var& v) { return Tensor(v.shape(), v.value().values()); }

}  // namespace spherehead::nd
