#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sanet/tensor.hpp"

namespace sanet {

// Handle into one tape's node list. Only meaningful together with the tape
// that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. Ops append nodes eagerly during the
// forward pass; backward() walks the node list once in reverse creation
// order, which is automatically a reverse topological order because an op
// can only consume already-created nodes. Gradients accumulate by += so fan-
// out sums contributions; a node never runs its backward closure before all
// its consumers have contributed.
//
// Nodes whose inputs all have requires_grad == false drop their closure at
// creation, so a pure inference pass stores no backward state.
template <class S>
class TapeT {
 public:
  // closure signature: (tape, id of the node the closure belongs to)
  using BackFn = std::function<void(TapeT&, int)>;

  Var leaf(TensorT<S> value, bool requires_grad = false) {
    return push(std::move(value), {}, nullptr, requires_grad, {});
  }

  // Parameter leaf; its gradient is retrievable by name after backward().
  Var param(std::string name, const TensorT<S>& value) {
    if (name.empty()) throw std::invalid_argument("parameter leaf needs a name");
    return push(value, {}, nullptr, true, std::move(name));
  }

  Var make(TensorT<S> value, std::vector<int> inputs, BackFn back) {
    bool req = false;
    for (int id : inputs) req = req || nodes_[(size_t)id].requires_grad;
    return push(std::move(value), std::move(inputs), req ? std::move(back) : nullptr, req, {});
  }

  bool requires_grad(Var v) const { return nodes_[(size_t)v.id].requires_grad; }
  const TensorT<S>& val(Var v) const { return nodes_[(size_t)v.id].value; }
  size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (!loss.valid() || loss.id >= (int)nodes_.size())
      throw std::invalid_argument("backward: loss is not a node of this tape");
    if (nodes_[(size_t)loss.id].value.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(nodes_[(size_t)loss.id].value.shape));
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (auto& n : nodes_) grads_.emplace_back(n.value.shape);
    grads_[(size_t)loss.id].data[0] = S(1);
    for (int id = loss.id; id >= 0; --id) {
      auto& n = nodes_[(size_t)id];
      if (n.requires_grad && n.back) n.back(*this, id);
    }
    has_grads_ = true;
  }

  const TensorT<S>& grad(Var v) const {
    if (!has_grads_) throw std::logic_error("grad: backward() has not run");
    return grads_[(size_t)v.id];
  }

  // scratch access for op closures
  TensorT<S>& grad_buf(int id) { return grads_[(size_t)id]; }

  // Gradients for every named parameter leaf. Parameters that are not on any
  // path to the loss keep their zero buffer.
  std::map<std::string, TensorT<S>> param_grads() const {
    if (!has_grads_) throw std::logic_error("param_grads: backward() has not run");
    std::map<std::string, TensorT<S>> out;
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (!nodes_[i].param_name.empty()) out.emplace(nodes_[i].param_name, grads_[i]);
    return out;
  }

 private:
  struct Node {
    TensorT<S> value;
    std::vector<int> inputs;
    BackFn back;
    bool requires_grad = false;
    std::string param_name;
  };

  Var push(TensorT<S> value, std::vector<int> inputs, BackFn back, bool req, std::string name) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.back = std::move(back);
    n.requires_grad = req;
    n.param_name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{(int)nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<TensorT<S>> grads_;
  bool has_grads_ = false;
};

using Tape = TapeT<float>;

}  // namespace sanet
