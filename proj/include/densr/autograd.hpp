#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "densr/tensor.hpp"

namespace densr {
namespace ag {

template <class S>
class Var;

/// Thread-local recording switch. While off, ops compute values but attach
/// no history, so backward cannot pass through them.
inline bool& grad_mode_flag() {
  thread_local bool recording = true;
  return recording;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
};

struct GradGuard {
  bool prev;
  explicit GradGuard(bool on) : prev(grad_mode_flag()) { grad_mode_flag() = on; }
  ~GradGuard() { grad_mode_flag() = prev; }
};

/// Ops whose backward is written with raw tensor math (not ops) call this in
/// their grad_fn; requesting a second-order graph through them is an error
/// rather than a silent zero.
inline void forbid_create_graph(const char* op) {
  if (grad_mode_flag())
    throw std::logic_error(std::string("op '") + op + "' does not support second-order gradients");
}

template <class S>
struct Node {
  using GradFn =
      std::function<std::vector<Var<S>>(const Var<S>& gout, const std::vector<char>& need)>;

  Tensor<S> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Var<S>> inputs;  // empty for leaves/constants
  GradFn grad_fn;              // null for leaves/constants
  Tensor<S> grad;              // leaf accumulation
  bool has_grad = false;
};

/// Handle to a node of the dynamically built computation graph. Copies share
/// the node.
template <class S>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<S> value, bool requires_grad) {
    Var v;
    v.n_ = std::make_shared<Node<S>>();
    v.n_->value = std::move(value);
    v.n_->requires_grad = requires_grad;
    return v;
  }
  static Var constant(Tensor<S> value) { return leaf(std::move(value), false); }
  static Var scalar(S x) { return constant(Tensor<S>::scalar(x)); }

  bool defined() const { return n_ != nullptr; }
  const Tensor<S>& value() const { return n_->value; }
  Tensor<S>& mutable_value() { return n_->value; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const char* op() const { return n_->op; }
  S item() const {
    if (n_->value.numel() != 1) throw std::logic_error("item() on non-scalar");
    return n_->value.data[0];
  }

  const Tensor<S>& grad() const {
    if (!n_->has_grad) throw std::logic_error("no gradient accumulated");
    return n_->grad;
  }
  bool has_grad() const { return n_ && n_->has_grad; }
  void zero_grad() {
    if (!n_) return;
    n_->has_grad = false;
    n_->grad = Tensor<S>();
  }

  Node<S>* node() const { return n_.get(); }

  friend Var make_op_var(Tensor<S> value, std::vector<Var> inputs, typename Node<S>::GradFn fn,
                         const char* name) {
    Var v;
    v.n_ = std::make_shared<Node<S>>();
    v.n_->value = std::move(value);
    bool rec = grad_mode_flag();
    bool rg = false;
    for (const auto& in : inputs)
      if (in.requires_grad()) rg = true;
    if (rec && rg) {
      v.n_->requires_grad = true;
      v.n_->op = name;
      v.n_->inputs = std::move(inputs);
      v.n_->grad_fn = std::move(fn);
    }
    return v;
  }

 private:
  std::shared_ptr<Node<S>> n_;
};

template <class S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs, typename Node<S>::GradFn fn,
               const char* name) {
  return make_op_var(std::move(value), std::move(inputs), std::move(fn), name);
}

namespace detail {

template <class S>
void toposort(Node<S>* root, std::vector<Node<S>*>& order) {
  // Iterative post-order DFS: inputs precede users in `order`.
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<S>* child = node->inputs[next++].node();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

template <class S>
Var<S> add_raw(const Var<S>& a, const Var<S>& b);  // defined in ops.hpp

/// Core reverse sweep. If `wrt` is empty, gradients are accumulated into the
/// .grad of every reachable leaf requiring grad. Otherwise the gradients of
/// exactly the `wrt` nodes are returned (leaf grads untouched) and the sweep
/// is pruned to the subgraph feeding them; with create_graph the returned
/// gradients carry history, enabling second-order differentiation.
template <class S>
std::vector<Var<S>> backward_sweep(const Var<S>& out, const std::vector<Var<S>>& wrt,
                                   bool create_graph, const Tensor<S>* seed = nullptr) {
  if (!out.requires_grad()) throw std::logic_error("backward on a non-differentiable value");

  std::vector<Node<S>*> order;
  detail::toposort(out.node(), order);

  // Relevance: a node matters iff it is (or feeds) a requested target.
  std::unordered_map<Node<S>*, char> relevant;
  const bool prune = !wrt.empty();
  if (prune) {
    std::unordered_set<Node<S>*> targets;
    for (const auto& w : wrt) targets.insert(w.node());
    for (Node<S>* n : order) {  // inputs precede users
      char r = targets.count(n) ? 1 : 0;
      if (!r)
        for (const auto& in : n->inputs)
          if (in.requires_grad() && relevant[in.node()]) {
            r = 1;
            break;
          }
      relevant[n] = r;
    }
    if (!relevant[out.node()])
      throw std::logic_error("requested gradient target is not reachable from output");
  }

  GradGuard mode(create_graph);

  std::unordered_map<Node<S>*, Var<S>> gradmap;
  {
    Tensor<S> ones = seed ? *seed : Tensor<S>::full(out.value().shape, S(1));
    if (seed && !(seed->shape == out.value().shape))
      throw std::invalid_argument("backward seed shape mismatch");
    gradmap[out.node()] = Var<S>::constant(std::move(ones));
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* node = *it;
    auto git = gradmap.find(node);
    if (git == gradmap.end()) continue;
    Var<S> g = git->second;
    if (!node->grad_fn) continue;  // leaf: handled below
    if (prune && !relevant[node]) continue;

    std::vector<char> need(node->inputs.size(), 0);
    bool any = false;
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      Node<S>* in = node->inputs[i].node();
      need[i] = in->requires_grad && (!prune || relevant[in]);
      any = any || need[i];
    }
    if (!any) continue;

    std::vector<Var<S>> gs = node->grad_fn(g, need);
    if (gs.size() != node->inputs.size())
      throw std::logic_error(std::string("grad_fn arity mismatch in op ") + node->op);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      if (!need[i] || !gs[i].defined()) continue;
      check_same_shape(gs[i].value(), node->inputs[i].value(), node->op);
      Node<S>* in = node->inputs[i].node();
      auto slot = gradmap.find(in);
      if (slot == gradmap.end())
        gradmap.emplace(in, gs[i]);
      else
        slot->second = add_raw(slot->second, gs[i]);
    }
  }

  if (!prune) {
    for (Node<S>* n : order) {
      if (n->grad_fn || !n->requires_grad) continue;
      auto git = gradmap.find(n);
      if (git == gradmap.end()) continue;
      const Tensor<S>& g = git->second.value();
      if (!n->has_grad) {
        n->grad = g;
        n->has_grad = true;
      } else {
        for (std::size_t i = 0; i < g.data.size(); ++i) n->grad.data[i] += g.data[i];
      }
    }
    return {};
  }

  std::vector<Var<S>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto git = gradmap.find(w.node());
    if (git != gradmap.end())
      result.push_back(git->second);
    else
      result.push_back(Var<S>::constant(Tensor<S>::zeros(w.value().shape)));
  }
  return result;
}

/// Accumulate d(out)/d(leaf) into every reachable leaf's .grad.
template <class S>
void backward(const Var<S>& out) {
  NoGradGuard ng;  // gradient computation itself is not recorded
  backward_sweep<S>(out, {}, /*create_graph=*/false);
}

/// Gradient of `out` w.r.t. selected nodes. With create_graph=true the result
/// is differentiable.
template <class S>
std::vector<Var<S>> grad(const Var<S>& out, const std::vector<Var<S>>& wrt, bool create_graph) {
  if (create_graph) return backward_sweep<S>(out, wrt, true);
  NoGradGuard ng;
  return backward_sweep<S>(out, wrt, false);
}

}  // namespace ag
}  // namespace densr
