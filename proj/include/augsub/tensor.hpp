#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "augsub/errors.hpp"
#include "augsub/rng.hpp"

// Reverse-mode autodiff over dense row-major tensors. The tape is explicit
// (Graph), rebuilt every step and torn down after; there is no global state.
// Parameters are leaf tensors whose grads accumulate across backward calls;
// non-leaf grads are scratch owned by the tape and reset per backward pass.

namespace augsub {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) {
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    r += (i ? "x" : "") + std::to_string(s[i]);
  }
  return r + "]";
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad;  // sized lazily on first gradient write
  bool requires_grad = false;
  bool leaf = true;
  bool grad_live = false;        // grad contains nonzero data
  const void* producer = nullptr;  // graph that recorded the producing op

  void ensure_grad() {
    if (grad.size() != val.size()) {
      grad.assign(val.size(), T(0));
    }
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->val.assign(static_cast<std::size_t>(shape_numel(n->shape)), T(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> data,
                     bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ContractError("tensor data size " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->val = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (T& x : t.val()) {
      x = v;
    }
    return t;
  }

  static Tensor normal(Shape shape, Rng& rng, T stddev,
                       bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (T& x : t.val()) {
      x = static_cast<T>(rng.next_normal()) * stddev;
    }
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(node_->val.size());
  }

  std::vector<T>& val() { return node_->val; }
  const std::vector<T>& val() const { return node_->val; }
  // Grad access sizes the buffer; prefer grad_live() to test emptiness.
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool grad_live() const { return node_->grad_live; }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  T scalar() const {
    if (numel() != 1) {
      throw ContractError("scalar() on tensor of shape " +
                          shape_str(node_->shape));
    }
    return node_->val[0];
  }

  // Value copy cut loose from the graph. The one sanctioned way to feed a
  // branch output somewhere as data: the result is a constant leaf.
  Tensor detach() const {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = node_->shape;
    n->val = node_->val;
    return Tensor(std::move(n));
  }

  TensorNode<T>* operator->() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Accumulates src into dst's grad and marks it live.
template <typename T>
inline void accum_grad(const Tensor<T>& dst, const T* src) {
  dst->ensure_grad();
  T* g = dst->grad.data();
  const std::int64_t n = static_cast<std::int64_t>(dst->grad.size());
  for (std::int64_t i = 0; i < n; ++i) {
    g[i] += src[i];
  }
  dst->grad_live = true;
}

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Recording toggle: off means ops compute forward values only (eval mode).
  bool recording = true;

  // An op calls this once after computing its forward values. backward_fn
  // must read output grads and accumulate into input grads, honoring each
  // input's requires_grad flag.
  void record(std::vector<Tensor<T>> outputs,
              std::function<void()> backward_fn) {
    tape_.push_back(Entry{std::move(outputs), std::move(backward_fn)});
  }

  std::size_t size() const { return tape_.size(); }

  // Reverse replay from a scalar loss. Repeated calls on the same tape are
  // additive for leaf (parameter) grads: non-leaf grads are scratch and get
  // reset here, leaf grads only ever accumulate.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward expects a scalar loss; got shape " +
                          shape_str(loss->shape));
    }
    if (!loss.is_leaf() && loss->producer != this) {
      throw ContractError("backward called on a loss from a different graph");
    }
    if (ran_backward_) {
      for (Entry& e : tape_) {
        for (Tensor<T>& out : e.outputs) {
          if (!out.is_leaf() && out->grad_live) {
            std::fill(out->grad.begin(), out->grad.end(), T(0));
            out->grad_live = false;
          }
        }
      }
    }
    ran_backward_ = true;
    loss->ensure_grad();
    loss->grad[0] += T(1);
    loss->grad_live = true;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      bool live = false;
      for (const Tensor<T>& out : it->outputs) {
        live = live || out->grad_live;
      }
      if (live) {
        it->backward_fn();
      }
    }
  }

 private:
  struct Entry {
    std::vector<Tensor<T>> outputs;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> tape_;
  bool ran_backward_ = false;
};

// Result-tensor factory for ops: non-leaf, tied to g, grad-bearing only if
// some input needs grads and g is recording.
template <typename T>
inline Tensor<T> op_result(Graph<T>& g, Shape shape, bool any_input_rg) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  t->leaf = false;
  t->producer = &g;
  t->requires_grad = g.recording && any_input_rg;
  return t;
}

template <typename T>
inline void zero_grad(std::vector<Tensor<T>>& params) {
  for (Tensor<T>& p : params) {
    if (!p->grad.empty()) {
      std::fill(p->grad.begin(), p->grad.end(), T(0));
    }
    p->grad_live = false;
  }
}

}  // namespace augsub
