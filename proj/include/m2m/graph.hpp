#pragma once

#include <functional>
#include <vector>

#include "m2m/tensor.hpp"

namespace m2m {

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const { return graph->value(*this); }
  Tensor<Scalar>& grad() const { return graph->grad(*this); }
  bool requires_grad() const { return graph->requires_grad(*this); }
  const typename Tensor<Scalar>::Shape& shape() const { return value().shape(); }
};

/// Tape of operation records for reverse-mode differentiation. Nodes are
/// appended in evaluation order, so creation order is a topological order
/// and backward() just walks the tape in reverse.
template <typename Scalar>
class Graph {
 public:
  using Backward = std::function<void(Graph&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = false) {
    return record(std::move(value), requires_grad, nullptr);
  }

  /// Appends an operation result. `backward` reads this node's grad and
  /// accumulates into its inputs' grads; it only runs if the node needs grad.
  Var<Scalar> record(Tensor<Scalar> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
    return Var<Scalar>{this, int(nodes_.size()) - 1};
  }

  const Tensor<Scalar>& value(Var<Scalar> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<Scalar> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulator; allocated as zeros on first access.
  Tensor<Scalar>& grad(Var<Scalar> v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.shape() != n.value.shape() || n.grad.empty() != n.value.empty())
      n.grad = Tensor<Scalar>(n.value.shape());
    return n.grad;
  }
  bool has_grad(Var<Scalar> v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Seeds d(root)/d(root) = 1 and propagates to every node that requires grad.
  void backward(Var<Scalar> root) {
    if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar");
    grad(root).values().setConstant(Scalar(1));
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this);
    }
  }

  /// Zeroes all accumulated gradients so the tape can be replayed.
  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor<Scalar>();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

enum class Mode { Train, Eval };

/// Running statistics of one batch-norm layer.
template <typename Scalar>
struct BnState {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> running_mean;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);

  static BnState identity(int channels) {
    BnState s;
    s.running_mean = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(channels);
    s.running_var = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Ones(channels);
    return s;
  }
  template <typename Other>
  BnState<Other> cast() const {
    return {running_mean.template cast<Other>(), running_var.template cast<Other>(), Other(momentum),
            Other(eps)};
  }
};

// Differentiable operators. Each records one node whose backward rule is exact.

/// Zero-padded 3×3 cross-correlation, stride 1. w: (out, in, 3, 3), b: (1, out, 1, 1).
template <typename Scalar>
Var<Scalar> conv3x3(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b);

/// Per-channel normalization. Train mode uses batch statistics (over batch and
/// spatial dims) and updates `state`; eval mode uses the running statistics.
/// gamma, beta: (1, C, 1, 1).
template <typename Scalar>
Var<Scalar> batch_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, BnState<Scalar>& state, Mode mode);

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x);

template <typename Scalar>
Var<Scalar> add(Var<Scalar> x, Var<Scalar> y);

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> x, Var<Scalar> y);

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor);

/// Sum of all elements, as a (1,1,1,1) tensor.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x);

/// Σ x ⊙ weights, as a (1,1,1,1) tensor. weights is a constant.
template <typename Scalar>
Var<Scalar> dot(Var<Scalar> x, const Tensor<Scalar>& weights);

/// (N, C·r², H, W) → (N, C, H·r, W·r); out(c, y·r+i, x·r+j) = in(c·r²+i·r+j, y, x).
template <typename Scalar>
Var<Scalar> depth_to_space(Var<Scalar> x, int factor = 2);

/// Inverse of depth_to_space.
template <typename Scalar>
Var<Scalar> space_to_depth(Var<Scalar> x, int factor = 2);

/// Σ mask·|pred − target|^p / Σ mask, p ∈ {1, 2}; for p = 1 the subgradient at 0 is 0.
/// Throws DegenerateLossError when the mask is empty.
template <typename Scalar>
Var<Scalar> masked_loss(Var<Scalar> pred, const Tensor<Scalar>& target, const Tensor<Scalar>& mask, int p);

#define M2M_DECLARE_OPS(S)                                                                          \
  extern template Var<S> conv3x3(Var<S>, Var<S>, Var<S>);                                           \
  extern template Var<S> batch_norm(Var<S>, Var<S>, Var<S>, BnState<S>&, Mode);                     \
  extern template Var<S> relu(Var<S>);                                                              \
  extern template Var<S> add(Var<S>, Var<S>);                                                       \
  extern template Var<S> sub(Var<S>, Var<S>);                                                       \
  extern template Var<S> scale(Var<S>, S);                                                          \
  extern template Var<S> sum(Var<S>);                                                               \
  extern template Var<S> dot(Var<S>, const Tensor<S>&);                                             \
  extern template Var<S> depth_to_space(Var<S>, int);                                               \
  extern template Var<S> space_to_depth(Var<S>, int);                                               \
  extern template Var<S> masked_loss(Var<S>, const Tensor<S>&, const Tensor<S>&, int);
M2M_DECLARE_OPS(float)
M2M_DECLARE_OPS(double)
#undef M2M_DECLARE_OPS

}  // namespace m2m
