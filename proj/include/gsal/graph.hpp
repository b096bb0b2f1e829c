#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gsal/tensor.hpp"

namespace gsal {

// Handle to a node recorded in a Graph.
struct Var {
  std::size_t id = 0;
};

// Single-use reverse-mode tape. Nodes are appended in evaluation order, so the
// creation order is already topological and backward() walks it in reverse.
//
// Layout conventions: images are batches [N, C, H, W], dense activations are
// [N, features]. Convolutions are stride 1 with zero "same" padding.
class Graph {
 public:
  Var input(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return input(std::move(value), false); }

  const Tensor& value(Var v) const;
  // Adjoint of v after backward(); zero for nodes the root does not depend on.
  Tensor grad(Var v) const;

  // Seeds the root with ones (root must be a single element) or with `seed`.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }

  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);                 // [m,k] x [k,n]
  Var add_bias(Var x, Var bias);            // [n,m] + [m] per row
  Var conv2d(Var x, Var weight, Var bias);  // weight [out, in, k, k], bias [out]
  Var avgpool2(Var x);                      // 2x2 window, stride 2
  Var relu(Var x);                          // subgradient at 0 is 0
  Var softmax(Var x);                       // row-wise over [n, c]
  Var cross_entropy(Var logits, std::span<const std::size_t> labels);  // mean over rows
  Var reshape(Var x, Shape shape);
  Var pick(Var x, std::span<const std::size_t> columns);  // [n,c] -> [n], one column per row
  Var sum(Var x);

  // Broadcasts per-group values g [C, p] to pixels: out[0, c, i] = g[c, label[i]] / |S_label[i]|,
  // giving shape [1, C, H, W]. Its adjoint is the within-group mean of the incoming
  // pixel adjoints, i.e. the gather-mean over each index set.
  Var group_broadcast(Var g, std::span<const int> labels, std::size_t height, std::size_t width);

 private:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::string op;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, std::string op, BackwardFn backward);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  Tensor& adjoint(std::size_t id);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace gsal
