#ifndef VOXSEG_GRAPH_HPP
#define VOXSEG_GRAPH_HPP

#include <functional>
#include <string>
#include <vector>

#include "voxseg/common.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

// Reverse-mode tape. Ops append one node each in execution order, which is
// by construction a topological order of the compute graph. backward()
// visits every node exactly once in reverse; gradients accumulate
// additively into shared buffers, so fan-out sums branch contributions.
//
// Ops take a Graph* and record only when it is non-null and some input
// requires a gradient; pass nullptr for inference.
template <typename T>
class Graph {
public:
  using BackwardFn = std::function<void()>;

  void record(const char* op, BackwardFn fn) {
    nodes_.push_back(Node{op, std::move(fn)});
  }

  // Seeds d(loss)/d(loss) = 1 and propagates through the tape.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() expects a scalar loss tensor");
    loss.ensure_grad();
    loss.grad()[0] = T(1);
    backward();
  }

  void backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

  size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  // Frees the tape together with all tensors captured by its closures.
  void clear() { nodes_.clear(); }

private:
  struct Node {
    const char* op;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

}  // namespace voxseg

#endif  // VOXSEG_GRAPH_HPP
