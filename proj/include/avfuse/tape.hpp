#pragma once

#include <functional>
#include <memory>
#include <span>
#include <utility>

#include "avfuse/matrix.hpp"

namespace avf {

template <typename T>
struct VarNode {
  Matrix<T> value;
  Matrix<T> grad;  // same shape, zero-initialized; accumulation is additive
};

template <typename T>
using VarPtr = std::shared_ptr<VarNode<T>>;

// Ordered record of primitive operations. Each recorded step reads the grads
// of the op's outputs and accumulates into the grads of its inputs; backward
// replays the steps in exact reverse order of recording.
template <typename T>
class Tape {
 public:
  VarPtr<T> make(Matrix<T> value) {
    auto node = std::make_shared<VarNode<T>>();
    node->grad = Matrix<T>(value.rows(), value.cols());
    node->value = std::move(value);
    return node;
  }

  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  void backward(const VarPtr<T>& out, T seed = T(1)) {
    std::pair<VarPtr<T>, T> one{out, seed};
    backward(std::span<const std::pair<VarPtr<T>, T>>(&one, 1));
  }

  // Seeds several scalar outputs at once, then replays the tape once.
  void backward(std::span<const std::pair<VarPtr<T>, T>> seeds) {
    for (const auto& [var, seed] : seeds) {
      if (var->value.size() != 1)
        throw DimensionError("backward: seeded output must be scalar (1x1)");
      var->grad(0, 0) += seed;
    }
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  std::size_t num_ops() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

}  // namespace avf
