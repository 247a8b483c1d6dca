#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "thz/common.hpp"

namespace thz::nn {

/// NCHW extents. Parameters that are not images use trailing ones.
struct Shape4 {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  [[nodiscard]] std::size_t numel() const { return n * c * h * w; }
  [[nodiscard]] std::size_t plane() const { return h * w; }
  bool operator==(const Shape4&) const = default;
  [[nodiscard]] std::string str() const;
};

template <typename T>
struct Tensor {
  Shape4 shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape4 s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}

  [[nodiscard]] std::size_t numel() const { return data.size(); }
  T* sample(std::size_t n) { return data.data() + n * shape.c * shape.plane(); }
  const T* sample(std::size_t n) const { return data.data() + n * shape.c * shape.plane(); }
  T* channel(std::size_t n, std::size_t c) { return sample(n) + c * shape.plane(); }
  const T* channel(std::size_t n, std::size_t c) const { return sample(n) + c * shape.plane(); }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data[((n * shape.c + c) * shape.h + h) * shape.w + w];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data[((n * shape.c + c) * shape.h + h) * shape.w + w];
  }
};

/// A value in the computation graph. Gradients are allocated on first use.
template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.numel()) grad.assign(value.numel(), T(0));
    return grad;
  }
  [[nodiscard]] bool has_grad() const { return grad.size() == value.numel() && !grad.empty(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto node = constant(std::move(value));
  node->requires_grad = true;
  return node;
}

/// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Reverse-mode sweep from a scalar output; gradients accumulate into every
/// reachable node that requires them.
template <typename T>
void backward(const Var<T>& root);

/// Drops graph edges below `root` so intermediate buffers can be freed.
template <typename T>
void release_graph(const Var<T>& root);

}  // namespace thz::nn
