#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace earsr::nn {

// NCHW tensor of doubles.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_string() const;

  double& at(int in, int ic, int iy, int ix) {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  double at(int in, int ic, int iy, int ix) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(std::span<const double> g);
  Tensor& grad_buffer();
  void zero_grad();
};

// Leaf holding a constant tensor (no gradient).
Var constant(Tensor t);
// Leaf that collects gradients (a trainable parameter).
Var parameter(Tensor t);

// Builds an interior node. The node records its parents and backward
// function only when some parent requires a gradient.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

// Reverse-mode sweep from a scalar (size-1) node.
void backward(const Var& root);

double scalar(const Var& v);

}  // namespace earsr::nn

namespace earsr::nn {

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace earsr::nn
