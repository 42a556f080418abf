#include "earsr/nn/autograd.hpp"

#include <unordered_set>

#include "earsr/error.hpp"

namespace earsr::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::string Tensor::shape_string() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.n, value.c, value.h, value.w, 0.0);
  return grad;
}

void Node::accumulate(std::span<const double> g) {
  Tensor& buf = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf.data[i] += g[i];
}

void Node::zero_grad() {
  if (grad.size() == value.size()) std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

Var constant(Tensor t) {
  auto v = std::make_shared<Node>();
  v->value = std::move(t);
  return v;
}

Var parameter(Tensor t) {
  auto v = std::make_shared<Node>();
  v->value = std::move(t);
  v->requires_grad = true;
  return v;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto v = std::make_shared<Node>();
  v->value = std::move(value);
  if (!t_grad_enabled) return v;
  for (const auto& p : parents) v->requires_grad = v->requires_grad || p->requires_grad;
  if (v->requires_grad) {
    v->parents = std::move(parents);
    v->backward_fn = std::move(backward);
  }
  return v;
}

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw Error(ErrorCode::ShapeError, "backward() needs a scalar root");
  }
  if (!root->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer().data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
  // Interior gradients are no longer needed; release them.
  for (Node* n : order) {
    if (n->backward_fn) n->grad = Tensor();
  }
}

double scalar(const Var& v) {
  if (v->value.size() != 1) throw Error(ErrorCode::ShapeError, "tensor is not a scalar");
  return v->value.data[0];
}

}  // namespace earsr::nn
