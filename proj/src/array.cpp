#include "higo/array.hpp"

#include <numeric>

namespace higo {

int shape_size(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

int Array::rows2d() const {
  switch (rank()) {
    case 1:
      return 1;
    case 2:
      return shape[0];
    case 3:
      return shape[0] * shape[1];
    default:
      throw ShapeError("no 2-d view of array with shape " + shape_str(shape));
  }
}

int Array::cols2d() const { return shape.empty() ? 1 : shape.back(); }

Array full(std::vector<int> shape, double value) {
  int n = shape_size(shape);
  return {std::move(shape), Vec::Constant(n, value)};
}

Array zeros(std::vector<int> shape) { return full(std::move(shape), 0.0); }
Array ones(std::vector<int> shape) { return full(std::move(shape), 1.0); }

Array from_vec(std::vector<int> shape, Vec data) {
  if (shape_size(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  return {std::move(shape), std::move(data)};
}

void Tape::backward(const Array& root) {
  if (root.tape != this || !root.on_tape()) throw ValueError("backward: root is not on this tape");
  if (root.size() != 1) throw ShapeError("backward: root must be a scalar");
  grads_.assign(nodes_.size(), Vec());
  grad(root.node) = Vec::Ones(1);
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    auto& node = nodes_[static_cast<size_t>(i)];
    if (node.backward && grads_[static_cast<size_t>(i)].size() > 0) node.backward(*this);
  }
  for (auto& [node, p] : param_leaves_) {
    Vec& g = grads_[static_cast<size_t>(node)];
    if (g.size() > 0) p->grad += g;
  }
}

}  // namespace higo
