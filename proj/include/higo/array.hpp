#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace higo {

using Vec = Eigen::VectorXd;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

/// Dense row-major 64-bit array. An Array is attached to a tape (node >= 0)
/// when it participates in reverse-mode differentiation; detached arrays
/// evaluate the same forward math without recording.
struct Array {
  std::vector<int> shape;
  Vec data;
  Tape* tape = nullptr;
  int node = -1;

  Array() = default;
  Array(std::vector<int> s, Vec d) : shape(std::move(s)), data(std::move(d)) {}

  int size() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool on_tape() const { return node >= 0; }
  bool requires_grad() const { return on_tape(); }

  double scalar() const {
    if (size() != 1) throw ShapeError("scalar() on array of size " + std::to_string(size()));
    return data[0];
  }

  // Rows/cols of a 2-d array (rank-3 [H,W,D] maps to (H*W) x D).
  int rows2d() const;
  int cols2d() const;
  Eigen::Map<const MatRM> mat() const { return {data.data(), rows2d(), cols2d()}; }
  Eigen::Map<MatRM> mat() { return {data.data(), rows2d(), cols2d()}; }
};

int shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

Array full(std::vector<int> shape, double value);
Array zeros(std::vector<int> shape);
Array ones(std::vector<int> shape);
Array from_vec(std::vector<int> shape, Vec data);

/// Named learnable array with a persistent gradient slot.
struct Parameter {
  Array value;
  Vec grad;
  std::string name;

  Parameter() = default;
  Parameter(std::string n, Array v)
      : value(std::move(v)), grad(Vec::Zero(value.size())), name(std::move(n)) {}

  void zero_grad() { grad.setZero(); }
};

/// Records the forward computation; backward() replays it in reverse
/// insertion order, accumulating gradients.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  int alloc(int size, BackwardFn backward = nullptr) {
    if (nodes_.capacity() == nodes_.size()) nodes_.reserve(nodes_.size() + 4096);
    nodes_.push_back({size, std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Vec& grad(int node) {
    Vec& g = grads_.at(static_cast<size_t>(node));
    if (g.size() == 0) g = Vec::Zero(nodes_[static_cast<size_t>(node)].size);
    return g;
  }

  /// Attach a parameter as a leaf; after backward(), its gradient is
  /// accumulated into Parameter::grad.
  Array leaf(Parameter& p) {
    Array a = p.value;
    a.tape = this;
    a.node = alloc(a.size());
    param_leaves_.emplace_back(a.node, &p);
    return a;
  }

  /// Attach a constant input (gradient discarded).
  Array input(const Array& v) {
    Array a = v;
    a.tape = this;
    a.node = alloc(a.size());
    return a;
  }

  void backward(const Array& root);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    int size;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Vec> grads_;
  std::vector<std::pair<int, Parameter*>> param_leaves_;
};

}  // namespace higo
