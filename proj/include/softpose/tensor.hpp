#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace softpose {

using Shape = std::vector<std::size_t>;

// Raised on inconsistent extents; the message names the offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Raised on invalid values (non-finite inputs, bad arguments, broken files).
class ValueError : public std::invalid_argument {
 public:
  explicit ValueError(const std::string& msg) : std::invalid_argument(msg) {}
};

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Plain dense value container, detached from any tape. Used for datasets,
// fixtures, parameters and serialization.
struct TensorData {
  Shape shape;
  std::vector<double> values;

  TensorData() = default;
  TensorData(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != values.size())
      throw ShapeError("TensorData: shape " + shape_str(shape) + " expects " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
  }
  static TensorData zeros(Shape s) {
    std::vector<double> v(numel(s), 0.0);
    return TensorData(std::move(s), std::move(v));
  }
  static TensorData full(Shape s, double fill) {
    std::vector<double> v(numel(s), fill);
    return TensorData(std::move(s), std::move(v));
  }
  static TensorData scalar(double v) { return TensorData({}, {v}); }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }

  double& at(std::initializer_list<std::size_t> idx) { return values[offset(idx)]; }
  double at(std::initializer_list<std::size_t> idx) const { return values[offset(idx)]; }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0, d = 0;
    for (std::size_t i : idx) off = off * shape[d] + i, ++d;
    return off;
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

class Tape;

// Handle into a tape node. Cheap to copy; the value lives in the tape and
// cannot be written through the handle.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::span<const double> values() const;
  double value() const;  // scalar convenience
  double at(std::initializer_list<std::size_t> idx) const;
  bool requires_grad() const;
  int node() const { return node_; }
  Tape* tape() const { return tape_; }
  explicit operator bool() const { return tape_ != nullptr; }

  TensorData to_data() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, int node) : tape_(tape), node_(node) {}
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Records one node per executed primitive; backward
// replays the record in reverse creation order, which is a valid reverse
// topological order because operands always precede their results.
//
// A tape and the tensors recorded on it are confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != values.size())
      throw ShapeError("leaf: shape " + shape_str(shape) + " expects " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(values);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  Tensor leaf(const TensorData& td, bool requires_grad = false) {
    return leaf(td.shape, td.values, requires_grad);
  }

  Tensor constant(Shape shape, std::vector<double> values) {
    return leaf(std::move(shape), std::move(values), false);
  }

  Tensor scalar(double v) { return leaf(Shape{}, {v}, false); }

  // Records an op result. requires_grad is inherited from the parents.
  Tensor record(Shape shape, std::vector<double> value, std::vector<int> parents,
                BackwardFn backward) {
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    for (int p : n.parents)
      if (nodes_[static_cast<std::size_t>(p)].requires_grad) {
        n.requires_grad = true;
        break;
      }
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::size_t node_count() const { return nodes_.size(); }

  const Shape& shape_of(int id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

  bool requires_grad_of(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  std::span<const double> value_of(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return {n.value.data(), n.value.size()};
  }

  // Gradient accumulation buffer; empty span when the node does not
  // participate in the current backward pass.
  std::span<double> grad_accum(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    return {n.grad.data(), n.grad.size()};
  }

  std::span<const double> grad_of(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return {n.grad.data(), n.grad.size()};
  }

  // Materialized gradient, or zeros when the node never received one.
  std::vector<double> gradient(const Tensor& t) const {
    check_owned(t, "gradient");
    const Node& n = nodes_[static_cast<std::size_t>(t.node())];
    if (!n.grad.empty()) return n.grad;
    return std::vector<double>(numel(n.shape), 0.0);
  }

  // Reverse pass from a scalar loss. Gradients are materialized (zero-filled)
  // for every requires_grad node reachable from the loss and for every
  // requires_grad leaf, so unused parameters read as exact zeros.
  void backward(const Tensor& loss) {
    check_owned(loss, "backward");
    const int root = loss.node();
    if (numel(nodes_[static_cast<std::size_t>(root)].shape) != 1)
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_str(nodes_[static_cast<std::size_t>(root)].shape));

    for (Node& n : nodes_) n.grad.clear();

    std::vector<char> reachable(nodes_.size(), 0);
    std::vector<int> stack;
    if (nodes_[static_cast<std::size_t>(root)].requires_grad) {
      reachable[static_cast<std::size_t>(root)] = 1;
      stack.push_back(root);
    }
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      for (int p : nodes_[static_cast<std::size_t>(id)].parents) {
        Node& pn = nodes_[static_cast<std::size_t>(p)];
        if (pn.requires_grad && !reachable[static_cast<std::size_t>(p)]) {
          reachable[static_cast<std::size_t>(p)] = 1;
          stack.push_back(p);
        }
      }
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      const bool is_leaf = !n.backward;
      if (reachable[i] || (is_leaf && n.requires_grad))
        n.grad.assign(numel(n.shape), 0.0);
    }

    if (!reachable[static_cast<std::size_t>(root)]) return;  // nothing trainable below the loss
    nodes_[static_cast<std::size_t>(root)].grad[0] = 1.0;

    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (reachable[static_cast<std::size_t>(id)] && n.backward) n.backward(*this, id);
    }
  }

 private:
  friend class Tensor;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(const Tensor& t, const char* what) const {
    if (t.tape() != this || t.node() < 0 ||
        t.node() >= static_cast<int>(nodes_.size()))
      throw ValueError(std::string(what) + ": tensor does not belong to this tape");
  }

  std::vector<Node> nodes_;
};

inline const Shape& Tensor::shape() const { return tape_->shape_of(node_); }
inline std::size_t Tensor::size() const { return tape_->value_of(node_).size(); }
inline std::span<const double> Tensor::values() const { return tape_->value_of(node_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad_of(node_); }

inline double Tensor::value() const {
  auto v = values();
  if (v.size() != 1)
    throw ShapeError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return v[0];
}

inline double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const Shape& s = shape();
  std::size_t off = 0, d = 0;
  for (std::size_t i : idx) off = off * s[d] + i, ++d;
  return values()[off];
}

inline TensorData Tensor::to_data() const {
  auto v = values();
  return TensorData(shape(), std::vector<double>(v.begin(), v.end()));
}

}  // namespace softpose
