#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/rng.hpp"

namespace vqmae {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily; kept across steps for accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Handle to a dense fp64 array plus (optionally) its gradient. Copies of a
// Tensor alias the same storage; ops create new nodes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->value.assign(static_cast<size_t>(numel(shape)), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.node_->value) x = v;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return full({1}, v, requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
      throw TensorError("tensor data length " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.node_->value) x = rng.normal(0.0, stddev);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t ndim() const { return node_->shape.size(); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad_const() const { return node_->grad; }
  void zero_grad() {
    node_->grad.assign(node_->value.size(), 0.0);
  }

  double item() const {
    if (node_->value.size() != 1)
      throw TensorError("item() on non-scalar tensor of shape " + shape_str(node_->shape));
    return node_->value[0];
  }

  double at(std::int64_t r, std::int64_t c) const {
    return node_->value[static_cast<size_t>(r * node_->shape[1] + c)];
  }

  bool same_storage(const Tensor& o) const { return node_ == o.node_; }

  // Fresh constant tensor with the same values, detached from any graph.
  Tensor detach() const {
    auto n = std::make_shared<detail::Node>();
    n->shape = node_->shape;
    n->value = node_->value;
    n->requires_grad = false;
    return Tensor(std::move(n));
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void check_finite(const char* op, const Tensor& t) {
  if (!all_finite(t.values()))
    throw TensorError(std::string(op) + ": non-finite input rejected");
}

// Reverse-mode tape. Ops append one closure per recorded primitive; backward
// replays them in reverse, exactly once each. Construction pushes the tape as
// the thread-local active tape (nested scopes restore the previous one).
// Policy: a tape is single-shot; backward() may run once, after which the
// recorded graph is cleared.
class Tape {
 public:
  Tape() : prev_(current_) { current_ = this; }
  ~Tape() { current_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  size_t size() const { return steps_.size(); }

  void backward(Tensor loss) {
    if (consumed_) throw TensorError("tape already consumed by backward()");
    if (loss.size() != 1)
      throw TensorError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
    loss.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
    consumed_ = true;
  }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
  static thread_local Tape* current_;
};

inline thread_local Tape* Tape::current_ = nullptr;

inline bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const Tensor* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

}  // namespace vqmae
