#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unetgan/errors.hpp"

namespace unetgan {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename S>
class Tape;

/// Dense row-major array. Values are immutable and shared between copies;
/// a tensor produced while a Tape is recording carries the id of its node.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() : Tensor(Shape{0}, std::vector<S>{}) {}

  Tensor(Shape shape, std::vector<S> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<S>>(std::move(values))) {
    if (unetgan::numel(shape_) != data_->size()) {
      throw ShapeError("tensor shape " + to_string(shape_) + " holds " +
                       std::to_string(unetgan::numel(shape_)) + " values, got " +
                       std::to_string(data_->size()));
    }
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }
  static Tensor full(Shape shape, S value) {
    auto n = unetgan::numel(shape);
    return Tensor(std::move(shape), std::vector<S>(n, value));
  }
  static Tensor scalar(S value) { return Tensor(Shape{1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_->size(); }

  std::span<const S> values() const { return {data_->data(), data_->size()}; }
  const std::vector<S>& vec() const { return *data_; }
  S operator[](std::size_t i) const { return (*data_)[i]; }

  S item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return (*data_)[0];
  }

  Tape<S>* tape() const { return tape_; }
  int node() const { return node_; }
  bool recorded() const { return tape_ != nullptr && node_ >= 0; }

  /// Same values, no history.
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

  /// Same values reinterpreted under a new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (unetgan::numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor t = detach();
    t.shape_ = std::move(shape);
    return t;
  }

  /// Gradient accumulated for this tensor by the last backward sweep of its tape.
  std::optional<Tensor> grad() const;

 private:
  friend class Tape<S>;
  Shape shape_;
  std::shared_ptr<const std::vector<S>> data_;
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.values().begin(), t.values().end());
  return Tensor<To>(t.shape(), std::move(out));
}

/// Trainable tensor with an additive gradient buffer.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  std::vector<S> grad;

  Parameter(std::string n, Tensor<S> v)
      : name(std::move(n)), value(std::move(v)), grad(value.numel(), S(0)) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
  void assign(std::vector<S> values) { value = Tensor<S>(value.shape(), std::move(values)); }
};

/// Linear record of differentiable operations in execution order. Backward
/// sweeps the record once in reverse; gradients accumulate additively.
template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const S> grad_out, Tape& tape)>;

  struct Node {
    std::string_view op;
    std::vector<int> parents;
    std::size_t size = 0;
    std::vector<S> grad;
    BackwardFn backward;
    Parameter<S>* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node for an input whose gradient is wanted.
  Tensor<S> watch(const Tensor<S>& t) {
    Tensor<S> out = t.detach();
    attach(out, "leaf", {}, nullptr);
    return out;
  }

  /// Leaf node whose gradient is added to p.grad after backward.
  Tensor<S> bind(Parameter<S>& p) {
    Tensor<S> out = p.value.detach();
    attach(out, "param", {}, nullptr);
    nodes_.back().param = &p;
    return out;
  }

  /// Records a result computed from `inputs`. Inputs without history are
  /// constants; `backward` receives d(loss)/d(result).
  Tensor<S> record(std::string_view op, Tensor<S> result, std::vector<int> parents, BackwardFn backward) {
    attach(result, op, std::move(parents), std::move(backward));
    return result;
  }

  /// Mutable gradient buffer of a node, zero-initialised on first touch.
  std::span<S> grad_buffer(int id) {
    auto& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.grad.empty()) n.grad.assign(n.size, S(0));
    return n.grad;
  }

  void backward(const Tensor<S>& loss) {
    if (loss.tape() != this || loss.node() < 0) throw TapeError("backward: loss was not recorded on this tape");
    if (loss.numel() != 1) throw TapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    if (swept_) throw TapeError("backward: tape already swept; record a new step");
    swept_ = true;
    grad_buffer(loss.node())[0] += S(1);
    for (int i = loss.node(); i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.empty()) continue;
      ++visits_;
      if (n.backward) {
        n.backward(n.grad, *this);
        n.backward = nullptr;  // releases saved forward values
      }
      if (n.param != nullptr) {
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
      }
    }
  }

  std::optional<Tensor<S>> grad_of(const Tensor<S>& t) const {
    if (t.tape() != this || t.node() < 0) return std::nullopt;
    const auto& n = nodes_[static_cast<std::size_t>(t.node())];
    if (n.grad.empty()) return Tensor<S>::zeros(t.shape());
    return Tensor<S>(t.shape(), n.grad);
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t visits() const { return visits_; }
  bool swept() const { return swept_; }

 private:
  void attach(Tensor<S>& t, std::string_view op, std::vector<int> parents, BackwardFn backward) {
    if (swept_) throw TapeError("cannot record on a tape after backward");
    Node n;
    n.op = op;
    n.parents = std::move(parents);
    n.size = t.numel();
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
  bool swept_ = false;
};

template <typename S>
std::optional<Tensor<S>> Tensor<S>::grad() const {
  if (tape_ == nullptr) return std::nullopt;
  return tape_->grad_of(*this);
}

/// Where a forward pass records and whether it binds trainable parameters.
/// A null tape evaluates without history; bind_params=false treats parameters
/// as constants (frozen model) while inputs with history still propagate.
template <typename S>
struct Graph {
  Tape<S>* tape = nullptr;
  bool bind_params = true;

  Tensor<S> use(Parameter<S>& p) const {
    if (tape != nullptr && bind_params) return tape->bind(p);
    return p.value.detach();
  }
};

}  // namespace unetgan
