#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "unetgan/tensor.hpp"

namespace unetgan {

namespace detail {

template <typename S>
Tape<S>* common_tape(std::initializer_list<const Tensor<S>*> inputs) {
  Tape<S>* tape = nullptr;
  for (const auto* t : inputs) {
    if (!t->recorded()) continue;
    if (tape != nullptr && tape != t->tape()) throw TapeError("operands recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

/// Attaches `result` to the operands' tape when any operand is recorded.
template <typename S>
Tensor<S> finish(std::string_view op, Tensor<S> result, std::initializer_list<const Tensor<S>*> inputs,
                 typename Tape<S>::BackwardFn backward) {
  Tape<S>* tape = common_tape<S>(inputs);
  if (tape == nullptr) return result;
  std::vector<int> parents;
  for (const auto* t : inputs) parents.push_back(t->recorded() ? t->node() : -1);
  return tape->record(op, std::move(result), std::move(parents), std::move(backward));
}

inline std::string fmt_value(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

template <typename S>
void require_same_shape(std::string_view op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename S, typename F, typename D>
Tensor<S> unary(std::string_view op, const Tensor<S>& x, F f, D dfdx) {
  std::vector<S> y(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  Tensor<S> out(x.shape(), std::move(y));
  if (!x.recorded()) return out;
  int px = x.node();
  return finish<S>(op, out, {&x}, [x, out, px, dfdx](std::span<const S> g, Tape<S>& tape) {
    auto gx = tape.grad_buffer(px);
    auto xv = x.values();
    auto yv = out.values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename S>
Tensor<S> binary(std::string_view op, const Tensor<S>& a, const Tensor<S>& b, BinaryKind kind) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar) require_same_shape(op, a, b);
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  std::vector<S> y(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    S u = av[a_scalar ? 0 : i];
    S v = bv[b_scalar ? 0 : i];
    y[i] = kind == BinaryKind::kAdd ? u + v : kind == BinaryKind::kSub ? u - v : u * v;
  }
  Tensor<S> out(shape, std::move(y));
  if (!a.recorded() && !b.recorded()) return out;
  int pa = a.recorded() ? a.node() : -1;
  int pb = b.recorded() ? b.node() : -1;
  return finish<S>(op, out, {&a, &b}, [a, b, pa, pb, a_scalar, b_scalar, kind](std::span<const S> g, Tape<S>& tape) {
    auto av = a.values();
    auto bv = b.values();
    if (pa >= 0) {
      auto ga = tape.grad_buffer(pa);
      for (std::size_t i = 0; i < g.size(); ++i) {
        S d = kind == BinaryKind::kMul ? bv[b_scalar ? 0 : i] : S(1);
        ga[a_scalar ? 0 : i] += g[i] * d;
      }
    }
    if (pb >= 0) {
      auto gb = tape.grad_buffer(pb);
      for (std::size_t i = 0; i < g.size(); ++i) {
        S d = kind == BinaryKind::kMul ? av[a_scalar ? 0 : i] : kind == BinaryKind::kSub ? S(-1) : S(1);
        gb[b_scalar ? 0 : i] += g[i] * d;
      }
    }
  });
}

}  // namespace detail

// Elementwise arithmetic. Equal shapes, or one operand with a single element.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary(std::string_view("add"), a, b, detail::BinaryKind::kAdd);
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary(std::string_view("sub"), a, b, detail::BinaryKind::kSub);
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary(std::string_view("mul"), a, b, detail::BinaryKind::kMul);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return detail::unary(
      "scale", x, [c](S v) { return c * v; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return detail::unary(
      "add_scalar", x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

/// 1 - x
template <typename S>
Tensor<S> one_minus(const Tensor<S>& x) {
  return detail::unary(
      "one_minus", x, [](S v) { return S(1) - v; }, [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  return detail::unary(
      "square", x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] >= S(0))) {
      throw DomainError("sqrt: negative input " + detail::fmt_value(xv[i]) + " at index " + std::to_string(i));
    }
  }
  // d/dx sqrt(x) at x = 0 is taken as 0.
  return detail::unary(
      "sqrt", x, [](S v) { return std::sqrt(v); }, [](S, S y) { return y > S(0) ? S(0.5) / y : S(0); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > S(0))) {
      throw DomainError("log: non-positive input " + detail::fmt_value(xv[i]) + " at index " + std::to_string(i));
    }
  }
  return detail::unary(
      "log", x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> pow(const Tensor<S>& x, S exponent) {
  if (exponent != std::floor(exponent)) {
    auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] < S(0)) {
        throw DomainError("pow: negative base " + detail::fmt_value(xv[i]) + " at index " + std::to_string(i) +
                          " with non-integer exponent " + detail::fmt_value(exponent));
      }
    }
  }
  return detail::unary(
      "pow", x, [exponent](S v) { return std::pow(v, exponent); },
      [exponent](S v, S) { return exponent == S(0) ? S(0) : exponent * std::pow(v, exponent - S(1)); });
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return detail::unary(
      "clamp", x, [lo, hi](S v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](S v, S) { return (v >= lo && v <= hi) ? S(1) : S(0); });
}

// Activations.
template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary(
      "relu", x, [](S v) { return v < S(0) ? S(0) : v; }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope = S(0.2)) {
  return detail::unary(
      "leaky_relu", x, [slope](S v) { return v > S(0) ? v : slope * v; },
      [slope](S v, S) { return v > S(0) ? S(1) : slope; });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  return detail::unary(
      "tanh", x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary(
      "sigmoid", x,
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

enum class Activation { kRelu, kLeakyRelu, kTanh, kSigmoid };

template <typename S>
Tensor<S> activate(const Tensor<S>& x, Activation kind) {
  switch (kind) {
    case Activation::kRelu: return relu(x);
    case Activation::kLeakyRelu: return leaky_relu(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kSigmoid: return sigmoid(x);
  }
  return x;
}

// Reductions.
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  double acc = 0;
  for (S v : x.values()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
  if (!x.recorded()) return out;
  int px = x.node();
  return detail::finish<S>("sum", out, {&x}, [px](std::span<const S> g, Tape<S>& tape) {
    auto gx = tape.grad_buffer(px);
    for (auto& v : gx) v += g[0];
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  double acc = 0;
  for (S v : x.values()) acc += v;
  const S inv = S(1) / static_cast<S>(x.numel());
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(x.numel())));
  if (!x.recorded()) return out;
  int px = x.node();
  return detail::finish<S>("mean", out, {&x}, [px, inv](std::span<const S> g, Tape<S>& tape) {
    auto gx = tape.grad_buffer(px);
    for (auto& v : gx) v += g[0] * inv;
  });
}

/// Mean over one dimension; that dimension is removed from the result shape.
template <typename S>
Tensor<S> mean_dim(const Tensor<S>& x, std::size_t dim) {
  if (dim >= x.rank()) {
    throw ShapeError("mean_dim: dimension " + std::to_string(dim) + " out of range for " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < dim; ++i) outer *= x.dim(i);
  for (std::size_t i = dim + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t d = x.dim(dim);
  if (d == 0) throw ShapeError("mean_dim over empty dimension");
  Shape shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != dim) shape.push_back(x.dim(i));
  if (shape.empty()) shape.push_back(1);
  std::vector<S> y(outer * inner);
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double acc = 0;
      for (std::size_t k = 0; k < d; ++k) acc += xv[(o * d + k) * inner + in];
      y[o * inner + in] = static_cast<S>(acc / static_cast<double>(d));
    }
  }
  Tensor<S> out(shape, std::move(y));
  if (!x.recorded()) return out;
  int px = x.node();
  return detail::finish<S>("mean_dim", out, {&x}, [px, outer, inner, d](std::span<const S> g, Tape<S>& tape) {
    auto gx = tape.grad_buffer(px);
    const S inv = S(1) / static_cast<S>(d);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t in = 0; in < inner; ++in) gx[(o * d + k) * inner + in] += g[o * inner + in] * inv;
  });
}

// Channel plumbing for rank-4 N x C x H x W tensors.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<S> y(n * (ca + cb) * hw);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.begin() + i * ca * hw, ca * hw, y.begin() + i * (ca + cb) * hw);
    std::copy_n(bv.begin() + i * cb * hw, cb * hw, y.begin() + (i * (ca + cb) + ca) * hw);
  }
  Tensor<S> out({n, ca + cb, a.dim(2), a.dim(3)}, std::move(y));
  if (!a.recorded() && !b.recorded()) return out;
  int pa = a.recorded() ? a.node() : -1;
  int pb = b.recorded() ? b.node() : -1;
  return detail::finish<S>("concat_channels", out, {&a, &b},
                           [pa, pb, n, ca, cb, hw](std::span<const S> g, Tape<S>& tape) {
                             for (std::size_t i = 0; i < n; ++i) {
                               if (pa >= 0) {
                                 auto ga = tape.grad_buffer(pa);
                                 for (std::size_t k = 0; k < ca * hw; ++k) ga[i * ca * hw + k] += g[i * (ca + cb) * hw + k];
                               }
                               if (pb >= 0) {
                                 auto gb = tape.grad_buffer(pb);
                                 for (std::size_t k = 0; k < cb * hw; ++k)
                                   gb[i * cb * hw + k] += g[(i * (ca + cb) + ca) * hw + k];
                               }
                             }
                           });
}

template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, std::size_t begin, std::size_t count) {
  if (x.rank() != 4 || begin + count > x.dim(1) || count == 0) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<S> y(n * count * hw);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(xv.begin() + (i * c + begin) * hw, count * hw, y.begin() + i * count * hw);
  Tensor<S> out({n, count, x.dim(2), x.dim(3)}, std::move(y));
  if (!x.recorded()) return out;
  int px = x.node();
  return detail::finish<S>("slice_channels", out, {&x}, [px, n, c, begin, count, hw](std::span<const S> g, Tape<S>& tape) {
    auto gx = tape.grad_buffer(px);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < count * hw; ++k) gx[(i * c + begin) * hw + k] += g[i * count * hw + k];
  });
}

/// Rows [begin, begin+count) of the leading (batch) dimension.
template <typename S>
Tensor<S> slice_batch(const Tensor<S>& x, std::size_t begin, std::size_t count) {
  if (x.rank() == 0 || begin + count > x.dim(0) || count == 0) {
    throw ShapeError("slice_batch: rows out of range for " + to_string(x.shape()));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<S> y(x.values().begin() + begin * row, x.values().begin() + (begin + count) * row);
  Tensor<S> out(shape, std::move(y));
  if (!x.recorded()) return out;
  int px = x.node();
  return detail::finish<S>("slice_batch", out, {&x}, [px, begin, row](std::span<const S> g, Tape<S>& tape) {
    auto gx = tape.grad_buffer(px);
    for (std::size_t k = 0; k < g.size(); ++k) gx[begin * row + k] += g[k];
  });
}

/// Mean pixelwise cross-entropy of N x C x H x W logits against labels laid
/// out N x H x W.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, std::span<const std::uint8_t> labels) {
  if (logits.rank() != 4) throw ShapeError("softmax_cross_entropy: logits must be rank 4, got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  if (labels.size() != n * hw) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  auto lv = logits.values();
  std::vector<S> prob(n * c * hw);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t label = labels[i * hw + p];
      if (label >= c) throw DomainError("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
      S mx = lv[(i * c) * hw + p];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, lv[(i * c + k) * hw + p]);
      double z = 0;
      for (std::size_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(lv[(i * c + k) * hw + p] - mx));
      for (std::size_t k = 0; k < c; ++k)
        prob[(i * c + k) * hw + p] = static_cast<S>(std::exp(static_cast<double>(lv[(i * c + k) * hw + p] - mx)) / z);
      total += std::log(z) - static_cast<double>(lv[(i * c + label) * hw + p] - mx);
    }
  }
  const double count = static_cast<double>(n * hw);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / count));
  if (!logits.recorded()) return out;
  int px = logits.node();
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return detail::finish<S>("softmax_cross_entropy", out, {&logits},
                           [px, prob = std::move(prob), lab = std::move(lab), n, c, hw, count](std::span<const S> g,
                                                                                             Tape<S>& tape) {
                             auto gx = tape.grad_buffer(px);
                             const S scale = g[0] / static_cast<S>(count);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t k = 0; k < c; ++k)
                                 for (std::size_t p = 0; p < hw; ++p) {
                                   const std::size_t at = (i * c + k) * hw + p;
                                   S d = prob[at] - (lab[i * hw + p] == k ? S(1) : S(0));
                                   gx[at] += scale * d;
                                 }
                           });
}

/// Per-pixel argmax over the channel dimension; ties resolve to the lowest class.
template <typename S>
std::vector<std::uint8_t> argmax_channels(const Tensor<S>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  std::vector<std::uint8_t> out(n * hw);
  auto lv = logits.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (lv[(i * c + k) * hw + p] > lv[(i * c + best) * hw + p]) best = k;
      out[i * hw + p] = static_cast<std::uint8_t>(best);
    }
  return out;
}

template <typename S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace unetgan
