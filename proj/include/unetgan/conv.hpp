#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "unetgan/ops.hpp"

namespace unetgan {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

// dst (+)= op(a) * op(b). Operands are copied into Eigen-owned storage first:
// Eigen's vectorized kernels sum in an order that depends on the address
// alignment of mapped buffers, which would make training results depend on
// where the heap happened to put them.
template <typename S>
void gemm(S* dst, bool accumulate, const S* a, std::size_t ar, std::size_t ac, bool ta, const S* b, std::size_t br,
          std::size_t bc, bool tb) {
  RowMat<S> A, B;
  if (ta) A = ConstMatMap<S>(a, ar, ac).transpose(); else A = ConstMatMap<S>(a, ar, ac);
  if (tb) B = ConstMatMap<S>(b, br, bc).transpose(); else B = ConstMatMap<S>(b, br, bc);
  RowMat<S> C;
  C.noalias() = A * B;
  const S* c = C.data();
  const std::size_t n = static_cast<std::size_t>(C.size());
  if (accumulate) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += c[i];
  } else {
    std::copy(c, c + n, dst);
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;             // patch grid
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
  bool trivial() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) of a patch row whose source column stays inside the image.
inline void valid_columns(const ConvGeometry& g, std::size_t j, std::size_t& lo, std::size_t& hi) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad), s = static_cast<std::ptrdiff_t>(g.stride);
  const auto off = static_cast<std::ptrdiff_t>(j) - pad;  // x = ox * s + off
  std::ptrdiff_t first = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t last = static_cast<std::ptrdiff_t>(g.width) - 1 - off;  // need ox * s <= last
  std::ptrdiff_t end = last < 0 ? 0 : last / s + 1;
  end = std::min<std::ptrdiff_t>(end, static_cast<std::ptrdiff_t>(g.out_w));
  first = std::min(first, end);
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(end);
}

// Unfolds one C x H x W image into a (C*kh*kw) x (out_h*out_w) patch matrix.
template <typename S>
void im2col(const S* img, const ConvGeometry& g, S* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        S* row = col + ((c * g.kh + i) * g.kw + j) * g.cols();
        std::size_t lo, hi;
        valid_columns(g, j, lo, hi);
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          S* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, S(0));
            continue;
          }
          const S* src = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          std::fill(dst, dst + lo, S(0));
          std::fill(dst + hi, dst + g.out_w, S(0));
          if (g.stride == 1) {
            std::copy(src + (static_cast<std::ptrdiff_t>(lo) + off), src + (static_cast<std::ptrdiff_t>(hi) + off), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[static_cast<std::ptrdiff_t>(ox * g.stride) + off];
          }
        }
      }
}

// Adjoint of im2col: scatters patch-matrix entries back, accumulating.
template <typename S>
void col2im_add(const S* col, const ConvGeometry& g, S* img) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const S* row = col + ((c * g.kh + i) * g.kw + j) * g.cols();
        std::size_t lo, hi;
        valid_columns(g, j, lo, hi);
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          S* dst = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          const S* src = row + oy * g.out_w;
          if (g.stride == 1) {
            S* d = dst + (static_cast<std::ptrdiff_t>(lo) + off);
            for (std::size_t ox = lo; ox < hi; ++ox) *d++ += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox * g.stride) + off] += src[ox];
          }
        }
      }
}

template <typename S>
void check_conv_operands(std::string_view op, const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias,
                         std::size_t in_channels_axis, std::size_t out_channels_axis) {
  if (input.rank() != 4) throw ShapeError(std::string(op) + ": input must be rank 4, got " + to_string(input.shape()));
  if (kernel.rank() != 4) throw ShapeError(std::string(op) + ": kernel must be rank 4, got " + to_string(kernel.shape()));
  if (input.dim(1) != kernel.dim(in_channels_axis)) {
    throw ShapeError(std::string(op) + ": channel mismatch, input " + to_string(input.shape()) + " vs kernel " +
                     to_string(kernel.shape()));
  }
  if (bias.numel() != kernel.dim(out_channels_axis)) {
    throw ShapeError(std::string(op) + ": bias " + to_string(bias.shape()) + " does not match kernel " +
                     to_string(kernel.shape()));
  }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding.
/// input N x Cin x H x W, kernel Cout x Cin x kh x kw, bias [Cout].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias, std::size_t stride,
                 std::size_t padding) {
  detail::check_conv_operands("conv2d", input, kernel, bias, 1, 0);
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw ShapeError("conv2d: output size < 1 for input " + to_string(input.shape()) + " and kernel " +
                     to_string(kernel.shape()));
  }
  const detail::ConvGeometry g{cin, h, w, kh, kw, stride, padding, (h + 2 * padding - kh) / stride + 1,
                               (w + 2 * padding - kw) / stride + 1};
  const std::size_t k = g.rows(), p = g.cols();

  std::vector<S> out(n * cout * p);
  std::vector<S> col(g.trivial() ? 0 : k * p);
  const S* wmat = kernel.values().data();
  auto bv = bias.values();
  for (std::size_t i = 0; i < n; ++i) {
    const S* img = input.values().data() + i * cin * h * w;
    const S* cp = img;
    if (!g.trivial()) {
      detail::im2col(img, g, col.data());
      cp = col.data();
    }
    S* o = out.data() + i * cout * p;
    detail::gemm(o, false, wmat, cout, k, false, cp, k, p, false);
    for (std::size_t c = 0; c < cout; ++c)
      for (std::size_t q = 0; q < p; ++q) o[c * p + q] += bv[c];
  }
  Tensor<S> result({n, cout, g.out_h, g.out_w}, std::move(out));
  if (!input.recorded() && !kernel.recorded() && !bias.recorded()) return result;

  const int pi = input.recorded() ? input.node() : -1;
  const int pk = kernel.recorded() ? kernel.node() : -1;
  const int pb = bias.recorded() ? bias.node() : -1;
  return detail::finish<S>(
      "conv2d", result, {&input, &kernel, &bias}, [input, kernel, g, n, cout, pi, pk, pb](std::span<const S> grad, Tape<S>& tape) {
        const std::size_t k = g.rows(), p = g.cols(), img_size = g.channels * g.height * g.width;
        const S* wmat = kernel.values().data();
        std::vector<S> col(g.trivial() ? 0 : k * p);
        std::vector<S> gcol(pi >= 0 && !g.trivial() ? k * p : 0);
        for (std::size_t i = 0; i < n; ++i) {
          const S* go = grad.data() + i * cout * p;
          if (pb >= 0) {
            auto gb = tape.grad_buffer(pb);
            for (std::size_t c = 0; c < cout; ++c) {
              S acc = 0;
              for (std::size_t q = 0; q < p; ++q) acc += go[c * p + q];
              gb[c] += acc;
            }
          }
          if (pk >= 0) {
            const S* img = input.values().data() + i * img_size;
            const S* cp = img;
            if (!g.trivial()) {
              detail::im2col(img, g, col.data());
              cp = col.data();
            }
            detail::gemm(tape.grad_buffer(pk).data(), true, go, cout, p, false, cp, k, p, true);
          }
          if (pi >= 0) {
            S* gi = tape.grad_buffer(pi).data() + i * img_size;
            if (g.trivial()) {
              detail::gemm(gi, true, wmat, cout, k, true, go, cout, p, false);
            } else {
              detail::gemm(gcol.data(), false, wmat, cout, k, true, go, cout, p, false);
              detail::col2im_add(gcol.data(), g, gi);
            }
          }
        }
      });
}

/// Transposed convolution: the adjoint of conv2d with the same kernel, used
/// as a forward op. input N x Cin x H x W, kernel Cin x Cout x kh x kw,
/// bias [Cout]; output side (H - 1) * stride - 2 * padding + kh.
template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias, std::size_t stride,
                           std::size_t padding) {
  detail::check_conv_operands("conv_transpose2d", input, kernel, bias, 0, 1);
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const auto out_h = static_cast<std::ptrdiff_t>((h - 1) * stride + kh) - static_cast<std::ptrdiff_t>(2 * padding);
  const auto out_w = static_cast<std::ptrdiff_t>((w - 1) * stride + kw) - static_cast<std::ptrdiff_t>(2 * padding);
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("conv_transpose2d: output size < 1 for input " + to_string(input.shape()) + " and kernel " +
                     to_string(kernel.shape()));
  }
  // Geometry of the conv2d whose adjoint this is: image = our output, patch grid = our input.
  const detail::ConvGeometry g{cout, static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w), kh, kw, stride,
                               padding, h, w};
  const std::size_t k = g.rows(), p = g.cols(), out_size = cout * g.height * g.width;

  std::vector<S> out(n * out_size, S(0));
  std::vector<S> col(k * p);
  const S* wmat = kernel.values().data();
  auto bv = bias.values();
  for (std::size_t i = 0; i < n; ++i) {
    detail::gemm(col.data(), false, wmat, cin, k, true, input.values().data() + i * cin * p, cin, p, false);
    S* o = out.data() + i * out_size;
    detail::col2im_add(col.data(), g, o);
    for (std::size_t c = 0; c < cout; ++c)
      for (std::size_t q = 0; q < g.height * g.width; ++q) o[c * g.height * g.width + q] += bv[c];
  }
  Tensor<S> result({n, cout, g.height, g.width}, std::move(out));
  if (!input.recorded() && !kernel.recorded() && !bias.recorded()) return result;

  const int pi = input.recorded() ? input.node() : -1;
  const int pk = kernel.recorded() ? kernel.node() : -1;
  const int pb = bias.recorded() ? bias.node() : -1;
  return detail::finish<S>(
      "conv_transpose2d", result, {&input, &kernel, &bias},
      [input, kernel, g, n, cin, pi, pk, pb](std::span<const S> grad, Tape<S>& tape) {
        const std::size_t k = g.rows(), p = g.cols(), plane = g.height * g.width, out_size = g.channels * plane;
        const S* wmat = kernel.values().data();
        std::vector<S> gcol(k * p);
        for (std::size_t i = 0; i < n; ++i) {
          const S* go = grad.data() + i * out_size;
          if (pb >= 0) {
            auto gb = tape.grad_buffer(pb);
            for (std::size_t c = 0; c < g.channels; ++c) {
              S acc = 0;
              for (std::size_t q = 0; q < plane; ++q) acc += go[c * plane + q];
              gb[c] += acc;
            }
          }
          if (pi < 0 && pk < 0) continue;
          detail::im2col(go, g, gcol.data());
          if (pi >= 0) {
            detail::gemm(tape.grad_buffer(pi).data() + i * cin * p, true, wmat, cin, k, false, gcol.data(), k, p, false);
          }
          if (pk >= 0) {
            detail::gemm(tape.grad_buffer(pk).data(), true, input.values().data() + i * cin * p, cin, p, false, gcol.data(), k, p,
                         true);
          }
        }
      });
}

/// 2x2 max pooling with stride 2. Ties go to the first element in row-major
/// window order, which also receives the whole gradient.
template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& input) {
  if (input.rank() != 4) throw ShapeError("maxpool2d: input must be rank 4, got " + to_string(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool2d: odd spatial dimension in " + to_string(input.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<S> out(n * c * oh * ow);
  std::vector<std::size_t> arg(out.size());
  auto xv = input.values();
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t base = plane * h * w + 2 * y * w + 2 * x;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int q = 1; q < 4; ++q)
          if (xv[cand[q]] > xv[best]) best = cand[q];
        const std::size_t o = (plane * oh + y) * ow + x;
        out[o] = xv[best];
        arg[o] = best;
      }
  Tensor<S> result({n, c, oh, ow}, std::move(out));
  if (!input.recorded()) return result;
  const int pi = input.node();
  return detail::finish<S>("maxpool2d", result, {&input}, [pi, arg = std::move(arg)](std::span<const S> g, Tape<S>& tape) {
    auto gi = tape.grad_buffer(pi);
    for (std::size_t o = 0; o < g.size(); ++o) gi[arg[o]] += g[o];
  });
}

/// Per-(sample, channel) normalisation over the spatial dims followed by a
/// per-channel affine map. gain and shift have shape [C].
template <typename S>
Tensor<S> instance_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& shift, S eps = S(1e-5)) {
  if (x.rank() != 4) throw ShapeError("instance_norm: input must be rank 4, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gain.numel() != c || shift.numel() != c) {
    throw ShapeError("instance_norm: gain/shift " + to_string(gain.shape()) + "/" + to_string(shift.shape()) +
                     " do not match " + std::to_string(c) + " channels");
  }
  auto xv = x.values();
  auto gv = gain.values();
  auto sv = shift.values();
  std::vector<S> xhat(x.numel());
  std::vector<S> inv_std(n * c);
  std::vector<S> out(x.numel());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const S* src = xv.data() + plane * hw;
    double m = 0;
    for (std::size_t q = 0; q < hw; ++q) m += src[q];
    m /= static_cast<double>(hw);
    double var = 0;
    for (std::size_t q = 0; q < hw; ++q) var += (src[q] - m) * (src[q] - m);
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[plane] = static_cast<S>(is);
    const std::size_t ch = plane % c;
    for (std::size_t q = 0; q < hw; ++q) {
      const S xh = static_cast<S>((src[q] - m) * is);
      xhat[plane * hw + q] = xh;
      out[plane * hw + q] = gv[ch] * xh + sv[ch];
    }
  }
  Tensor<S> result(x.shape(), std::move(out));
  if (!x.recorded() && !gain.recorded() && !shift.recorded()) return result;
  const int px = x.recorded() ? x.node() : -1;
  const int pg = gain.recorded() ? gain.node() : -1;
  const int ps = shift.recorded() ? shift.node() : -1;
  return detail::finish<S>(
      "instance_norm", result, {&x, &gain, &shift},
      [gain, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, px, pg, ps](std::span<const S> g,
                                                                                        Tape<S>& tape) {
        auto gv = gain.values();
        for (std::size_t plane = 0; plane < n * c; ++plane) {
          const std::size_t ch = plane % c;
          const S* go = g.data() + plane * hw;
          const S* xh = xhat.data() + plane * hw;
          double sum_g = 0, sum_gx = 0;
          for (std::size_t q = 0; q < hw; ++q) {
            sum_g += go[q];
            sum_gx += static_cast<double>(go[q]) * xh[q];
          }
          if (pg >= 0) tape.grad_buffer(pg)[ch] += static_cast<S>(sum_gx);
          if (ps >= 0) tape.grad_buffer(ps)[ch] += static_cast<S>(sum_g);
          if (px >= 0) {
            S* gx = tape.grad_buffer(px).data() + plane * hw;
            const double mg = sum_g / static_cast<double>(hw), mgx = sum_gx / static_cast<double>(hw);
            const double k = static_cast<double>(gv[ch]) * inv_std[plane];
            for (std::size_t q = 0; q < hw; ++q) gx[q] += static_cast<S>(k * (go[q] - mg - xh[q] * mgx));
          }
        }
      });
}

}  // namespace unetgan
