#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "unetgan/ops.hpp"

namespace unetgan {

/// Stabilisers, exponents and window of the structural similarity index.
/// Defaults assume intensities in [0, 1].
struct SsimParams {
  double c1 = 1e-4;    // (0.01 L)^2
  double c2 = 9e-4;    // (0.03 L)^2
  double c3 = 4.5e-4;  // c2 / 2
  double alpha = 0.1;
  double beta = 0.1;
  double gamma = 1.0;
  std::size_t window = 7;
  double structure_floor = 1e-6;

  void validate(std::size_t height, std::size_t width) const {
    if (!(c1 > 0 && c2 > 0 && c3 > 0)) throw DomainError("ssim: stabilisers c1, c2, c3 must be positive");
    if (window < 3 || window % 2 == 0) throw DomainError("ssim: window must be odd and >= 3");
    if (window > height || window > width) {
      throw ShapeError("ssim: window " + std::to_string(window) + " larger than image " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
  }
};

/// Per-window statistics and the three similarity terms, row-major over the
/// valid window positions (stride 1).
struct SsimComponents {
  std::size_t rows = 0, cols = 0;
  std::vector<double> mu_x, mu_y, var_x, var_y, cov_xy;
  std::vector<double> l, c, s;
};

namespace detail {

struct ImageDims {
  std::size_t count, height, width;
};

template <typename S>
ImageDims image_dims(const Tensor<S>& t) {
  if (t.rank() < 2) throw ShapeError("expected an image tensor, got " + to_string(t.shape()));
  const std::size_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  if (t.rank() == 4 && t.dim(1) != 1) throw ShapeError("expected single-channel images, got " + to_string(t.shape()));
  return {t.numel() / (h * w), h, w};
}

// Window sums over every valid position of a side x side window.
inline std::vector<double> box_sum(const double* img, std::size_t h, std::size_t w, std::size_t side) {
  const std::size_t oh = h - side + 1, ow = w - side + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t k = 0; k < side; ++k) acc += img[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t k = 0; k < side; ++k) acc += rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

// Adjoint of box_sum: each pixel collects the values of all windows covering it.
inline std::vector<double> box_sum_adjoint(const std::vector<double>& g, std::size_t h, std::size_t w, std::size_t side) {
  const std::size_t oh = h - side + 1, ow = w - side + 1;
  std::vector<double> cols(h * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t k = 0; k < side; ++k) cols[(y + k) * ow + x] += g[y * ow + x];
  std::vector<double> out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t k = 0; k < side; ++k) out[y * w + x + k] += cols[y * ow + x];
  return out;
}

inline SsimComponents ssim_components_raw(const double* x, const double* y, std::size_t h, std::size_t w,
                                          const SsimParams& p) {
  p.validate(h, w);
  const std::size_t n = h * w;
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const double area = static_cast<double>(p.window * p.window);
  SsimComponents out;
  out.rows = h - p.window + 1;
  out.cols = w - p.window + 1;
  out.mu_x = box_sum(x, h, w, p.window);
  out.mu_y = box_sum(y, h, w, p.window);
  auto sxx = box_sum(xx.data(), h, w, p.window);
  auto syy = box_sum(yy.data(), h, w, p.window);
  auto sxy = box_sum(xy.data(), h, w, p.window);
  const std::size_t m = out.mu_x.size();
  out.var_x.resize(m);
  out.var_y.resize(m);
  out.cov_xy.resize(m);
  out.l.resize(m);
  out.c.resize(m);
  out.s.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double mx = out.mu_x[k] / area, my = out.mu_y[k] / area;
    out.mu_x[k] = mx;
    out.mu_y[k] = my;
    out.var_x[k] = std::max(0.0, sxx[k] / area - mx * mx);
    out.var_y[k] = std::max(0.0, syy[k] / area - my * my);
    out.cov_xy[k] = sxy[k] / area - mx * my;
    const double q = std::sqrt(out.var_x[k] * out.var_y[k]);
    // Written as 1 - (a-b)^2/(a^2+b^2+c) so equal statistics give exactly 1.
    const double dm = mx - my, ds = std::sqrt(out.var_x[k]) - std::sqrt(out.var_y[k]);
    out.l[k] = 1.0 - dm * dm / (mx * mx + my * my + p.c1);
    out.c[k] = 1.0 - ds * ds / (out.var_x[k] + out.var_y[k] + p.c2);
    out.s[k] = (out.cov_xy[k] + p.c3) / (q + p.c3);
  }
  return out;
}

}  // namespace detail

/// Luminance, contrast and structure maps of two equal-shape single images.
template <typename S>
SsimComponents ssim_components(const Tensor<S>& x, const Tensor<S>& y, const SsimParams& p = {}) {
  detail::require_same_shape("ssim_components", x, y);
  const auto d = detail::image_dims(x);
  if (d.count != 1) throw ShapeError("ssim_components: expected a single image, got " + to_string(x.shape()));
  std::vector<double> xv(x.values().begin(), x.values().end()), yv(y.values().begin(), y.values().end());
  return detail::ssim_components_raw(xv.data(), yv.data(), d.height, d.width, p);
}

/// Mean over windows of l^alpha * c^beta * s^gamma, with s clamped to
/// [structure_floor, 1]. Returns one value per image of the batch (shape [N])
/// and is differentiable with respect to both inputs.
template <typename S>
Tensor<S> ssim(const Tensor<S>& x, const Tensor<S>& y, const SsimParams& p = {}) {
  detail::require_same_shape("ssim", x, y);
  const auto d = detail::image_dims(x);
  p.validate(d.height, d.width);
  const std::size_t plane = d.height * d.width;

  std::vector<SsimComponents> comps(d.count);
  std::vector<std::vector<double>> maps(d.count);
  std::vector<S> values(d.count);
  for (std::size_t i = 0; i < d.count; ++i) {
    std::vector<double> xv(x.values().begin() + i * plane, x.values().begin() + (i + 1) * plane);
    std::vector<double> yv(y.values().begin() + i * plane, y.values().begin() + (i + 1) * plane);
    comps[i] = detail::ssim_components_raw(xv.data(), yv.data(), d.height, d.width, p);
    const auto& cm = comps[i];
    maps[i].resize(cm.l.size());
    double acc = 0;
    for (std::size_t k = 0; k < cm.l.size(); ++k) {
      const double sc = std::clamp(cm.s[k], p.structure_floor, 1.0);
      maps[i][k] = std::pow(cm.l[k], p.alpha) * std::pow(cm.c[k], p.beta) * std::pow(sc, p.gamma);
      acc += maps[i][k];
    }
    values[i] = static_cast<S>(acc / static_cast<double>(cm.l.size()));
  }
  Tensor<S> out({d.count}, std::move(values));
  if (!x.recorded() && !y.recorded()) return out;

  const int px = x.recorded() ? x.node() : -1;
  const int py = y.recorded() ? y.node() : -1;
  return detail::finish<S>(
      "ssim", out, {&x, &y},
      [x, y, p, d, plane, comps = std::move(comps), maps = std::move(maps), px, py](std::span<const S> g, Tape<S>& tape) {
        const double area = static_cast<double>(p.window * p.window);
        for (std::size_t i = 0; i < d.count; ++i) {
          const auto& cm = comps[i];
          const std::size_t m = cm.l.size();
          const double gw = static_cast<double>(g[i]) / static_cast<double>(m);
          // Adjoints with respect to window moments: mean, E[x^2], E[xy] (and y counterparts).
          std::vector<double> g_mx(m), g_my(m), g_xx(m), g_yy(m), g_xy(m);
          for (std::size_t k = 0; k < m; ++k) {
            const double val = maps[i][k];
            const double mx = cm.mu_x[k], my = cm.mu_y[k], vx = cm.var_x[k], vy = cm.var_y[k];
            const double sx = std::sqrt(vx), sy = std::sqrt(vy), q = sx * sy;
            const double gl = gw * p.alpha * val / cm.l[k];
            const double gc = gw * p.beta * val / cm.c[k];
            const bool s_free = cm.s[k] >= p.structure_floor && cm.s[k] <= 1.0;
            const double gs = s_free ? gw * p.gamma * val / cm.s[k] : 0.0;

            const double b = mx * mx + my * my + p.c1;
            const double dl_dmx = 2 * (my - cm.l[k] * mx) / b;
            const double dl_dmy = 2 * (mx - cm.l[k] * my) / b;
            const double den_c = vx + vy + p.c2;
            const double gq = gc * 2 / den_c - gs * cm.s[k] / (q + p.c3);
            double gvx = -gc * cm.c[k] / den_c;
            double gvy = gvx;
            if (sx > 0) gvx += gq * sy / (2 * sx);
            if (sy > 0) gvy += gq * sx / (2 * sy);
            const double gcov = gs / (q + p.c3);

            g_xx[k] = gvx;
            g_yy[k] = gvy;
            g_xy[k] = gcov;
            g_mx[k] = gl * dl_dmx - 2 * mx * gvx - my * gcov;
            g_my[k] = gl * dl_dmy - 2 * my * gvy - mx * gcov;
          }
          const auto a_mx = detail::box_sum_adjoint(g_mx, d.height, d.width, p.window);
          const auto a_my = detail::box_sum_adjoint(g_my, d.height, d.width, p.window);
          const auto a_xx = detail::box_sum_adjoint(g_xx, d.height, d.width, p.window);
          const auto a_yy = detail::box_sum_adjoint(g_yy, d.height, d.width, p.window);
          const auto a_xy = detail::box_sum_adjoint(g_xy, d.height, d.width, p.window);
          auto xv = x.values();
          auto yv = y.values();
          if (px >= 0) {
            auto gx = tape.grad_buffer(px);
            for (std::size_t q = 0; q < plane; ++q) {
              const double xi = xv[i * plane + q], yi = yv[i * plane + q];
              gx[i * plane + q] += static_cast<S>((a_mx[q] + 2 * xi * a_xx[q] + yi * a_xy[q]) / area);
            }
          }
          if (py >= 0) {
            auto gy = tape.grad_buffer(py);
            for (std::size_t q = 0; q < plane; ++q) {
              const double xi = xv[i * plane + q], yi = yv[i * plane + q];
              gy[i * plane + q] += static_cast<S>((a_my[q] + 2 * yi * a_yy[q] + xi * a_xy[q]) / area);
            }
          }
        }
      });
}

template <typename S>
Tensor<S> mse(const Tensor<S>& x, const Tensor<S>& y) {
  detail::require_same_shape("mse", x, y);
  return mean(square(sub(x, y)));
}

// ---------------------------------------------------------------------------
// Overlap

struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> labels;  // row-major

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::vector<std::uint8_t> l) : height(h), width(w), labels(std::move(l)) {
    if (labels.size() != h * w) throw ShapeError("labelmap: size does not match " + std::to_string(h) + "x" + std::to_string(w));
  }
  bool operator==(const LabelMap&) const = default;
};

namespace detail {
inline void check_labelmaps(const LabelMap& a, const LabelMap& b, std::size_t n_classes) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("dice: labelmap shapes differ (" + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
  for (const auto* m : {&a, &b})
    for (auto v : m->labels)
      if (v >= n_classes) throw DomainError("dice: label " + std::to_string(v) + " outside 0.." + std::to_string(n_classes - 1));
}
}  // namespace detail

/// 2|P ∩ G| / (|P| + |G|) for one class; 1 when the class is absent from both.
inline double dice(const LabelMap& pred, const LabelMap& gt, std::size_t class_id, std::size_t n_classes = 3) {
  detail::check_labelmaps(pred, gt, n_classes);
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool a = pred.labels[i] == class_id, b = gt.labels[i] == class_id;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

/// Dice averaged over classes 1..n_classes-1.
inline double mean_foreground_dice(const LabelMap& pred, const LabelMap& gt, std::size_t n_classes = 3) {
  double acc = 0;
  for (std::size_t k = 1; k < n_classes; ++k) acc += dice(pred, gt, k, n_classes);
  return acc / static_cast<double>(n_classes - 1);
}

}  // namespace unetgan
