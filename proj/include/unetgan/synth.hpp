#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "unetgan/store.hpp"

namespace unetgan {

struct PhantomParams {
  std::size_t side = 64;
  double radius_min = 6, radius_max = 12;        // blood pool
  double thickness_min = 3, thickness_max = 6;   // myocardium ring
  double jitter = 8;                             // centre offset, +-px
  double background_lo = 0.2, background_hi = 0.5;
  double myocardium = 0.35, myocardium_spread = 0.05;
  double blood_pool = 0.85, blood_pool_spread = 0.05;

  void validate() const {
    const double reach = radius_max + thickness_max + jitter;
    if (2 * reach >= double(side)) throw DomainError("phantom: structures do not fit inside the image");
    if (radius_min <= 0 || thickness_min <= 0) throw DomainError("phantom: radius and thickness must be positive");
  }
};

struct Phantom {
  Tensor<float> image;  // 1 x side x side
  LabelMap labels;      // 0 background, 1 myocardium, 2 blood pool
};

struct VendorProfile {
  std::string name;
  double gain = 1, gamma_exp = 1, bias_amp = 0, noise_sigma = 0;
  int blur = 0;
};

/// A plays the source vendor, B a strong shift and C a mild one. B brightens
/// (gamma < 1): a darkening gamma is mostly undone by instance norm.
inline std::vector<VendorProfile> builtin_profiles() {
  return {{"A", 1.0, 1.0, 0.05, 0.01, 0}, {"B", 1.0, 0.45, 0.2, 0.04, 0}, {"C", 1.15, 0.9, 0.1, 0.02, 0}};
}

inline VendorProfile builtin_profile(const std::string& name) {
  for (auto& p : builtin_profiles())
    if (p.name == name) return p;
  throw DomainError("unknown vendor profile '" + name + "'");
}

/// Independent stream for (seed, sample index, purpose).
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index, std::uint32_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index), std::uint32_t(index >> 32), stream};
  return std::mt19937_64(seq);
}

namespace detail {

// Sum of a few low-frequency plane waves, scaled into [-1, 1].
inline std::vector<double> smooth_field(std::mt19937_64& rng, std::size_t side, int waves = 3, double max_cycles = 1.5) {
  std::uniform_real_distribution<double> freq(-max_cycles, max_cycles), phase(0, 2 * std::numbers::pi), amp(0.3, 1.0);
  std::vector<double> fx(waves), fy(waves), ph(waves), a(waves);
  double norm = 0;
  for (int k = 0; k < waves; ++k) {
    fx[k] = freq(rng);
    fy[k] = freq(rng);
    ph[k] = phase(rng);
    a[k] = amp(rng);
    norm += a[k];
  }
  std::vector<double> f(side * side);
  const double w = 2 * std::numbers::pi / double(side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      double v = 0;
      for (int k = 0; k < waves; ++k) v += a[k] * std::cos(w * (fx[k] * double(x) + fy[k] * double(y)) + ph[k]);
      f[y * side + x] = v / norm;
    }
  return f;
}

// 3x3 mean with edge replication.
inline std::vector<double> box_blur3(const std::vector<double>& img, std::size_t side) {
  std::vector<double> out(img.size());
  const auto n = static_cast<std::ptrdiff_t>(side);
  for (std::ptrdiff_t y = 0; y < n; ++y)
    for (std::ptrdiff_t x = 0; x < n; ++x) {
      double acc = 0;
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const auto yy = std::clamp<std::ptrdiff_t>(y + dy, 0, n - 1), xx = std::clamp<std::ptrdiff_t>(x + dx, 0, n - 1);
          acc += img[std::size_t(yy * n + xx)];
        }
      out[std::size_t(y * n + x)] = acc / 9.0;
    }
  return out;
}

inline Tensor<float> image_tensor(const std::vector<double>& v, std::size_t side) {
  std::vector<float> f(v.begin(), v.end());
  return Tensor<float>({1, side, side}, std::move(f));
}

}  // namespace detail

/// Disk (blood pool) inside a ring (myocardium) over a smooth background.
inline Phantom generate_phantom(std::mt19937_64& rng, const PhantomParams& p = {}) {
  p.validate();
  std::uniform_real_distribution<double> u(0, 1);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double half = double(p.side) / 2;
  const double cx = half + in(-p.jitter, p.jitter), cy = half + in(-p.jitter, p.jitter);
  const double r = in(p.radius_min, p.radius_max);
  const double t = in(p.thickness_min, p.thickness_max);
  const double myo = in(p.myocardium - p.myocardium_spread, p.myocardium + p.myocardium_spread);
  const double pool = in(p.blood_pool - p.blood_pool_spread, p.blood_pool + p.blood_pool_spread);
  const auto texture = detail::smooth_field(rng, p.side);

  const double mid = (p.background_lo + p.background_hi) / 2, span = (p.background_hi - p.background_lo) / 2;
  std::vector<double> img(p.side * p.side);
  std::vector<std::uint8_t> labels(p.side * p.side);
  for (std::size_t y = 0; y < p.side; ++y)
    for (std::size_t x = 0; x < p.side; ++x) {
      // Pixel centres at integer + 0.5.
      const double d = std::hypot(double(x) + 0.5 - cx, double(y) + 0.5 - cy);
      const std::size_t k = y * p.side + x;
      if (d <= r) {
        labels[k] = 2;
        img[k] = pool;
      } else if (d <= r + t) {
        labels[k] = 1;
        img[k] = myo;
      } else {
        labels[k] = 0;
        img[k] = mid + span * texture[k];
      }
    }
  return {detail::image_tensor(detail::box_blur3(img, p.side), p.side), LabelMap(p.side, p.side, std::move(labels))};
}

/// clamp(gain * base^gamma * (1 + bias * B) + noise, 0, 1), then the optional blur.
inline Tensor<float> apply_vendor(const Tensor<float>& base, const VendorProfile& prof, std::mt19937_64& rng) {
  if (base.rank() != 3 || base.dim(0) != 1 || base.dim(1) != base.dim(2)) {
    throw ShapeError("apply_vendor: expected a 1xNxN image, got " + to_string(base.shape()));
  }
  const std::size_t side = base.dim(1);
  const auto field = detail::smooth_field(rng, side, 2, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> out(base.numel());
  for (std::size_t k = 0; k < out.size(); ++k) {
    double v = prof.gain * std::pow(static_cast<double>(base[k]), prof.gamma_exp) * (1.0 + prof.bias_amp * field[k]);
    if (prof.noise_sigma > 0) v += prof.noise_sigma * noise(rng);
    out[k] = std::clamp(v, 0.0, 1.0);
  }
  for (int i = 0; i < prof.blur; ++i) out = detail::box_blur3(out, side);
  return detail::image_tensor(out, side);
}

/// Phantom i of a dataset seeded by `seed`, seen through `prof`. The phantom
/// does not depend on the profile, so the same (seed, i) gives the same
/// anatomy under every vendor.
inline Phantom make_sample(std::uint64_t seed, std::uint64_t index, const VendorProfile& prof, const PhantomParams& p = {}) {
  auto geometry = sample_rng(seed, index, 0);
  Phantom ph = generate_phantom(geometry, p);
  auto acquisition = sample_rng(seed, index, 1 + static_cast<std::uint32_t>(fnv1a(prof.name.data(), prof.name.size()) & 0xFFFF));
  ph.image = apply_vendor(ph.image, prof, acquisition);
  return ph;
}

inline std::string sample_id(const std::string& domain, std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return domain + "_" + buf;
}

/// Writes n samples plus manifest.json into out_dir.
inline DatasetManifest generate_dataset(std::uint64_t seed, const VendorProfile& prof, std::size_t n, const fs::path& out_dir,
                                        const std::string& domain = "", const PhantomParams& p = {}) {
  if (n == 0) throw DomainError("generate_dataset: n must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw FormatError("generate_dataset: cannot create " + out_dir.string());
  DatasetManifest m;
  m.domain = domain.empty() ? prof.name : domain;
  m.profile = prof.name;
  m.seed = seed;
  m.root = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    const Phantom ph = make_sample(seed, i, prof, p);
    add_sample(m, sample_id(m.domain, i), ph.image, ph.labels);
  }
  write_manifest(m);
  m.sort();
  return m;
}

}  // namespace unetgan
