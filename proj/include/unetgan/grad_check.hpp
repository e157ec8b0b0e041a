#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "unetgan/tensor.hpp"

namespace unetgan {

namespace detail {
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}
}  // namespace detail

/// Largest relative disagreement between reverse-mode gradients of the scalar
/// f at x and central differences with step h, over every coordinate of x.
template <typename S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, const Tensor<S>& x, S h) {
  Tape<S> tape;
  Tensor<S> watched = tape.watch(x);
  tape.backward(f(watched));
  const Tensor<S> analytic = *watched.grad();

  double worst = 0;
  std::vector<S> probe = x.vec();
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const S orig = probe[i];
    probe[i] = orig + h;
    const double up = f(Tensor<S>(x.shape(), probe)).item();
    probe[i] = orig - h;
    const double down = f(Tensor<S>(x.shape(), probe)).item();
    probe[i] = orig;
    worst = std::max(worst, detail::relative_error(analytic[i], (up - down) / (2 * static_cast<double>(h))));
  }
  return worst;
}

/// Same check for parameters: `loss` builds the scalar through the supplied
/// Graph. At most `max_coords` randomly chosen coordinates per parameter are
/// probed (0 = all).
template <typename S>
double grad_check_params(const std::function<Tensor<S>(const Graph<S>&)>& loss, const std::vector<Parameter<S>*>& params,
                         S h, std::size_t max_coords = 0, std::uint64_t seed = 1) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<S> tape;
    tape.backward(loss(Graph<S>{&tape, true}));
  }
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (auto* p : params) {
    std::vector<std::size_t> coords(p->value.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords != 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    const Tensor<S> original = p->value;
    for (std::size_t i : coords) {
      std::vector<S> probe = original.vec();
      probe[i] = original[i] + h;
      p->assign(probe);
      const double up = loss(Graph<S>{}).item();
      probe[i] = original[i] - h;
      p->assign(probe);
      const double down = loss(Graph<S>{}).item();
      p->value = original;
      worst = std::max(worst, detail::relative_error(p->grad[i], (up - down) / (2 * static_cast<double>(h))));
    }
  }
  return worst;
}

}  // namespace unetgan
