#pragma once

#include <algorithm>
#include <ostream>
#include <string>

#include "unetgan/metrics.hpp"
#include "unetgan/nets.hpp"

namespace unetgan {

struct LossWeights {
  double lambda = 10.0;   // cycle
  double lambda1 = 15.0;  // segmentation features
  double lambda2 = 5.0;   // ssim

  void validate() const {
    if (lambda < 0 || lambda1 < 0 || lambda2 < 0) throw DomainError("loss weights must be non-negative");
  }
};

struct AdvOptions {
  // E[log D(x)] + E[1 - log D(G(y))] instead of the usual log(1 - D) form.
  // Unbounded; comparison runs only.
  bool literal_form = false;
  double clamp_eps = 1e-7;
};

namespace detail {
template <typename S>
Tensor<S> clamped_log(const Tensor<S>& scores, double eps) {
  return log(clamp(scores, static_cast<S>(eps), static_cast<S>(1.0 - eps)));
}
}  // namespace detail

/// Discriminator loss on score maps: -mean log D(real) - mean log(1 - D(fake)).
template <typename S>
Tensor<S> adversarial_d_loss(const Tensor<S>& real_scores, const Tensor<S>& fake_scores, const AdvOptions& o = {}) {
  const Tensor<S> real_term = scale(mean(detail::clamped_log(real_scores, o.clamp_eps)), S(-1));
  if (o.literal_form) {
    // D maximises 1 - log D(fake), i.e. minimises log D(fake) - 1.
    return add(real_term, add_scalar(mean(detail::clamped_log(fake_scores, o.clamp_eps)), S(-1)));
  }
  return sub(real_term, mean(detail::clamped_log(one_minus(fake_scores), o.clamp_eps)));
}

/// Non-saturating generator loss: -mean log D(fake).
template <typename S>
Tensor<S> adversarial_g_loss(const Tensor<S>& fake_scores, const AdvOptions& o = {}) {
  const Tensor<S> nll = scale(mean(detail::clamped_log(fake_scores, o.clamp_eps)), S(-1));
  return o.literal_form ? add_scalar(nll, S(1)) : nll;
}

/// Runs D on both batches. `fake` should already be detached from the generator.
template <typename S>
Tensor<S> adversarial_d_loss(DiscriminatorModel<S>& d, const Graph<S>& g, const Tensor<S>& real, const Tensor<S>& fake,
                             const AdvOptions& o = {}) {
  return adversarial_d_loss(d.forward(real, g), d.forward(fake, g), o);
}

template <typename S>
Tensor<S> adversarial_g_loss(DiscriminatorModel<S>& d, const Graph<S>& g, const Tensor<S>& fake, const AdvOptions& o = {}) {
  return adversarial_g_loss(d.forward(fake, g), o);
}

template <typename S>
Tensor<S> cycle_loss(const Tensor<S>& x, const Tensor<S>& reconstructed) {
  return mse(x, reconstructed);
}

/// Batch mean of (1 - ssim(x_i, y_i))^2.
template <typename S>
Tensor<S> ssim_image_loss(const Tensor<S>& x, const Tensor<S>& y, const SsimParams& p = {}) {
  return mean(square(one_minus(ssim(x, y, p))));
}

/// Sum over the configured taps of mse(f_t(original), f_t(translated)). The
/// Unet is run frozen on g's tape; the original's features are constants.
template <typename S>
Tensor<S> unet_feature_loss(UnetModel<S>& unet, const Graph<S>& g, const Tensor<S>& original, const Tensor<S>& translated) {
  const auto& taps = unet.config().taps;
  if (taps.empty()) throw ShapeError("unet_feature_loss: no feature taps configured");
  detail::require_same_shape("unet_feature_loss", original, translated);
  const int stop = *std::max_element(taps.begin(), taps.end());
  const auto ref = unet.forward(original.detach(), Graph<S>{}, stop);
  const auto got = unet.forward(translated, Graph<S>{g.tape, false}, stop);
  Tensor<S> total = mse(got.taps[0], ref.taps[0]);
  for (std::size_t i = 1; i < taps.size(); ++i) total = add(total, mse(got.taps[i], ref.taps[i]));
  return total;
}

// ---------------------------------------------------------------------------
// Composites

/// Generator-side scalars of one step, already summed over both directions.
template <typename S>
struct GeneratorParts {
  Tensor<S> adv_g = Tensor<S>::scalar(0);
  Tensor<S> cycle = Tensor<S>::scalar(0);
  Tensor<S> unet_feature = Tensor<S>::scalar(0);
  Tensor<S> ssim_loss = Tensor<S>::scalar(0);
};

struct LossReport {
  std::size_t step = 0;
  double adv_g = 0, adv_d = 0, cycle = 0, ssim_loss = 0, unet_feature = 0, total = 0;

  static const char* csv_header() { return "step,adv_G,adv_D,cycle,ssim_loss,unet_feature,total"; }
  void write_csv_row(std::ostream& os) const {
    const auto old = os.precision(10);
    os << step << ',' << adv_g << ',' << adv_d << ',' << cycle << ',' << ssim_loss << ',' << unet_feature << ',' << total
       << '\n';
    os.precision(old);
  }
};

/// adv_G + lambda * cycle.
template <typename S>
Tensor<S> cyclegan_total(const GeneratorParts<S>& parts, const LossWeights& w) {
  w.validate();
  return add(parts.adv_g, scale(parts.cycle, static_cast<S>(w.lambda)));
}

/// adv_G + lambda * cycle + lambda1 * unet_feature + lambda2 * ssim_loss. The
/// report total is recomputed in double from the logged components.
template <typename S>
std::pair<Tensor<S>, LossReport> unetgan_total(const GeneratorParts<S>& parts, const LossWeights& w) {
  Tensor<S> total = add(cyclegan_total(parts, w), add(scale(parts.unet_feature, static_cast<S>(w.lambda1)),
                                                      scale(parts.ssim_loss, static_cast<S>(w.lambda2))));
  LossReport r;
  r.adv_g = parts.adv_g.item();
  r.cycle = parts.cycle.item();
  r.unet_feature = parts.unet_feature.item();
  r.ssim_loss = parts.ssim_loss.item();
  r.total = r.adv_g + w.lambda * r.cycle + w.lambda1 * r.unet_feature + w.lambda2 * r.ssim_loss;
  return {total, r};
}

}  // namespace unetgan
