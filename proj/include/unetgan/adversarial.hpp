#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "unetgan/trainers.hpp"

namespace unetgan {

struct AttackConfig {
  double epsilon = 0.01;  // intensity units
  std::size_t batch = 10;

  void validate() const {
    if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw DomainError("attack: epsilon must be >= 0");
    if (batch == 0) throw DomainError("attack: batch must be >= 1");
  }
};

/// d(mean cross-entropy)/d(images) with the Unet frozen.
template <typename S>
Tensor<S> input_gradient(UnetModel<S>& unet, const Tensor<S>& images, std::span<const std::uint8_t> labels) {
  Tape<S> tape;
  const Tensor<S> x = tape.watch(images);
  const Tensor<S> loss = softmax_cross_entropy(*unet.forward(x, Graph<S>{&tape, false}).logits, labels);
  tape.backward(loss);
  return *x.grad();
}

/// x' = clamp(x + eps * sign(grad), 0, 1) with sign(0) = 0.
template <typename S>
Tensor<S> fgsm(UnetModel<S>& unet, const Tensor<S>& images, std::span<const std::uint8_t> labels, const AttackConfig& cfg = {}) {
  cfg.validate();
  const Tensor<S> grad = input_gradient(unet, images, labels);
  std::vector<S> out = images.vec();
  const S eps = static_cast<S>(cfg.epsilon);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const S g = grad[k];
    const S step = g > S(0) ? eps : (g < S(0) ? -eps : S(0));
    out[k] = std::clamp(out[k] + step, S(0), S(1));
  }
  return Tensor<S>(images.shape(), std::move(out));
}

struct AttackRow {
  std::string id;
  double eps = 0, dice_clean = 0, dice_adv = 0;
};

namespace detail {

// image | perturbation (x20 around mid-grey) | adversarial prediction on the
// adversarial image, side by side.
template <typename S>
std::string attack_triptych(const Tensor<S>& clean, const Tensor<S>& adv, const LabelMap& pred) {
  const std::size_t h = pred.height, w = pred.width;
  const auto edge = label_contours(pred);
  std::vector<std::uint8_t> px(h * 3 * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t k = y * w + x;
      const double c = static_cast<double>(clean[k]), a = static_cast<double>(adv[k]);
      std::uint8_t* row = px.data() + y * 3 * w;
      row[x] = to_byte(c);
      row[w + x] = to_byte(0.5 + 20.0 * (a - c));
      row[2 * w + x] = edge[k] ? std::uint8_t(255) : to_byte(a);
    }
  return encode_pgm(h, 3 * w, px);
}

}  // namespace detail

inline void write_attack_csv(const fs::path& path, const std::vector<AttackRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "id,eps,dice_clean,dice_adv\n";
  for (const auto& r : rows) os << r.id << ',' << r.eps << ',' << r.dice_clean << ',' << r.dice_adv << '\n';
  detail::write_file(path, os.str());
}

/// Per-sample Dice before and after the attack. With a non-empty out_dir,
/// writes attack.csv and one <id>_attack.pgm triptych per sample.
template <typename S>
std::vector<AttackRow> attack_report(UnetModel<S>& unet, const ImageSet<S>& data, const AttackConfig& cfg = {},
                                     const fs::path& out_dir = {}) {
  cfg.validate();
  if (data.size() == 0) throw DomainError("attack_report: empty dataset");
  std::vector<AttackRow> rows;
  for (const auto& idx : chunks(iota_indices(data.size()), cfg.batch)) {
    const Tensor<S> x = data.batch(idx);
    const auto labels = data.label_batch(idx);
    const Tensor<S> adv = fgsm(unet, x, labels, cfg);
    const auto clean_pred = predict(unet, x), adv_pred = predict(unet, adv);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const LabelMap gt = data.label(idx[k]);
      const std::size_t n = unet.config().n_classes;
      rows.push_back({data.ids[idx[k]], cfg.epsilon, mean_foreground_dice(clean_pred[k], gt, n), mean_foreground_dice(adv_pred[k], gt, n)});
      if (!out_dir.empty()) {
        const std::size_t plane = data.plane();
        const Tensor<S> c({1, data.height, data.width}, std::vector<S>(x.values().begin() + k * plane, x.values().begin() + (k + 1) * plane));
        const Tensor<S> a({1, data.height, data.width}, std::vector<S>(adv.values().begin() + k * plane, adv.values().begin() + (k + 1) * plane));
        detail::write_file(out_dir / (data.ids[idx[k]] + "_attack.pgm"), detail::attack_triptych(c, a, adv_pred[k]));
      }
    }
  }
  if (!out_dir.empty()) write_attack_csv(out_dir / "attack.csv", rows);
  return rows;
}

template <typename S>
std::vector<AttackRow> attack_report(UnetModel<S>& unet, const DatasetManifest& m, const AttackConfig& cfg = {},
                                     const fs::path& out_dir = {}) {
  return attack_report(unet, load_image_set<S>(m), cfg, out_dir);
}

}  // namespace unetgan
