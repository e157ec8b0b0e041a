#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "unetgan/losses.hpp"
#include "unetgan/store.hpp"
#include "unetgan/synth.hpp"

namespace unetgan {

// ---------------------------------------------------------------------------
// Adam

template <typename S>
struct AdamState {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<std::vector<double>> m, v;

  AdamState() = default;
  AdamState(const ParameterSet<S>& params, double learning_rate) : lr(learning_rate) {
    for (const auto& p : params) {
      m.emplace_back(p.value.numel(), 0.0);
      v.emplace_back(p.value.numel(), 0.0);
    }
  }
};

/// One bias-corrected Adam update from the gradients held in params.
template <typename S>
void adam_step(ParameterSet<S>& params, AdamState<S>& st) {
  if (st.m.size() != params.size()) throw ShapeError("adam_step: state built for a different parameter set");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, double(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (p.grad.size() != m.size()) throw ShapeError("adam_step: gradient size mismatch for " + p.name);
    std::vector<S> w = p.value.vec();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = static_cast<double>(p.grad[k]);
      m[k] = st.beta1 * m[k] + (1 - st.beta1) * g;
      v[k] = st.beta2 * v[k] + (1 - st.beta2) * g * g;
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      w[k] = static_cast<S>(static_cast<double>(w[k]) - st.lr * mhat / (std::sqrt(vhat) + st.eps));
    }
    p.assign(std::move(w));
  }
}

// ---------------------------------------------------------------------------
// In-memory datasets

template <typename S>
struct ImageSet {
  std::vector<std::string> ids;
  std::size_t height = 0, width = 0;
  std::vector<S> pixels;                 // N x H x W
  std::vector<std::uint8_t> labels;      // N x H x W

  std::size_t size() const { return ids.size(); }
  std::size_t plane() const { return height * width; }

  Tensor<S> batch(const std::vector<std::size_t>& idx) const {
    std::vector<S> v;
    v.reserve(idx.size() * plane());
    for (auto i : idx) v.insert(v.end(), pixels.begin() + i * plane(), pixels.begin() + (i + 1) * plane());
    return Tensor<S>({idx.size(), 1, height, width}, std::move(v));
  }
  std::vector<std::uint8_t> label_batch(const std::vector<std::size_t>& idx) const {
    std::vector<std::uint8_t> v;
    v.reserve(idx.size() * plane());
    for (auto i : idx) v.insert(v.end(), labels.begin() + i * plane(), labels.begin() + (i + 1) * plane());
    return v;
  }
  LabelMap label(std::size_t i) const {
    return LabelMap(height, width, std::vector<std::uint8_t>(labels.begin() + i * plane(), labels.begin() + (i + 1) * plane()));
  }
  Tensor<S> image(std::size_t i) const { return batch({i}); }
};

template <typename S>
ImageSet<S> load_image_set(const DatasetManifest& m) {
  if (m.entries.empty()) throw DomainError("dataset " + m.root.string() + " is empty");
  ImageSet<S> set;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Sample s = load_sample(m, i);
    if (i == 0) {
      set.height = s.labels.height;
      set.width = s.labels.width;
    } else if (s.labels.height != set.height || s.labels.width != set.width) {
      throw FormatError(s.id + ": image size differs from the rest of the dataset");
    }
    set.ids.push_back(s.id);
    for (float v : s.image.values()) set.pixels.push_back(static_cast<S>(v));
    set.labels.insert(set.labels.end(), s.labels.labels.begin(), s.labels.labels.end());
  }
  return set;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

inline std::vector<std::vector<std::size_t>> chunks(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch)
    out.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct DiceStats {
  double mean = 0, std = 0;
  std::size_t n = 0;
  std::vector<double> per_sample;
};

inline DiceStats summarize(std::vector<double> scores) {
  DiceStats s;
  s.n = scores.size();
  if (s.n == 0) return s;
  for (double d : scores) s.mean += d;
  s.mean /= double(s.n);
  for (double d : scores) s.std += (d - s.mean) * (d - s.mean);
  s.std = std::sqrt(s.std / double(s.n));  // population
  s.per_sample = std::move(scores);
  return s;
}

template <typename S>
std::vector<LabelMap> predict(UnetModel<S>& unet, const Tensor<S>& images) {
  const Tensor<S> logits = *unet.forward(images, Graph<S>{}).logits;
  const auto flat = argmax_channels(logits);
  const std::size_t h = images.dim(2), w = images.dim(3);
  std::vector<LabelMap> out;
  for (std::size_t i = 0; i < images.dim(0); ++i)
    out.emplace_back(h, w, std::vector<std::uint8_t>(flat.begin() + i * h * w, flat.begin() + (i + 1) * h * w));
  return out;
}

/// mean_foreground_dice of argmax predictions, mean +- std over samples.
template <typename S>
DiceStats evaluate(UnetModel<S>& unet, const ImageSet<S>& data, std::size_t batch = 10) {
  if (data.size() == 0) throw DomainError("evaluate: empty dataset");
  std::vector<double> scores;
  for (const auto& idx : chunks(iota_indices(data.size()), batch)) {
    const auto preds = predict(unet, data.batch(idx));
    for (std::size_t k = 0; k < idx.size(); ++k)
      scores.push_back(mean_foreground_dice(preds[k], data.label(idx[k]), unet.config().n_classes));
  }
  return summarize(std::move(scores));
}

template <typename S>
DiceStats evaluate(UnetModel<S>& unet, const DatasetManifest& m, std::size_t batch = 10) {
  return evaluate(unet, load_image_set<S>(m), batch);
}

// ---------------------------------------------------------------------------
// Segmentation training

struct SegTrainConfig {
  double lr = 1e-4;
  std::size_t batch = 10;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  std::ostream* log = nullptr;

  void validate() const {
    if (!(lr > 0) || batch == 0 || epochs == 0 || eval_every == 0) throw DomainError("segmentation config values must be positive");
  }
};

inline void to_json(json& j, const SegTrainConfig& c) {
  j = json{{"lr", c.lr}, {"batch", c.batch}, {"epochs", c.epochs}, {"seed", c.seed}, {"eval_every", c.eval_every}};
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  std::optional<double> test_dice;
};

template <typename S>
struct SegTrainResult {
  UnetModel<S> unet;  // best test Dice
  DiceStats test;     // of the returned model
  std::size_t best_epoch = 0;
  std::vector<EpochLog> curve;
};

inline void write_curve_csv(const fs::path& path, const std::vector<EpochLog>& curve) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,train_loss,test_dice\n";
  for (const auto& e : curve) {
    os << e.epoch << ',' << e.train_loss << ',';
    if (e.test_dice) os << *e.test_dice;
    os << '\n';
  }
  detail::write_file(path, os.str());
}

/// Minimises pixelwise cross-entropy with Adam on shuffled batches; keeps the
/// checkpoint with the best test Dice. Writes unet.ckpt, curve.csv and
/// config.json into run_dir when it is non-empty.
template <typename S>
SegTrainResult<S> train_segmenter(const ImageSet<S>& train, const ImageSet<S>& test, const SegTrainConfig& cfg,
                                  const fs::path& run_dir = {}, UnetConfig arch = {}) {
  cfg.validate();
  if (train.size() == 0 || test.size() == 0) throw DomainError("train_segmenter: empty dataset");
  UnetModel<S> unet(arch, cfg.seed);
  AdamState<S> adam(unet.params(), cfg.lr);
  std::mt19937_64 rng(cfg.seed ^ 0x5e9a7ULL);

  SegTrainResult<S> res{unet, {}, 0, {}};
  double best = -1;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = iota_indices(train.size());
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t seen = 0;
    for (const auto& idx : chunks(order, cfg.batch)) {
      unet.params().zero_grad();
      Tape<S> tape;
      const auto labels = train.label_batch(idx);
      const Tensor<S> loss = softmax_cross_entropy(*unet.forward(train.batch(idx), Graph<S>{&tape, true}).logits, labels);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw NumericalError("train_segmenter: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                             train.ids[idx.front()]);
      }
      tape.backward(loss);
      adam_step(unet.params(), adam);
      loss_sum += static_cast<double>(loss.item()) * double(idx.size());
      seen += idx.size();
    }
    EpochLog e{epoch, loss_sum / double(seen), std::nullopt};
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      const DiceStats d = evaluate(unet, test);
      e.test_dice = d.mean;
      if (d.mean > best) {
        best = d.mean;
        res.unet = unet;
        res.test = d;
        res.best_epoch = epoch;
      }
    }
    if (cfg.log) {
      *cfg.log << "[seg] epoch " << epoch << " loss " << e.train_loss;
      if (e.test_dice) *cfg.log << " test dice " << *e.test_dice;
      *cfg.log << std::endl;
    }
    res.curve.push_back(e);
  }
  if (!run_dir.empty()) {
    save_checkpoint(run_dir / "unet.ckpt", res.unet, res.best_epoch);
    write_curve_csv(run_dir / "curve.csv", res.curve);
    json j = cfg;
    j["arch"] = arch;
    detail::write_file(run_dir / "config.json", j.dump(2) + "\n");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Pollution

/// Adds seeded N(0, sigma^2) noise to every image, clamps to [0, 1] and writes
/// a new dataset with the same ids and labels.
inline DatasetManifest pollute(const DatasetManifest& m, double sigma, std::uint64_t seed, const fs::path& out_dir) {
  if (sigma < 0) throw DomainError("pollute: sigma must be >= 0");
  DatasetManifest out;
  out.domain = m.domain;
  out.profile = m.profile;
  out.seed = m.seed;
  out.root = out_dir;
  DatasetManifest sorted = m;
  sorted.sort();
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const Sample s = load_sample(sorted, i);
    auto rng = sample_rng(seed, fnv1a(s.id.data(), s.id.size()), 0x901);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<float> v = s.image.vec();
    if (sigma > 0)
      for (auto& x : v) x = static_cast<float>(std::clamp(double(x) + sigma * noise(rng), 0.0, 1.0));
    add_sample(out, s.id, Tensor<float>(s.image.shape(), std::move(v)), s.labels);
  }
  write_manifest(out);
  out.sort();
  return out;
}

// ---------------------------------------------------------------------------
// Translation

template <typename S>
ImageSet<S> translate(GeneratorModel<S>& g, const ImageSet<S>& data, std::size_t batch = 10) {
  ImageSet<S> out = data;
  out.pixels.clear();
  for (const auto& idx : chunks(iota_indices(data.size()), batch)) {
    const Tensor<S> y = g.forward(data.batch(idx), Graph<S>{});
    out.pixels.insert(out.pixels.end(), y.values().begin(), y.values().end());
  }
  return out;
}

/// Applies the generator to every image; ids and labels carry over.
template <typename S>
DatasetManifest translate_dataset(GeneratorModel<S>& g, const DatasetManifest& m, const fs::path& out_dir, std::size_t batch = 10) {
  DatasetManifest sorted = m;
  sorted.sort();
  const ImageSet<S> src = load_image_set<S>(sorted);
  const ImageSet<S> dst = translate(g, src, batch);
  DatasetManifest out;
  out.domain = m.domain + "_translated";
  out.profile = m.profile;
  out.seed = m.seed;
  out.root = out_dir;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const Tensor<S> img = dst.image(i);
    add_sample(out, dst.ids[i], cast<float>(img).reshaped({1, dst.height, dst.width}), dst.label(i));
  }
  write_manifest(out);
  out.sort();
  return out;
}

// ---------------------------------------------------------------------------
// Alternating Unet-GAN training

struct GanTrainConfig {
  double lr = 1e-5;
  std::size_t batch = 4;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  double holdout = 0.1;
  std::uint64_t seed = 1;
  LossWeights weights;
  SsimParams ssim;
  AdvOptions adv;
  std::ostream* log = nullptr;

  void validate() const {
    weights.validate();
    if (!(lr > 0) || batch == 0 || max_epochs == 0 || patience == 0) throw DomainError("gan config values must be positive");
    if (!(holdout > 0 && holdout < 1)) throw DomainError("gan holdout fraction must lie in (0, 1)");
  }
};

inline void to_json(json& j, const GanTrainConfig& c) {
  j = json{{"lr", c.lr},
           {"batch", c.batch},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"holdout", c.holdout},
           {"seed", c.seed},
           {"lambda", c.weights.lambda},
           {"lambda1", c.weights.lambda1},
           {"lambda2", c.weights.lambda2},
           {"ssim_window", c.ssim.window},
           {"ssim_alpha", c.ssim.alpha},
           {"ssim_beta", c.ssim.beta},
           {"ssim_gamma", c.ssim.gamma},
           {"literal_adv", c.adv.literal_form}};
}

template <typename S>
struct GanModels {
  GeneratorModel<S> g_s;  // target -> source
  GeneratorModel<S> g_t;  // source -> target
  DiscriminatorModel<S> d_s;
  DiscriminatorModel<S> d_t;

  static GanModels build(std::uint64_t seed) {
    return {build_generator<S>(seed * 4 + 1), build_generator<S>(seed * 4 + 2), build_discriminator<S>(seed * 4 + 3),
            build_discriminator<S>(seed * 4 + 4)};
  }
};

struct HoldoutLog {
  std::size_t epoch = 0;
  double total = 0;
};

template <typename S>
struct GanTrainResult {
  GanModels<S> models;  // best holdout snapshot
  std::vector<LossReport> steps;
  std::vector<HoldoutLog> holdout;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

namespace detail {

template <typename S>
struct GeneratorPass {
  GeneratorParts<S> parts;
  Tensor<S> fake_s, fake_t;  // G_S(x_t), G_T(x_s)
};

// Generator-side forward for one pair of batches; D scores use whatever
// parameters the discriminators hold at call time.
template <typename S>
GeneratorPass<S> generator_pass(GanModels<S>& m, UnetModel<S>& unet, const Tensor<S>& x_s, const Tensor<S>& x_t, Tape<S>* tape,
                                const GanTrainConfig& cfg) {
  const Graph<S> train{tape, true};
  const Graph<S> frozen{tape, false};
  GeneratorPass<S> p;
  p.fake_s = m.g_s.forward(x_t, train);
  p.fake_t = m.g_t.forward(x_s, train);
  const Tensor<S> rec_s = m.g_s.forward(p.fake_t, train);
  const Tensor<S> rec_t = m.g_t.forward(p.fake_s, train);
  p.parts.adv_g = add(adversarial_g_loss(m.d_s, frozen, p.fake_s, cfg.adv), adversarial_g_loss(m.d_t, frozen, p.fake_t, cfg.adv));
  p.parts.cycle = add(cycle_loss(x_s, rec_s), cycle_loss(x_t, rec_t));
  p.parts.unet_feature = add(unet_feature_loss(unet, frozen, x_t, p.fake_s), unet_feature_loss(unet, frozen, x_s, p.fake_t));
  p.parts.ssim_loss = add(ssim_image_loss(x_t, p.fake_s, cfg.ssim), ssim_image_loss(x_s, p.fake_t, cfg.ssim));
  return p;
}

inline void require_finite(double v, const char* what, std::size_t step) {
  if (!std::isfinite(v)) throw NumericalError(std::string("train_unetgan: non-finite ") + what + " at step " + std::to_string(step));
}

}  // namespace detail

/// Alternates one discriminator step (on detached fakes) and one generator
/// step (against the updated discriminators) per batch pair. An epoch is one
/// pass over the target training images; source batches follow their own
/// seeded shuffle. After each epoch the composite generator loss on the
/// held-out images is measured; training stops after `patience` epochs
/// without improvement and the best snapshot is returned.
template <typename S>
GanTrainResult<S> train_unetgan(const ImageSet<S>& source, const ImageSet<S>& target, UnetModel<S>& unet,
                                const GanTrainConfig& cfg, const fs::path& run_dir = {},
                                const std::type_identity_t<std::function<void(std::size_t epoch, GanModels<S>& current)>>& on_epoch = {}) {
  cfg.validate();
  const std::uint64_t unet_before = unet.params().checksum();
  std::mt19937_64 rng(cfg.seed ^ 0x6a1ULL);

  auto split = [&](const ImageSet<S>& set) {
    auto order = iota_indices(set.size());
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.holdout * double(set.size()))));
    if (n_hold >= set.size()) throw DomainError("train_unetgan: dataset too small for a holdout split");
    std::vector<std::size_t> hold(order.begin(), order.begin() + n_hold), fit(order.begin() + n_hold, order.end());
    std::sort(hold.begin(), hold.end());
    std::sort(fit.begin(), fit.end());
    return std::pair{fit, hold};
  };
  const auto [src_fit, src_hold] = split(source);
  const auto [tgt_fit, tgt_hold] = split(target);

  GanModels<S> m = GanModels<S>::build(cfg.seed);
  AdamState<S> opt_gs(m.g_s.params(), cfg.lr), opt_gt(m.g_t.params(), cfg.lr);
  AdamState<S> opt_ds(m.d_s.params(), cfg.lr), opt_dt(m.d_t.params(), cfg.lr);

  GanTrainResult<S> res{m, {}, {}, 0, false};
  std::ofstream losses_csv;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    losses_csv.open(run_dir / "losses.csv", std::ios::trunc);
    losses_csv << LossReport::csv_header() << '\n';
  }

  auto holdout_total = [&]() {
    // Pair holdout batches cyclically so every held-out image is used.
    const std::size_t n = std::max(src_hold.size(), tgt_hold.size());
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < n; i += cfg.batch) {
      std::vector<std::size_t> bs, bt;
      for (std::size_t k = i; k < std::min(n, i + cfg.batch); ++k) {
        bs.push_back(src_hold[k % src_hold.size()]);
        bt.push_back(tgt_hold[k % tgt_hold.size()]);
      }
      const auto pass = detail::generator_pass<S>(m, unet, source.batch(bs), target.batch(bt), nullptr, cfg);
      total += unetgan_total(pass.parts, cfg.weights).second.total;
      ++batches;
    }
    return total / double(batches);
  };

  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, step = 0;
  std::vector<std::size_t> src_order;
  std::size_t src_pos = 0;
  auto next_source = [&](std::size_t count) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
      if (src_pos == src_order.size()) {
        src_order = src_fit;
        std::shuffle(src_order.begin(), src_order.end(), rng);
        src_pos = 0;
      }
      out.push_back(src_order[src_pos++]);
    }
    return out;
  };

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto tgt_order = tgt_fit;
    std::shuffle(tgt_order.begin(), tgt_order.end(), rng);
    for (const auto& bt : chunks(tgt_order, cfg.batch)) {
      ++step;
      const Tensor<S> x_t = target.batch(bt);
      const Tensor<S> x_s = source.batch(next_source(bt.size()));

      Tape<S> g_tape;
      m.g_s.params().zero_grad();
      m.g_t.params().zero_grad();
      const Graph<S> train{&g_tape, true};
      const Tensor<S> fake_s = m.g_s.forward(x_t, train);
      const Tensor<S> fake_t = m.g_t.forward(x_s, train);

      // (1) discriminators on detached fakes
      m.d_s.params().zero_grad();
      m.d_t.params().zero_grad();
      double adv_d = 0;
      {
        Tape<S> d_tape;
        const Graph<S> dg{&d_tape, true};
        const Tensor<S> loss = add(adversarial_d_loss(m.d_s, dg, x_s, fake_s.detach(), cfg.adv),
                                   adversarial_d_loss(m.d_t, dg, x_t, fake_t.detach(), cfg.adv));
        adv_d = static_cast<double>(loss.item());
        detail::require_finite(adv_d, "discriminator loss", step);
        d_tape.backward(loss);
      }
      adam_step(m.d_s.params(), opt_ds);
      adam_step(m.d_t.params(), opt_dt);

      // (2) generators against the updated discriminators
      const Graph<S> frozen{&g_tape, false};
      GeneratorParts<S> parts;
      parts.adv_g = add(adversarial_g_loss(m.d_s, frozen, fake_s, cfg.adv), adversarial_g_loss(m.d_t, frozen, fake_t, cfg.adv));
      parts.cycle = add(cycle_loss(x_s, m.g_s.forward(fake_t, train)), cycle_loss(x_t, m.g_t.forward(fake_s, train)));
      parts.unet_feature = add(unet_feature_loss(unet, frozen, x_t, fake_s), unet_feature_loss(unet, frozen, x_s, fake_t));
      parts.ssim_loss = add(ssim_image_loss(x_t, fake_s, cfg.ssim), ssim_image_loss(x_s, fake_t, cfg.ssim));
      auto [total, report] = unetgan_total(parts, cfg.weights);
      report.step = step;
      report.adv_d = adv_d;
      detail::require_finite(report.total, "generator loss", step);
      g_tape.backward(total);
      adam_step(m.g_s.params(), opt_gs);
      adam_step(m.g_t.params(), opt_gt);

      if (losses_csv.is_open()) report.write_csv_row(losses_csv);
      res.steps.push_back(report);
    }

    const double h = holdout_total();
    detail::require_finite(h, "holdout loss", step);
    res.holdout.push_back({epoch, h});
    if (cfg.log) *cfg.log << "[gan] epoch " << epoch << " step " << step << " holdout " << h << std::endl;
    if (on_epoch) on_epoch(epoch, m);
    if (h < best) {
      best = h;
      since_best = 0;
      res.models = m;
      res.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      res.stopped_early = true;
      break;
    }
  }

  if (unet.params().checksum() != unet_before) throw std::logic_error("train_unetgan: segmenter parameters changed");
  if (!run_dir.empty()) {
    save_checkpoint(run_dir / "g_s.ckpt", res.models.g_s, res.best_epoch);
    save_checkpoint(run_dir / "g_t.ckpt", res.models.g_t, res.best_epoch);
    save_checkpoint(run_dir / "d_s.ckpt", res.models.d_s, res.best_epoch);
    save_checkpoint(run_dir / "d_t.ckpt", res.models.d_t, res.best_epoch);
    std::ostringstream os;
    os.precision(10);
    os << "epoch,holdout_total\n";
    for (const auto& hl : res.holdout) os << hl.epoch << ',' << hl.total << '\n';
    detail::write_file(run_dir / "holdout.csv", os.str());
    json j = cfg;
    detail::write_file(run_dir / "config.json", j.dump(2) + "\n");
  }
  return res;
}

}  // namespace unetgan
