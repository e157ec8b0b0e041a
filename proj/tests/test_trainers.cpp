#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "unetgan/trainers.hpp"

using namespace unetgan;
using unetgan::testing::slurp;
using unetgan::testing::TempDir;

namespace {

ParameterSet<double> scalar_param(double w) {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>({1}, {w}));
  return ps;
}

ImageSet<float> phantoms(const std::string& profile, std::uint64_t seed, std::size_t n) {
  ImageSet<float> set;
  set.height = set.width = 64;
  for (std::size_t i = 0; i < n; ++i) {
    const Phantom p = make_sample(seed, i, builtin_profile(profile));
    set.ids.push_back(sample_id(profile, i));
    set.pixels.insert(set.pixels.end(), p.image.values().begin(), p.image.values().end());
    set.labels.insert(set.labels.end(), p.labels.labels.begin(), p.labels.labels.end());
  }
  return set;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  auto ps = scalar_param(0.5);
  AdamState<double> st(ps, 0.1);
  ps.zero_grad();
  adam_step(ps, st);
  adam_step(ps, st);
  EXPECT_EQ(ps[0].value[0], 0.5);
  EXPECT_EQ(st.t, 2u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto ps = scalar_param(0.0);
  AdamState<double> st(ps, 1e-3);
  ps[0].grad = {1.0};
  adam_step(ps, st);
  EXPECT_NEAR(ps[0].value[0], -1e-3, 1e-3 * 1e-7);
}

TEST(Adam, MatchesScriptedOracleOnSquare) {
  // Reference recursion written out independently.
  double w_ref = 1.0, m = 0, v = 0;
  std::vector<double> trace;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2 * w_ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w_ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    trace.push_back(w_ref);
  }
  auto ps = scalar_param(1.0);
  AdamState<double> st(ps, 0.1);
  for (int t = 0; t < 10; ++t) {
    ps.zero_grad();
    Tape<double> tape;
    tape.backward(square(Graph<double>{&tape, true}.use(ps[0])));
    adam_step(ps, st);
    EXPECT_NEAR(ps[0].value[0], trace[t], 1e-10) << t;
  }
}

TEST(Adam, MismatchedStateIsRejected) {
  auto ps = scalar_param(1.0);
  AdamState<double> st;
  EXPECT_THROW(adam_step(ps, st), ShapeError);
}

TEST(DiceSummary, SingleSampleHasZeroSpread) {
  const auto s = summarize({0.7});
  EXPECT_EQ(s.n, 1u);
  EXPECT_DOUBLE_EQ(s.mean, 0.7);
  EXPECT_EQ(s.std, 0.0);
  const auto t = summarize({0.5, 1.0});
  EXPECT_DOUBLE_EQ(t.mean, 0.75);
  EXPECT_DOUBLE_EQ(t.std, 0.25);
}

TEST(Evaluate, DeterministicAndBounded) {
  auto unet = build_unet<float>(2);
  const auto data = phantoms("A", 1, 3);
  const auto a = evaluate(unet, data), b = evaluate(unet, data);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.per_sample, b.per_sample);
  EXPECT_EQ(a.n, 3u);
  EXPECT_GE(a.mean, 0.0);
  EXPECT_LE(a.mean, 1.0);
  EXPECT_THROW(evaluate(unet, ImageSet<float>{}), DomainError);
}

TEST(SegTraining, DeterministicCurveAndCheckpoint) {
  TempDir dir("trainers");
  const auto train = phantoms("A", 3, 6), test = phantoms("A", 4, 2);
  SegTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 3;
  cfg.seed = 5;
  UnetConfig arch;
  arch.base_channels = 4;
  const auto r1 = train_segmenter(train, test, cfg, dir / "one", arch);
  const auto r2 = train_segmenter(train, test, cfg, dir / "two", arch);
  EXPECT_EQ(slurp(dir / "one" / "curve.csv"), slurp(dir / "two" / "curve.csv"));
  EXPECT_EQ(slurp(dir / "one" / "unet.ckpt"), slurp(dir / "two" / "unet.ckpt"));
  ASSERT_EQ(r1.curve.size(), 2u);
  EXPECT_LT(r1.curve[1].train_loss, r1.curve[0].train_loss);
  // The returned model is the best-Dice one.
  double best = 0;
  for (const auto& e : r1.curve) best = std::max(best, *e.test_dice);
  EXPECT_DOUBLE_EQ(r1.test.mean, best);
  auto back = load_checkpoint<UnetModel<float>>(dir / "one" / "unet.ckpt");
  EXPECT_DOUBLE_EQ(evaluate(back, test).mean, best);
}

TEST(SegTraining, NonFiniteLossAborts) {
  auto train = phantoms("A", 3, 2);
  train.pixels[100] = std::numeric_limits<float>::quiet_NaN();
  SegTrainConfig cfg;
  cfg.epochs = 1;
  UnetConfig arch;
  arch.base_channels = 4;
  EXPECT_THROW(train_segmenter(train, phantoms("A", 4, 1), cfg, {}, arch), NumericalError);
  EXPECT_THROW(train_segmenter(ImageSet<float>{}, phantoms("A", 4, 1), cfg, {}, arch), DomainError);
}

TEST(Pollute, ZeroSigmaIsByteIdentical) {
  TempDir dir("trainers");
  const auto m = generate_dataset(1, builtin_profile("A"), 3, dir / "A");
  const auto p = pollute(m, 0.0, 9, dir / "P");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(slurp(m.root / m.entries[i].image), slurp(p.root / p.entries[i].image));
    EXPECT_EQ(slurp(m.root / m.entries[i].label), slurp(p.root / p.entries[i].label));
  }
  EXPECT_THROW(pollute(m, -1.0, 9, dir / "Q"), DomainError);
}

TEST(Pollute, SeededAndLabelPreserving) {
  TempDir dir("trainers");
  const auto m = generate_dataset(1, builtin_profile("A"), 3, dir / "A");
  const auto p1 = pollute(m, 0.05, 9, dir / "P1"), p2 = pollute(m, 0.05, 9, dir / "P2");
  const auto p3 = pollute(m, 0.05, 10, dir / "P3");
  EXPECT_EQ(slurp(p1.root / "manifest.json"), slurp(p2.root / "manifest.json"));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(slurp(p1.root / p1.entries[i].image), slurp(p2.root / p2.entries[i].image));
    EXPECT_NE(slurp(p1.root / p1.entries[i].image), slurp(p3.root / p3.entries[i].image));
    EXPECT_EQ(load_sample(p1, i).labels, load_sample(m, i).labels);
    EXPECT_EQ(p1.entries[i].id, m.entries[i].id);
  }
}

TEST(Pollute, NoiseStdMatchesSigma) {
  TempDir dir("trainers");
  DatasetManifest flat;
  flat.domain = "F";
  flat.root = dir / "flat";
  for (std::size_t i = 0; i < 100; ++i)
    add_sample(flat, sample_id("F", i), Tensor<float>::full({1, 64, 64}, 0.5f), LabelMap(64, 64, std::vector<std::uint8_t>(4096, 0)));
  write_manifest(flat);
  const double sigma = 0.05;
  const auto p = pollute(flat, sigma, 3, dir / "P");
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto img = load_sample(p, i).image;
    double acc = 0, acc2 = 0;
    for (float v : img.values()) {
      acc += v - 0.5;
      acc2 += (v - 0.5) * (v - 0.5);
    }
    const double n = double(img.numel());
    const double sd = std::sqrt(acc2 / n - (acc / n) * (acc / n));
    EXPECT_GE(sd, 0.8 * sigma);
    EXPECT_LE(sd, 1.2 * sigma);
  }
}

TEST(Translate, PreservesIdsLabelsAndRange) {
  TempDir dir("trainers");
  const auto m = generate_dataset(2, builtin_profile("B"), 3, dir / "B");
  auto g = build_generator<float>(4);
  const auto t1 = translate_dataset(g, m, dir / "T1");
  const auto t2 = translate_dataset(g, m, dir / "T2");
  ASSERT_EQ(t1.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(t1.entries[i].id, m.entries[i].id);
    const Sample s = load_sample(t1, i);
    EXPECT_EQ(s.labels, load_sample(m, i).labels);
    for (float v : s.image.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    EXPECT_EQ(slurp(t1.root / t1.entries[i].image), slurp(t2.root / t2.entries[i].image));
  }
}

TEST(GanTraining, SmokeRunContracts) {
  TempDir dir("trainers");
  const auto source = phantoms("A", 5, 10), target = phantoms("B", 6, 10);
  auto unet = build_unet<float>(3);
  const auto before = unet.params().checksum();
  GanTrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.seed = 11;
  const auto res = train_unetgan(source, target, unet, cfg, dir / "gan");
  EXPECT_EQ(unet.params().checksum(), before);
  // 10 target images, 1 held out, batch 4 -> 3 steps per epoch.
  ASSERT_EQ(res.steps.size(), 6u);
  for (const auto& r : res.steps) {
    EXPECT_NEAR(r.total, r.adv_g + 15 * r.unet_feature + 5 * r.ssim_loss + 10 * r.cycle, 1e-6);
    EXPECT_GE(r.cycle, 0.0);
    EXPECT_GE(r.ssim_loss, 0.0);
    EXPECT_GE(r.unet_feature, 0.0);
    EXPECT_GE(r.adv_d, 0.0);
  }
  ASSERT_EQ(res.holdout.size(), 2u);
  const auto best = std::min_element(res.holdout.begin(), res.holdout.end(),
                                     [](const auto& a, const auto& b) { return a.total < b.total; });
  EXPECT_EQ(res.best_epoch, best->epoch);
  const std::string csv = slurp(dir / "gan" / "losses.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  for (const char* f : {"g_s.ckpt", "g_t.ckpt", "d_s.ckpt", "d_t.ckpt", "holdout.csv", "config.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "gan" / f)) << f;
  EXPECT_EQ(load_checkpoint<GeneratorModel<float>>(dir / "gan" / "g_s.ckpt").params().checksum(),
            res.models.g_s.params().checksum());
}

TEST(GanTraining, DeterministicLosses) {
  TempDir dir("trainers");
  const auto source = phantoms("A", 5, 6), target = phantoms("C", 6, 6);
  auto unet = build_unet<float>(3);
  GanTrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.holdout = 0.2;
  train_unetgan(source, target, unet, cfg, dir / "a");
  train_unetgan(source, target, unet, cfg, dir / "b");
  EXPECT_EQ(slurp(dir / "a" / "losses.csv"), slurp(dir / "b" / "losses.csv"));
  EXPECT_EQ(slurp(dir / "a" / "g_t.ckpt"), slurp(dir / "b" / "g_t.ckpt"));
}

TEST(GanTraining, EarlyStoppingKeepsBestSnapshot) {
  const auto source = phantoms("A", 5, 6), target = phantoms("B", 6, 6);
  auto unet = build_unet<float>(3);
  GanTrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.patience = 1;
  cfg.holdout = 0.2;
  cfg.lr = 5e-3;  // large steps make the monitored loss wander
  const auto res = train_unetgan(source, target, unet, cfg);
  const auto best = std::min_element(res.holdout.begin(), res.holdout.end(),
                                     [](const auto& a, const auto& b) { return a.total < b.total; });
  EXPECT_EQ(res.best_epoch, best->epoch);
  if (res.stopped_early) {
    EXPECT_EQ(res.holdout.back().epoch, res.best_epoch + 1);
  }
}

TEST(GanTraining, InvalidConfig) {
  auto unet = build_unet<float>(3);
  GanTrainConfig cfg;
  cfg.holdout = 0;
  EXPECT_THROW(train_unetgan(phantoms("A", 1, 4), phantoms("B", 1, 4), unet, cfg), DomainError);
  cfg = GanTrainConfig{};
  cfg.weights.lambda1 = -1;
  EXPECT_THROW(train_unetgan(phantoms("A", 1, 4), phantoms("B", 1, 4), unet, cfg), DomainError);
}
