// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "unetgan/grad_check.hpp"
#include "unetgan/pipeline.hpp"

using namespace unetgan;
using unetgan::testing::inner;
using unetgan::testing::random_tensor;
using unetgan::testing::slurp;
using D = Tensor<double>;
using F = Tensor<float>;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

struct Verdict {
  int id;
  std::string title;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  verdicts.push_back({id, title, pass, detail});
  std::cout << (pass ? "PASS" : "FAIL") << "  [" << id << "] " << title << ": " << detail << std::endl;
}

// Runs a criterion body; an exception is a failure with its message.
void criterion(int id, const std::string& title, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [ok, detail] = body();
    report(id, title, ok, detail);
  } catch (const std::exception& e) {
    report(id, title, false, std::string("exception: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// 1

std::pair<bool, std::string> ssim_oracle() {
  const auto t0 = Clock::now();
  const SsimParams p;
  double worst_value = 0, worst_component = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const D x = random_tensor<double>({1, 1, 16, 16}, 10'000 + seed, 0, 1);
    // half the pairs are structurally related, half independent
    const D y = seed % 2 ? oracles::jitter(x, 20'000 + seed, 0.3) : random_tensor<double>({1, 1, 16, 16}, 20'000 + seed, 0, 1);
    const auto ref = oracles::naive_ssim(x, y, 16, 16, p);
    worst_value = std::max(worst_value, std::abs(ssim(x, y, p).item() - ref.value));
    const auto cm = ssim_components(x, y, p);
    worst_component = std::max({worst_component, oracles::max_diff(cm.l, ref.l), oracles::max_diff(cm.c, ref.c),
                                oracles::max_diff(cm.s, ref.s)});
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_value <= 1e-6 && worst_component <= 1e-6 && secs < 10;
  return {ok, "100 pairs 16x16, max |ssim - oracle| = " + num(worst_value, 3) + ", max component diff = " + num(worst_component, 3) +
                  " (limit 1e-6), " + num(secs, 3) + " s (limit 10 s)"};
}

// ---------------------------------------------------------------------------
// 2

std::pair<bool, std::string> gradient_suite() {
  const auto t0 = Clock::now();
  double smooth = 0, composite = 0, adjoint = 0;

  // smooth primitives, 64-bit
  const D x = random_tensor<double>({3, 4}, 11, 0.2, 1.5);
  const D w = random_tensor<double>({3, 4}, 12);
  const std::vector<std::function<D(const D&)>> fns = {
      [](const D& v) { return sum(square(v)); },
      [](const D& v) { return sum(sqrt(v)); },
      [](const D& v) { return sum(log(v)); },
      [](const D& v) { return sum(pow(v, 1.7)); },
      [](const D& v) { return sum(tanh(v)); },
      [](const D& v) { return sum(sigmoid(v)); },
      [&](const D& v) { return mean(mul(v, w)); },
      [&](const D& v) { return sum(sub(one_minus(v), scale(add_scalar(v, 0.5), 3.0))); },
  };
  for (const auto& f : fns) smooth = std::max(smooth, grad_check(f, x, 1e-5));
  {
    const D img = random_tensor<double>({2, 2, 5, 5}, 13), k = random_tensor<double>({3, 2, 3, 3}, 14), b = random_tensor<double>({3}, 15);
    const D wc = random_tensor<double>({2, 3, 3, 3}, 16);
    smooth = std::max(smooth, grad_check<double>([&](const D& v) { return sum(mul(conv2d(v, k, b, 2, 1), wc)); }, img, 1e-5));
    smooth = std::max(smooth, grad_check<double>([&](const D& v) { return sum(mul(conv2d(img, v, b, 2, 1), wc)); }, k, 1e-5));
    const D kt = random_tensor<double>({2, 3, 4, 4}, 17), bt = random_tensor<double>({3}, 18), wt = random_tensor<double>({2, 3, 10, 10}, 19);
    smooth = std::max(smooth, grad_check<double>([&](const D& v) { return sum(mul(conv_transpose2d(v, kt, bt, 2, 1), wt)); }, img, 1e-5));
    const D gain = random_tensor<double>({2}, 20, 0.5, 1.5), shift = random_tensor<double>({2}, 21), wn = random_tensor<double>(img.shape(), 22);
    smooth = std::max(smooth, grad_check<double>([&](const D& v) { return sum(mul(instance_norm(v, gain, shift), wn)); }, img, 1e-5));
    const D logits = random_tensor<double>({1, 3, 4, 4}, 23);
    std::vector<std::uint8_t> labels(16);
    for (std::size_t i = 0; i < 16; ++i) labels[i] = static_cast<std::uint8_t>(i % 3);
    smooth = std::max(smooth, grad_check<double>([&](const D& v) { return softmax_cross_entropy(v, labels); }, logits, 1e-5));
  }

  // composite losses on tiny nets
  {
    const D a = random_tensor<double>({2, 1, 12, 12}, 30, 0.2, 0.8);
    const D b = oracles::jitter(a, 31, 0.1);
    composite = std::max(composite, grad_check<double>([&](const D& t) { return ssim_image_loss(a, t); }, b, 1e-6));

    UnetConfig uc;
    uc.base_channels = 2;
    UnetModel<double> unet(uc, 32);
    const D orig = random_tensor<double>({1, 1, 16, 16}, 33, 0, 1), trans = oracles::jitter(orig, 34, 0.1);
    composite = std::max(composite, grad_check<double>([&](const D& t) { return unet_feature_loss(unet, Graph<double>{}, orig, t); },
                                                       trans, 1e-6));

    GeneratorModel<double> gen(GeneratorConfig{4, 1}, 35);
    DiscriminatorModel<double> disc(DiscriminatorConfig{4}, 36);
    auto* head = gen.params().find("out.weight");
    head->value = random_tensor<double>(head->value.shape(), 37, -0.2, 0.2);
    const D src = random_tensor<double>({2, 1, 16, 16}, 38, 0, 1);
    auto adv = [&](const Graph<double>& g) { return adversarial_g_loss(disc, Graph<double>{g.tape, false}, gen.forward(src, g)); };
    // biases feeding an instance norm carry an identically zero gradient
    std::vector<Parameter<double>*> checked;
    for (auto* p : gen.params().pointers())
      if (!p->name.ends_with(".bias") || p->name == "out.bias") checked.push_back(p);
    composite = std::max(composite, grad_check_params<double>(adv, checked, 1e-6, 6, 39));
  }

  // conv / conv-transpose adjoint identity
  std::mt19937_64 rng(4242);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = pick(1, 2), cin = pick(1, 3), cout = pick(1, 3), kk = pick(1, 4), stride = pick(1, 2), pad = pick(0, kk - 1);
    std::size_t h = pick(kk, 7), wd = pick(kk, 7);
    while ((h + 2 * pad - kk) % stride != 0) ++h;
    while ((wd + 2 * pad - kk) % stride != 0) ++wd;
    const D k = random_tensor<double>({cout, cin, kk, kk}, 500 + trial);
    const D xi = random_tensor<double>({n, cin, h, wd}, 600 + trial);
    const D fwd = conv2d(xi, k, D::zeros({cout}), stride, pad);
    const D y = random_tensor<double>(fwd.shape(), 700 + trial);
    const D back = conv_transpose2d(y, k, D::zeros({cin}), stride, pad);
    adjoint = std::max(adjoint, std::abs(inner(fwd, y) - inner(xi, back)));
  }

  const double secs = seconds_since(t0);
  const bool ok = smooth <= 1e-5 && composite <= 1e-3 && adjoint <= 1e-5 && secs < 120;
  return {ok, "primitives rel err " + num(smooth, 3) + " (limit 1e-5), composite losses " + num(composite, 3) +
                  " (limit 1e-3), adjoint gap over 50 cases " + num(adjoint, 3) + " (limit 1e-5), " + num(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 3 and the freeze half of 9: a 50-step GAN smoke run against the converged Unet

struct SmokeResult {
  std::size_t steps = 0;
  double worst_identity = 0;
  bool weights_ok = false;
  std::uint64_t checksum_before = 0, checksum_after = 0;
  bool file_unchanged = false;
};

SmokeResult gan_smoke(const fs::path& run, const fs::path& work) {
  const fs::path ckpt = run / "seg_clean" / "unet.ckpt";
  const std::string file_before = slurp(ckpt);
  auto unet = load_checkpoint<UnetModel<float>>(ckpt);
  SmokeResult r;
  r.checksum_before = unet.params().checksum();

  const auto source = load_image_set<float>(read_manifest(run / "data" / "A_train"));
  auto target_m = read_manifest(run / "data" / "B_train");
  target_m.entries.resize(24);  // 2 held out, 22 fitted: 6 steps per epoch
  const auto target = load_image_set<float>(target_m);
  GanTrainConfig cfg;
  cfg.seed = 77;
  cfg.max_epochs = 9;
  cfg.patience = 100;
  const auto res = train_unetgan(source, target, unet, cfg, work / "smoke_gan");

  const LossWeights& wts = cfg.weights;
  r.weights_ok = wts.lambda1 == 15.0 && wts.lambda2 == 5.0;
  r.steps = res.steps.size();
  for (const auto& s : res.steps) {
    const double expect = s.adv_g + wts.lambda * s.cycle + wts.lambda1 * s.unet_feature + wts.lambda2 * s.ssim_loss;
    r.worst_identity = std::max(r.worst_identity, std::abs(s.total - expect));
  }
  r.checksum_after = unet.params().checksum();
  r.file_unchanged = slurp(ckpt) == file_before;
  return r;
}

// ---------------------------------------------------------------------------
// 8

std::pair<bool, std::string> fgsm_property(const fs::path& run) {
  auto unet = load_checkpoint<UnetModel<float>>(run / "seg_clean" / "unet.ckpt");
  const auto data = load_image_set<float>(read_manifest(run / "data" / "A_test"));
  const AttackConfig cfg{0.01};
  const float eps = 0.01f;

  // bound: every pixel moved by exactly +-eps, 0, or up to a clamp
  double worst_excess = 0;
  std::size_t lowered = 0;
  std::vector<std::size_t> all = iota_indices(data.size());
  for (const auto& idx : chunks(all, 10)) {
    const F x = data.batch(idx);
    const auto labels = data.label_batch(idx);
    const F adv = fgsm(unet, x, labels, cfg);
    for (std::size_t k = 0; k < x.numel(); ++k) {
      const float moved = std::abs(adv[k] - x[k]);
      const bool clamped = adv[k] == 0.0f || adv[k] == 1.0f;
      // x + eps is one float rounding away from the exact sum
      const double excess = double(moved) - double(eps);
      if (!clamped || moved > eps) worst_excess = std::max(worst_excess, excess);
    }
    const auto pred_clean = predict(unet, x), pred_adv = predict(unet, adv);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const LabelMap gt = data.label(idx[j]);
      lowered += mean_foreground_dice(pred_adv[j], gt) < mean_foreground_dice(pred_clean[j], gt);
    }
  }
  const double ulp_at_one = std::ldexp(1.0, -24);
  const bool bound_ok = worst_excess <= ulp_at_one;
  const double frac = double(lowered) / double(data.size());

  // sign spot check against central differences of the double-precision loss
  auto unet64 = load_checkpoint<UnetModel<double>>(run / "seg_clean" / "unet.ckpt");
  const F x0 = data.batch({0});
  const auto l0 = data.label_batch({0});
  const F g32 = input_gradient(unet, x0, l0);
  const F adv0 = fgsm(unet, x0, l0, cfg);
  const D x64 = cast<double>(x0);
  auto loss = [&](const D& v) { return softmax_cross_entropy(*unet64.forward(v, Graph<double>{}).logits, l0); };
  std::vector<std::size_t> order = iota_indices(x0.numel());
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(g32[a]) > std::abs(g32[b]); });
  order.resize(order.size() / 10);  // coordinates whose gradient clearly exceeds float noise
  std::mt19937_64 rng(8);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t checked = 0, agree = 0;
  const double h = 1e-4;
  for (std::size_t k : order) {
    if (checked == 20) break;
    if (x0[k] - h < 0 || x0[k] + h > 1) continue;
    std::vector<double> probe = x64.vec();
    probe[k] += h;
    const double up = loss(D(x64.shape(), probe)).item();
    probe[k] -= 2 * h;
    const double down = loss(D(x64.shape(), probe)).item();
    const double fd = (up - down) / (2 * h);
    const double step = double(adv0[k]) - double(x0[k]);
    ++checked;
    agree += (fd > 0 && step > 0) || (fd < 0 && step < 0);
  }
  const bool sign_ok = checked == 20 && agree == checked;
  const bool ok = bound_ok && frac >= 0.8 && sign_ok;
  return {ok, "eps 0.01: max |x'-x| - eps = " + num(worst_excess, 3) + " (float rounding " + num(ulp_at_one, 3) + "), Dice lowered on " +
                  std::to_string(lowered) + "/" + std::to_string(data.size()) + " (limit 80%), sign agrees with finite differences on " +
                  std::to_string(agree) + "/" + std::to_string(checked)};
}

// ---------------------------------------------------------------------------
// round trips for 9

std::pair<bool, std::string> round_trips(const fs::path& run, const fs::path& work) {
  bool ok = true;
  std::vector<std::string> notes;
  // tensors
  const F t = random_tensor<float>({2, 3, 5, 7}, 99);
  write_tensor(work / "t.ten", t);
  const bool tensor_ok = read_tensor(work / "t.ten").vec() == t.vec();
  ok &= tensor_ok;
  if (!tensor_ok) notes.push_back("tensor");
  // every checkpoint of the run re-encodes to the same bytes
  std::size_t ckpts = 0;
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (e.path().extension() != ".ckpt") continue;
    const std::string bytes = slurp(e.path());
    const std::string kind = read_checkpoint_header(e.path()).kind;
    std::string again;
    if (kind == "unet") again = encode_checkpoint(load_checkpoint<UnetModel<float>>(e.path()), read_checkpoint_header(e.path()).step);
    if (kind == "generator") again = encode_checkpoint(load_checkpoint<GeneratorModel<float>>(e.path()), read_checkpoint_header(e.path()).step);
    if (kind == "discriminator")
      again = encode_checkpoint(load_checkpoint<DiscriminatorModel<float>>(e.path()), read_checkpoint_header(e.path()).step);
    if (again != bytes) {
      ok = false;
      notes.push_back(e.path().string());
    }
    ++ckpts;
  }
  // a dataset copied sample by sample reads back identically
  const auto m = read_manifest(run / "data" / "B_test");
  DatasetManifest copy;
  copy.root = work / "B_copy";
  fs::create_directories(copy.root);
  copy.domain = m.domain;
  copy.profile = m.profile;
  copy.seed = m.seed;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Sample s = load_sample(m, i);
    add_sample(copy, s.id, s.image, s.labels);
  }
  write_manifest(copy);
  const auto back = read_manifest(copy.root);
  bool data_ok = back.size() == m.size();
  for (std::size_t i = 0; data_ok && i < m.size(); ++i) {
    const Sample a = load_sample(m, i), b = load_sample(back, i);
    data_ok = a.id == b.id && a.image.vec() == b.image.vec() && a.labels.labels == b.labels.labels;
  }
  ok &= data_ok;
  if (!data_ok) notes.push_back("dataset");
  return {ok, "tensor, dataset and " + std::to_string(ckpts) + " checkpoints bit-exact" +
                  (notes.empty() ? std::string() : " except: " + notes.front())};
}

double step_seconds(const std::string& log, const std::string& step) {
  const std::regex re("\\[run-all\\] " + step + ": done in ([0-9.]+) s");
  std::smatch m;
  if (!std::regex_search(log, m, re)) return -1;
  return std::stod(m[1]);
}

std::size_t count_of(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + needle.size())) ++n;
  return n;
}

struct Run {
  ScenarioMatrix matrix;
  std::string log;
  double seconds = 0;
};

Run full_run(const RunConfig& cfg, const fs::path& root) {
  std::error_code ec;
  fs::remove_all(root, ec);
  std::ostringstream log;
  // tee to stdout so progress is visible
  struct Tee : std::streambuf {
    std::streambuf *a, *b;
    int overflow(int c) override {
      if (c == EOF) return 0;
      a->sputc(char(c));
      b->sputc(char(c));
      return c;
    }
    int sync() override {
      a->pubsync();
      b->pubsync();
      return 0;
    }
  } tee;
  tee.a = log.rdbuf();
  tee.b = std::cout.rdbuf();
  std::ostream both(&tee);
  const auto t0 = Clock::now();
  Run r;
  r.matrix = run_all(cfg, root, &both);
  r.seconds = seconds_since(t0);
  r.log = log.str();
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = fs::absolute(argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work"));
  fs::create_directories(work);
  std::cout << "work directory: " << work << "\n";

  criterion(1, "SSIM oracle equivalence", ssim_oracle);
  criterion(2, "gradient suite", gradient_suite);

  // One full experiment at the default configuration, then a second identical run.
  const RunConfig cfg;
  std::optional<Run> first, second;
  std::string run_error;
  try {
    std::cout << "\nrun-all #1 (seed " << cfg.seed << ")\n";
    first = full_run(cfg, work / "run1");
  } catch (const std::exception& e) {
    run_error = e.what();
    std::cout << "run-all #1 failed: " << run_error << "\n";
  }
  auto need_run = [&]() {
    if (!first) throw std::runtime_error("run-all failed: " + run_error);
    return *first;
  };

  std::optional<SmokeResult> smoke;
  criterion(3, "loss composition identity", [&] {
    const Run r = need_run();
    smoke = gan_smoke(work / "run1", work);
    const bool ok = smoke->weights_ok && smoke->steps >= 50 && smoke->worst_identity <= 1e-6;
    return std::pair{ok, std::to_string(smoke->steps) + " steps with lambda1 = 15, lambda2 = 5: max |total - sum of weighted parts| = " +
                             num(smoke->worst_identity, 3) + " (limit 1e-6)"};
  });

  criterion(4, "source segmentation", [&] {
    const Run r = need_run();
    const double dice = r.matrix.cells.at("A_clean").mean;
    const double secs = step_seconds(r.log, "seg_clean");
    const bool ok = dice >= 0.90 && cfg.seg.epochs <= 30 && secs >= 0 && secs < 15 * 60;
    return std::pair{ok, "A-test Dice " + format_mean_std(dice, r.matrix.cells.at("A_clean").std) + " (limit 0.90) after " +
                             std::to_string(cfg.seg.epochs) + " epochs, training took " + num(secs, 4) + " s (limit 900 s)"};
  });

  criterion(5, "domain shift ordering", [&] {
    const Run r = need_run();
    const double a = r.matrix.cells.at("A_clean").mean, b = r.matrix.cells.at("B_clean").mean, c = r.matrix.cells.at("C_clean").mean;
    const bool ok = b + 0.05 < a && b < c && a - b >= 0.10;
    return std::pair{ok, "A " + format_fixed(a, 3) + ", B " + format_fixed(b, 3) + ", C " + format_fixed(c, 3) + "; A-B drop " +
                             format_fixed(a - b, 3) + " (limit 0.10), B < C " + (b < c ? "holds" : "violated")};
  });

  criterion(6, "adaptation recovery", [&] {
    const Run r = need_run();
    const double b = r.matrix.cells.at("B_clean").mean, bt = r.matrix.cells.at("B_unetgan").mean;
    const double c = r.matrix.cells.at("C_clean").mean, ct = r.matrix.cells.at("C_unetgan").mean;
    const bool ok = bt >= b + 0.05 && ct >= c && r.seconds < 45 * 60;
    return std::pair{ok, "B " + format_fixed(b, 3) + " -> " + format_fixed(bt, 3) + " (need +0.050, got " + format_fixed(bt - b, 3) +
                             "), C " + format_fixed(c, 3) + " -> " + format_fixed(ct, 3) + ", run-all " + num(r.seconds, 4) +
                             " s (limit 2700 s)"};
  });

  criterion(7, "noisy-training scenario", [&] {
    const Run r = need_run();
    const double clean = r.matrix.cells.at("A_clean").mean, noisy = r.matrix.cells.at("A_noisy").mean;
    const std::string md = slurp(work / "run1" / "report.md");
    const std::size_t cells = count_of(md, " ± "), dashes = count_of(md, "—");
    const bool ok = noisy <= clean + 0.01 && cells == 8 && dashes == 1;
    return std::pair{ok, "A-test noisy " + format_fixed(noisy, 3) + " vs clean " + format_fixed(clean, 3) + " (noisy <= clean + 0.01), report has " +
                             std::to_string(cells) + " cells and " + std::to_string(dashes) + " dash"};
  });

  criterion(8, "FGSM property", [&] {
    need_run();
    return fgsm_property(work / "run1");
  });

  criterion(9, "determinism and persistence", [&] {
    need_run();
    std::cout << "\nrun-all #2 (same seed, fresh directory)\n";
    second = full_run(cfg, work / "run2");
    const bool same_report = slurp(work / "run1" / "report.csv") == slurp(work / "run2" / "report.csv");
    const auto [trips_ok, trips] = round_trips(work / "run1", work);
    const bool frozen = smoke && smoke->checksum_before == smoke->checksum_after && smoke->file_unchanged;
    const bool ok = same_report && trips_ok && frozen;
    return std::pair{ok, std::string("report.csv ") + (same_report ? "identical" : "DIFFERS") + " across two runs; " + trips +
                             "; Unet checksum " + (frozen ? "unchanged" : "CHANGED") + " by GAN training"};
  });

  std::size_t passed = 0;
  for (const auto& v : verdicts) passed += v.pass;
  std::cout << "\nsummary\n";
  for (const auto& v : verdicts) std::cout << (v.pass ? "PASS" : "FAIL") << "  [" << v.id << "] " << v.title << "\n";
  std::cout << passed << "/" << verdicts.size() << " criteria passed\n";
  if (first) std::cout << "\n" << slurp(work / "run1" / "report.md");
  return passed == verdicts.size() ? 0 : 1;
}
