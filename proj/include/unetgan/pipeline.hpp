#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unetgan/adversarial.hpp"

namespace unetgan {

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  std::uint64_t seed = 7;
  std::size_t source_train = 200, source_test = 50;
  std::size_t target_train = 100, target_test = 50;
  double sigma = 0.05;    // noisy-Unet scenario
  double epsilon = 0.01;  // FGSM
  std::size_t panel_samples = 4;
  UnetConfig unet;
  SegTrainConfig seg;
  GanTrainConfig gan;
};

namespace detail {

// Copies j[key] into v when present.
template <typename T>
void take(const json& j, const char* key, T& v) {
  if (j.contains(key)) j.at(key).get_to(v);
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw UsageError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

inline void from_json(const json& j, SegTrainConfig& c) {
  detail::reject_unknown(j, {"lr", "batch", "epochs", "seed", "eval_every"}, "seg");
  detail::take(j, "lr", c.lr);
  detail::take(j, "batch", c.batch);
  detail::take(j, "epochs", c.epochs);
  detail::take(j, "seed", c.seed);
  detail::take(j, "eval_every", c.eval_every);
}

inline void from_json(const json& j, GanTrainConfig& c) {
  detail::reject_unknown(j,
                         {"lr", "batch", "max_epochs", "patience", "holdout", "seed", "lambda", "lambda1", "lambda2", "ssim_window",
                          "ssim_alpha", "ssim_beta", "ssim_gamma", "literal_adv"},
                         "gan");
  detail::take(j, "lr", c.lr);
  detail::take(j, "batch", c.batch);
  detail::take(j, "max_epochs", c.max_epochs);
  detail::take(j, "patience", c.patience);
  detail::take(j, "holdout", c.holdout);
  detail::take(j, "seed", c.seed);
  detail::take(j, "lambda", c.weights.lambda);
  detail::take(j, "lambda1", c.weights.lambda1);
  detail::take(j, "lambda2", c.weights.lambda2);
  detail::take(j, "ssim_window", c.ssim.window);
  detail::take(j, "ssim_alpha", c.ssim.alpha);
  detail::take(j, "ssim_beta", c.ssim.beta);
  detail::take(j, "ssim_gamma", c.ssim.gamma);
  detail::take(j, "literal_adv", c.adv.literal_form);
}

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"seed", c.seed},
           {"source_train", c.source_train},
           {"source_test", c.source_test},
           {"target_train", c.target_train},
           {"target_test", c.target_test},
           {"sigma", c.sigma},
           {"epsilon", c.epsilon},
           {"panel_samples", c.panel_samples},
           {"unet", c.unet},
           {"seg", c.seg},
           {"gan", c.gan}};
  j["seg"].erase("seed");
  j["gan"].erase("seed");
}

/// Applies the keys present in j on top of c; unknown keys are an error.
inline void apply_overrides(RunConfig& c, const json& j) {
  detail::reject_unknown(j,
                         {"seed", "source_train", "source_test", "target_train", "target_test", "sigma", "epsilon", "panel_samples",
                          "unet", "seg", "gan"},
                         "config");
  try {
    detail::take(j, "seed", c.seed);
    detail::take(j, "source_train", c.source_train);
    detail::take(j, "source_test", c.source_test);
    detail::take(j, "target_train", c.target_train);
    detail::take(j, "target_test", c.target_test);
    detail::take(j, "sigma", c.sigma);
    detail::take(j, "epsilon", c.epsilon);
    detail::take(j, "panel_samples", c.panel_samples);
    if (j.contains("unet")) {
      json merged = c.unet;
      merged.update(j.at("unet"));
      detail::reject_unknown(merged, {"base_channels", "n_classes", "taps"}, "unet");
      c.unet = merged.get<UnetConfig>();
    }
    for (const char* part : {"seg", "gan"})
      if (j.contains(part) && j.at(part).contains("seed")) throw UsageError(std::string("config: ") + part + ".seed is derived from the top-level seed");
    if (j.contains("seg")) from_json(j.at("seg"), c.seg);
    if (j.contains("gan")) from_json(j.at("gan"), c.gan);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

inline void validate(const RunConfig& c) {
  if (c.source_train == 0 || c.source_test == 0 || c.target_train < 2 || c.target_test == 0)
    throw UsageError("config: dataset sizes must be positive (target_train >= 2 for the holdout split)");
  if (!(c.sigma >= 0)) throw UsageError("config: sigma must be >= 0");
  if (!(c.epsilon >= 0)) throw UsageError("config: epsilon must be >= 0");
  try {
    c.seg.validate();
    c.gan.validate();
  } catch (const DomainError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scenario matrix

inline const std::array<std::string, 3>& matrix_domains() {
  static const std::array<std::string, 3> d{"A", "B", "C"};
  return d;
}
inline const std::array<std::string, 3>& matrix_scenarios() {
  static const std::array<std::string, 3> s{"clean", "noisy", "unetgan"};
  return s;
}
inline std::string scenario_title(const std::string& s) {
  if (s == "clean") return "Clean Unet";
  if (s == "noisy") return "Noisy Unet";
  return "Unet-GAN";
}
inline bool cell_exists(const std::string& domain, const std::string& scenario) { return !(domain == "A" && scenario == "unetgan"); }
inline std::string cell_name(const std::string& domain, const std::string& scenario) { return domain + "_" + scenario; }

struct ScenarioMatrix {
  std::map<std::string, DiceStats> cells;  // keyed by cell_name

  const DiceStats* at(const std::string& domain, const std::string& scenario) const {
    auto it = cells.find(cell_name(domain, scenario));
    return it == cells.end() ? nullptr : &it->second;
  }
};

/// "0.805 ± 0.041"
inline std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", mean, std);
  return buf;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string report_csv(const ScenarioMatrix& m) {
  std::string out = "domain";
  for (const auto& s : matrix_scenarios()) out += "," + s + "_mean," + s + "_std";
  out += "\n";
  for (const auto& d : matrix_domains()) {
    out += d;
    for (const auto& s : matrix_scenarios()) {
      const DiceStats* c = m.at(d, s);
      out += c ? "," + format_fixed(c->mean, 6) + "," + format_fixed(c->std, 6) : std::string(",,");
    }
    out += "\n";
  }
  return out;
}

inline std::string report_markdown(const ScenarioMatrix& m) {
  std::string out = "| Domain |";
  for (const auto& s : matrix_scenarios()) out += " " + scenario_title(s) + " |";
  out += "\n|---|---|---|---|\n";
  for (const auto& d : matrix_domains()) {
    out += "| " + d + (d == "A" ? " (source)" : "") + " |";
    for (const auto& s : matrix_scenarios()) {
      const DiceStats* c = m.at(d, s);
      out += " " + (c ? format_mean_std(c->mean, c->std) : std::string("—")) + " |";
    }
    out += "\n";
  }
  return out;
}

/// Missing non-empty cells, by name.
inline std::vector<std::string> missing_cells(const ScenarioMatrix& m) {
  std::vector<std::string> out;
  for (const auto& d : matrix_domains())
    for (const auto& s : matrix_scenarios())
      if (cell_exists(d, s) && !m.at(d, s)) out.push_back(cell_name(d, s));
  return out;
}

// ---------------------------------------------------------------------------
// Per-cell stats files

inline std::string stats_csv(const DiceStats& s) {
  std::ostringstream os;
  os.precision(10);
  os << "n,mean,std\n" << s.n << ',' << s.mean << ',' << s.std << '\n';
  return os.str();
}

inline std::string per_sample_csv(const std::vector<std::string>& ids, const DiceStats& s) {
  std::ostringstream os;
  os.precision(10);
  os << "id,dice\n";
  for (std::size_t i = 0; i < ids.size(); ++i) os << ids[i] << ',' << s.per_sample[i] << '\n';
  return os.str();
}

/// Reads the per-sample file back into stats.
inline DiceStats read_per_sample_csv(const fs::path& path) {
  std::istringstream is(detail::read_file(path));
  std::string line;
  if (!std::getline(is, line) || line != "id,dice") throw FormatError(path.string() + ": expected header 'id,dice'");
  std::vector<double> scores;
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path.string() + ": malformed row '" + line + "'");
    try {
      scores.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
  }
  return summarize(std::move(scores));
}

// ---------------------------------------------------------------------------
// Run directory bookkeeping

/// Resumable step: skipped when its marker holds the same fingerprint.
class StepRunner {
 public:
  StepRunner(fs::path root, std::ostream* log) : root_(std::move(root)), log_(log) {}

  /// fingerprint covers the step's inputs; returns it for chaining.
  std::string run(const std::string& name, const json& inputs, const std::function<void(const fs::path&)>& body) {
    const std::string fp = fingerprint(inputs);
    const fs::path dir = root_ / name, marker = dir / ".done";
    if (fs::exists(marker) && detail::read_file(marker) == fp + "\n") {
      say("[run-all] " + name + ": up to date");
      return fp;
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::create_directories(dir);
    say("[run-all] " + name + ": running");
    const auto t0 = std::chrono::steady_clock::now();
    body(dir);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::write_file(marker, fp + "\n");
    say("[run-all] " + name + ": done in " + format_fixed(secs, 1) + " s");
    return fp;
  }

  static std::string fingerprint(const json& inputs) {
    const std::string s = inputs.dump();
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
    return buf;
  }

 private:
  void say(const std::string& s) const {
    if (log_) *log_ << s << std::endl;
  }
  fs::path root_;
  std::ostream* log_;
};

/// Artifact paths of a run, relative to the run root.
struct RunManifest {
  json config;
  std::map<std::string, std::string> artifacts;

  void record(const std::string& key, const fs::path& rel) { artifacts[key] = rel.generic_string(); }
  fs::path path_of(const fs::path& root, const std::string& key) const {
    auto it = artifacts.find(key);
    if (it == artifacts.end()) throw FormatError("run manifest has no artifact '" + key + "'");
    return root / it->second;
  }
};

inline void write_run_manifest(const fs::path& root, const RunManifest& m) {
  json j{{"config", m.config}, {"artifacts", m.artifacts}};
  detail::write_file(root / "run_manifest.json", j.dump(2) + "\n");
}

inline RunManifest read_run_manifest(const fs::path& root) {
  const fs::path p = root / "run_manifest.json";
  if (!fs::exists(p)) throw FormatError(p.string() + ": not found (is this a run-all output directory?)");
  try {
    const json j = json::parse(detail::read_file(p));
    RunManifest m;
    m.config = j.at("config");
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Report

namespace detail {

// Pastes equally sized grey tiles into a rows x cols grid.
inline std::string tile_grid(const std::vector<std::vector<std::vector<std::uint8_t>>>& tiles, std::size_t h, std::size_t w) {
  const std::size_t rows = tiles.size(), cols = tiles.front().size();
  std::vector<std::uint8_t> px(rows * h * cols * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(tiles[r][c].begin() + y * w, w, px.begin() + (r * h + y) * cols * w + c * w);
  return encode_pgm(rows * h, cols * w, px);
}

template <typename S>
std::vector<std::uint8_t> overlay_bytes(const Tensor<S>& image, const LabelMap& labels) {
  const auto edge = label_contours(labels);
  std::vector<std::uint8_t> px(labels.labels.size());
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = edge[k] ? 255 : to_byte(static_cast<double>(image[k]));
  return px;
}

template <typename S>
std::vector<std::uint8_t> image_bytes(const Tensor<S>& image) {
  std::vector<std::uint8_t> px(image.numel());
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = to_byte(static_cast<double>(image[k]));
  return px;
}

}  // namespace detail

/// Three-row panel for the first n samples of a target domain: direct
/// segmentation on the original, the translated image, and the segmentation
/// of the translated image drawn on the original.
inline void export_domain_panel(const fs::path& path, UnetModel<float>& unet, const ImageSet<float>& original,
                                const ImageSet<float>& translated, std::size_t n) {
  n = std::min(n, original.size());
  if (n == 0) throw DomainError("export_domain_panel: no samples");
  std::vector<std::vector<std::vector<std::uint8_t>>> tiles(3);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<float> x = original.image(i), t = translated.image(i);
    tiles[0].push_back(detail::overlay_bytes(x, predict(unet, x)[0]));
    tiles[1].push_back(detail::image_bytes(t));
    tiles[2].push_back(detail::overlay_bytes(x, predict(unet, t)[0]));
  }
  detail::write_file(path, detail::tile_grid(tiles, original.height, original.width));
}

/// Rebuilds the matrix from the per-cell files recorded in the run manifest
/// and writes report.csv, report.md and the panels.
inline ScenarioMatrix write_report(const fs::path& root, std::ostream* log = nullptr) {
  const RunManifest rm = read_run_manifest(root);
  ScenarioMatrix m;
  std::vector<std::string> missing;
  for (const auto& d : matrix_domains())
    for (const auto& s : matrix_scenarios()) {
      if (!cell_exists(d, s)) continue;
      const std::string key = "eval/" + cell_name(d, s);
      if (!rm.artifacts.count(key) || !fs::exists(rm.path_of(root, key))) {
        missing.push_back(cell_name(d, s));
        continue;
      }
      m.cells[cell_name(d, s)] = read_per_sample_csv(rm.path_of(root, key));
    }
  if (!missing.empty()) {
    std::string names;
    for (const auto& n : missing) names += (names.empty() ? "" : ", ") + n;
    throw FormatError("report: missing cells: " + names);
  }
  detail::write_file(root / "report.csv", report_csv(m));
  detail::write_file(root / "report.md", "# Dice by domain and scenario\n\n" + report_markdown(m));

  std::size_t panels = 4;
  if (rm.config.contains("panel_samples")) rm.config.at("panel_samples").get_to(panels);
  auto unet = load_checkpoint<UnetModel<float>>(rm.path_of(root, "model/unet_clean"));
  for (const std::string d : {"B", "C"}) {
    const auto orig = load_image_set<float>(read_manifest(rm.path_of(root, "data/" + d + "_test")));
    const auto trans = load_image_set<float>(read_manifest(rm.path_of(root, "data/" + d + "_test_translated")));
    export_domain_panel(root / "panels" / (d + "_panel.pgm"), unet, orig, trans, panels);
  }
  if (log) *log << report_markdown(m);
  return m;
}

// ---------------------------------------------------------------------------
// run-all

inline std::uint64_t dataset_seed(std::uint64_t run_seed, std::uint64_t slot) { return run_seed * 1000 + slot; }

/// The whole experiment: data, clean and noisy segmenters, one adaptation per
/// target domain, the eight evaluations, the FGSM study and the report.
inline ScenarioMatrix run_all(const RunConfig& cfg, const fs::path& root, std::ostream* log = nullptr) {
  validate(cfg);
  fs::create_directories(root);
  StepRunner steps(root, log);
  RunManifest rm;
  rm.config = cfg;

  // Data
  struct DataSpec {
    std::string name, profile;
    std::size_t n;
    std::uint64_t slot;
  };
  const std::vector<DataSpec> data{{"A_train", "A", cfg.source_train, 1}, {"A_test", "A", cfg.source_test, 2},
                                   {"B_train", "B", cfg.target_train, 3}, {"B_test", "B", cfg.target_test, 4},
                                   {"C_train", "C", cfg.target_train, 5}, {"C_test", "C", cfg.target_test, 6}};
  json data_inputs = json::array();
  for (const auto& d : data) {
    const auto& p = builtin_profile(d.profile);
    data_inputs.push_back({d.name, d.n, dataset_seed(cfg.seed, d.slot), p.gain, p.gamma_exp, p.bias_amp, p.noise_sigma, p.blur});
  }
  const std::string fp_data = steps.run("data", data_inputs, [&](const fs::path& dir) {
    for (const auto& d : data) generate_dataset(dataset_seed(cfg.seed, d.slot), builtin_profile(d.profile), d.n, dir / d.name);
  });
  for (const auto& d : data) rm.record("data/" + d.name, fs::path("data") / d.name);
  auto dataset = [&](const std::string& name) { return read_manifest(root / "data" / name); };

  // Segmenters
  // Component seeds follow the run seed.
  auto seg_cfg = [&] {
    SegTrainConfig s = cfg.seg;
    s.seed = cfg.seed;
    s.log = log;
    return s;
  };
  auto gan_cfg = [&](const std::string& d) {
    GanTrainConfig g = cfg.gan;
    g.seed = cfg.seed * 10 + (d == "B" ? 1 : 2);
    g.log = log;
    return g;
  };
  const std::string fp_clean = steps.run("seg_clean", json::array({fp_data, cfg.seg, cfg.unet}), [&](const fs::path& dir) {
    train_segmenter(load_image_set<float>(dataset("A_train")), load_image_set<float>(dataset("A_test")), seg_cfg(), dir, cfg.unet);
  });
  rm.record("model/unet_clean", "seg_clean/unet.ckpt");
  rm.record("curve/unet_clean", "seg_clean/curve.csv");

  const std::string fp_noisy = steps.run("seg_noisy", json::array({fp_data, cfg.seg, cfg.unet, cfg.sigma}), [&](const fs::path& dir) {
    const auto polluted = pollute(dataset("A_train"), cfg.sigma, cfg.seed, dir / "A_train_noisy");
    train_segmenter(load_image_set<float>(polluted), load_image_set<float>(dataset("A_test")), seg_cfg(), dir, cfg.unet);
  });
  rm.record("data/A_train_noisy", "seg_noisy/A_train_noisy");
  rm.record("model/unet_noisy", "seg_noisy/unet.ckpt");
  rm.record("curve/unet_noisy", "seg_noisy/curve.csv");

  // Adaptation per target domain
  std::map<std::string, std::string> fp_gan;
  for (const std::string d : {"B", "C"}) {
    fp_gan[d] = steps.run("gan_" + d, json::array({fp_data, fp_clean, gan_cfg(d)}), [&](const fs::path& dir) {
      auto unet = load_checkpoint<UnetModel<float>>(root / "seg_clean" / "unet.ckpt");
      auto res =
          train_unetgan(load_image_set<float>(dataset("A_train")), load_image_set<float>(dataset(d + "_train")), unet, gan_cfg(d), dir);
      translate_dataset(res.models.g_s, dataset(d + "_test"), dir / (d + "_test_translated"));
    });
    rm.record("model/g_s_" + d, fs::path("gan_" + d) / "g_s.ckpt");
    rm.record("losses/gan_" + d, fs::path("gan_" + d) / "losses.csv");
    rm.record("data/" + d + "_test_translated", fs::path("gan_" + d) / (d + "_test_translated"));
  }

  // Evaluations
  steps.run("eval", json::array({fp_clean, fp_noisy, fp_gan["B"], fp_gan["C"]}), [&](const fs::path& dir) {
    auto clean = load_checkpoint<UnetModel<float>>(root / "seg_clean" / "unet.ckpt");
    auto noisy = load_checkpoint<UnetModel<float>>(root / "seg_noisy" / "unet.ckpt");
    for (const auto& d : matrix_domains())
      for (const auto& s : matrix_scenarios()) {
        if (!cell_exists(d, s)) continue;
        const auto set = load_image_set<float>(s == "unetgan" ? read_manifest(root / ("gan_" + d) / (d + "_test_translated"))
                                                              : dataset(d + "_test"));
        const DiceStats st = evaluate(s == "noisy" ? noisy : clean, set);
        detail::write_file(dir / (cell_name(d, s) + ".csv"), per_sample_csv(set.ids, st));
        detail::write_file(dir / (cell_name(d, s) + "_stats.csv"), stats_csv(st));
      }
  });
  for (const auto& d : matrix_domains())
    for (const auto& s : matrix_scenarios())
      if (cell_exists(d, s)) rm.record("eval/" + cell_name(d, s), fs::path("eval") / (cell_name(d, s) + ".csv"));

  // FGSM on the source test set
  steps.run("attack", json::array({fp_clean, cfg.epsilon}), [&](const fs::path& dir) {
    auto clean = load_checkpoint<UnetModel<float>>(root / "seg_clean" / "unet.ckpt");
    attack_report(clean, dataset("A_test"), AttackConfig{cfg.epsilon}, dir);
  });
  rm.record("attack/csv", "attack/attack.csv");

  write_run_manifest(root, rm);
  return write_report(root, log);
}

}  // namespace unetgan
