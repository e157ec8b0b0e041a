#include <CLI11.hpp>

#include <iostream>

#include "unetgan/pipeline.hpp"

using namespace unetgan;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw UsageError("--config " + path + ": " + e.what());
  } catch (const FormatError& e) {
    throw UsageError(std::string("--config: ") + e.what());
  }
  apply_overrides(cfg, j);
  return cfg;
}

void write_stats(const fs::path& out, const DiceStats& s) {
  detail::write_file(out, stats_csv(s));
  std::cout << "dice " << format_mean_std(s.mean, s.std) << " over " << s.n << " samples\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unet-GAN domain adaptation on synthetic cardiac phantoms"};
  app.require_subcommand(0, 1);
  std::string config_path;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON file overriding defaults");
  app.add_flag("--print-config", print_config, "print the resolved configuration and exit");

  std::uint64_t seed = 7;
  std::string out, data, source, target, model, test, runs, profile = "A";
  std::size_t n = 0;
  double sigma = 0.05, eps = 0.01;

  auto* synth = app.add_subcommand("synth-data", "generate a phantom dataset for one vendor profile");
  synth->add_option("--profile", profile, "A, B or C")->check(CLI::IsMember({"A", "B", "C"}))->capture_default_str();
  synth->add_option("--n", n, "number of samples")->required();
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--out", out)->required();

  auto* train_seg = app.add_subcommand("train-seg", "train the segmenter");
  train_seg->add_option("--data", data, "training manifest")->required();
  train_seg->add_option("--test", test, "test manifest")->required();
  train_seg->add_option("--seed", seed)->capture_default_str();
  train_seg->add_option("--out", out)->required();

  auto* pol = app.add_subcommand("pollute", "add seeded Gaussian noise to a dataset");
  pol->add_option("--data", data)->required();
  pol->add_option("--sigma", sigma)->capture_default_str();
  pol->add_option("--seed", seed)->capture_default_str();
  pol->add_option("--out", out)->required();

  auto* train_gan = app.add_subcommand("train-gan", "train the translation GAN against a frozen segmenter");
  train_gan->add_option("--source", source, "source manifest")->required();
  train_gan->add_option("--target", target, "target manifest")->required();
  train_gan->add_option("--model", model, "segmenter checkpoint")->required();
  train_gan->add_option("--seed", seed)->capture_default_str();
  train_gan->add_option("--out", out)->required();

  auto* trans = app.add_subcommand("translate", "map a dataset through a generator");
  trans->add_option("--model", model, "generator checkpoint")->required();
  trans->add_option("--data", data)->required();
  trans->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("evaluate", "Dice of a segmenter on a dataset");
  eval->add_option("--model", model)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--out", out, "stats CSV")->required();

  auto* attack = app.add_subcommand("attack", "FGSM study");
  attack->add_option("--model", model)->required();
  attack->add_option("--data", data)->required();
  attack->add_option("--eps", eps)->capture_default_str();
  attack->add_option("--out", out)->required();

  auto* report = app.add_subcommand("report", "rebuild report.csv, report.md and panels of a run");
  report->add_option("--runs", runs)->required();

  auto* run_all_cmd = app.add_subcommand("run-all", "the whole experiment");
  run_all_cmd->add_option("--seed", seed)->capture_default_str();
  run_all_cmd->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << " (see --help)\n";
    return kUsage;
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (print_config) {
      std::cout << json(cfg).dump(2) << "\n";
      return kOk;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << "error: a subcommand is required (see --help)\n";
      return kUsage;
    }
    validate(cfg);
    SegTrainConfig seg = cfg.seg;
    seg.seed = seed;
    seg.log = &std::cout;
    GanTrainConfig gan = cfg.gan;
    gan.seed = seed;
    gan.log = &std::cout;

    if (*synth) {
      const auto m = generate_dataset(seed, builtin_profile(profile), n, out);
      std::cout << "wrote " << m.size() << " samples to " << out << "\n";
    } else if (*train_seg) {
      const auto res = train_segmenter(load_image_set<float>(read_manifest(data)), load_image_set<float>(read_manifest(test)), seg,
                                       out, cfg.unet);
      std::cout << "best epoch " << res.best_epoch << ", test dice " << format_mean_std(res.test.mean, res.test.std) << "\n";
    } else if (*pol) {
      pollute(read_manifest(data), sigma, seed, out);
    } else if (*train_gan) {
      auto unet = load_checkpoint<UnetModel<float>>(model);
      const auto res = train_unetgan(load_image_set<float>(read_manifest(source)), load_image_set<float>(read_manifest(target)), unet,
                                     gan, out);
      std::cout << "best epoch " << res.best_epoch << (res.stopped_early ? " (stopped early)" : "") << "\n";
    } else if (*trans) {
      auto g = load_checkpoint<GeneratorModel<float>>(model);
      translate_dataset(g, read_manifest(data), out);
    } else if (*eval) {
      auto unet = load_checkpoint<UnetModel<float>>(model);
      write_stats(out, evaluate(unet, read_manifest(data)));
    } else if (*attack) {
      auto unet = load_checkpoint<UnetModel<float>>(model);
      const auto rows = attack_report(unet, read_manifest(data), AttackConfig{eps}, out);
      std::size_t worse = 0;
      for (const auto& r : rows) worse += r.dice_adv < r.dice_clean;
      std::cout << worse << " of " << rows.size() << " samples lost Dice at eps " << eps << "\n";
    } else if (*report) {
      write_report(runs, &std::cout);
    } else if (*run_all_cmd) {
      cfg.seed = seed;
      run_all(cfg, out, &std::cout);
    }
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}
