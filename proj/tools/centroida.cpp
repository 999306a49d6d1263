// centroida: run, validate and sweep imbalanced domain-adaptation experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 training abort.

#include "centroida/runner.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<double> p_target;
  std::optional<std::string> out;
};

centroida::ExperimentConfig resolve(const std::string& path, const Overrides& o) {
  auto c = centroida::load_config(path);
  if (o.seed) c.seeds = {*o.seed};
  if (o.variant) c.variant = centroida::parse_variant(*o.variant);
  if (o.p_target) c.p_target = *o.p_target;
  if (o.out) c.output_dir = *o.out;
  return c;
}

void print_summary(const std::string& label, const centroida::RunSummary& s) {
  std::printf("%s mean_acc %.4f +- %.4f over %zu seed(s)\n", label.c_str(), s.mean_acc, s.stddev_acc,
              s.seeds.size());
}

int report_diagnostics(const std::vector<centroida::Diagnostic>& diags) {
  for (const auto& d : diags) std::cerr << "invalid config: " << d.field << ": " << d.message << '\n';
  return diags.empty() ? 0 : kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"centroida: class-centroid alignment for imbalanced domain adaptation"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  bool overwrite = false;
  std::vector<std::string> grid;

  auto* run_cmd = app.add_subcommand("run", "Train and evaluate every seed in a config");
  run_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run_cmd->add_option("--seed", ov.seed, "Run this seed only");
  run_cmd->add_option("--variant", ov.variant, "full, rm_resample, rm_loss_c, rm_loss_d or source_only");
  run_cmd->add_option("--p-target", ov.p_target, "Target imbalance ratio in (0, 1]");
  run_cmd->add_option("--out", ov.out, "Output directory");
  run_cmd->add_flag("--overwrite", overwrite, "Replace an existing output directory");

  auto* validate_cmd = app.add_subcommand("validate", "Check a config and list every problem");
  validate_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Run the cartesian product of parameter grids");
  sweep_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required();
  sweep_cmd->add_option("--grid", grid, "key=v1,v2,... (repeatable; adds to the config's sweep list)");
  sweep_cmd->add_option("--out", ov.out, "Output directory");
  sweep_cmd->add_flag("--overwrite", overwrite, "Replace an existing output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*validate_cmd) {
      const int code = report_diagnostics(centroida::validate(centroida::load_config(config_path)));
      if (code == 0) std::cout << "ok\n";
      return code;
    }

    const auto config = resolve(config_path, ov);
    if (const int code = report_diagnostics(centroida::validate(config)); code != 0) return code;
    centroida::RunOptions opt;
    opt.overwrite = overwrite;
    opt.threads = centroida::worker_threads();

    if (*run_cmd) {
      print_summary(centroida::to_string(config.variant), centroida::run(config, opt));
      std::cout << "wrote " << config.output_dir << '\n';
      return 0;
    }

    std::vector<centroida::GridAxis> extra;
    for (const auto& g : grid) extra.push_back(centroida::parse_grid(g));
    for (const auto& point : centroida::sweep(config, centroida::sweep_axes(config, extra), opt)) {
      std::string label;
      for (const auto& [k, v] : point.assignment) label += (label.empty() ? "" : " ") + k + "=" + v;
      print_summary(label, point.summary);
    }
    std::cout << "wrote " << config.output_dir << '\n';
    return 0;
  } catch (const centroida::TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kExitAbort;
  } catch (const centroida::InvalidSpec& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const centroida::InvalidInput& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitAbort;
  }
}
