// SPDX-License-Identifier: Apache-2.0
//
// zsc <stage> --config <path> [--set key=value]... [--seed N] [--overwrite]
//
// Stages: synth-data, train-embed, train-counter, train-vae, train-predictor,
// infer, eval, ablate. Artifacts land under --run-dir (or $ZSC_RUN_DIR).
#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "zsc/stages.hpp"
#include "zsc/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"zero-shot object counting pipeline"};
  app.set_version_flag("--version", zsc::kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed_override;
  zsc::StageOptions opts;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file")->required();
    cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", seed_override, "override the global seed");
    cmd->add_option("--run-dir", opts.run_root, "run directory (default $ZSC_RUN_DIR or ./runs)");
    cmd->add_flag("--overwrite", opts.overwrite, "write into the canonical stage directory");
    cmd->add_flag("--force", opts.force, "ignore checkpoint config-hash mismatches");
  };

  for (const char* name : {"synth-data", "train-embed", "train-counter", "train-vae",
                           "train-predictor", "eval"})
    add_common(app.add_subcommand(name));

  CLI::App* infer = app.add_subcommand("infer", "count one image given a class name");
  add_common(infer);
  infer->add_option("--image", opts.image_path, "input PNG")->required();
  infer->add_option("--class", opts.class_name, "class name to count")->required();
  infer->add_option("--out", opts.density_out, "density PNG output path");
  infer->add_option("--heatmap", opts.heatmap_out, "also write a class heatmap PNG");

  CLI::App* ablate = app.add_subcommand("ablate", "sweep one axis and emit a CSV");
  add_common(ablate);
  ablate->add_option("--axis", opts.axis, "num_exemplars | num_proposals | k_neighbors")
      ->required();
  ablate->add_option("--values", opts.values, "axis values (defaults mirror the usual sweeps)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!seed_override.empty()) overrides.push_back("seed=" + seed_override);
    const zsc::RunConfig cfg = zsc::RunConfig::load(config_path, overrides);
    const std::string stage = app.get_subcommands().front()->get_name();
    zsc::run_stage(zsc::stage_from_name(stage), cfg, opts);
  } catch (const std::exception& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
