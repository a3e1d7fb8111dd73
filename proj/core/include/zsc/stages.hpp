// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zsc/checkpoint.hpp"
#include "zsc/config.hpp"
#include "zsc/metrics.hpp"
#include "zsc/selector.hpp"

namespace zsc {

enum class Stage {
  synth_data,
  train_embed,
  train_counter,
  train_vae,
  train_predictor,
  infer,
  eval,
  ablate,
};

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct StageOptions {
  std::string run_root;  // empty -> $ZSC_RUN_DIR or ./runs
  bool overwrite = false;
  bool force = false;  // bypass checkpoint config-hash checks

  // infer
  std::string image_path;
  std::string class_name;
  std::string density_out = "density.png";
  std::string heatmap_out;  // empty -> no heatmap

  // ablate
  std::string axis;  // num_exemplars | num_proposals | k_neighbors
  std::vector<int> values;
};

/// Run one pipeline stage; artifacts land under the run root, one directory
/// per stage, plus a machine-readable stage manifest. Returns the directory
/// the stage wrote into.
std::string run_stage(Stage stage, const RunConfig& cfg, const StageOptions& opts);

// Config -> typed module configs (stage drivers and tests share these).
SyntheticSpec synthetic_spec_from(const RunConfig& cfg);
EmbeddingConfig embedding_config_from(const RunConfig& cfg);
CounterConfig counter_config_from(const RunConfig& cfg);
VaeConfig vae_config_from(const RunConfig& cfg, int feature_dim, int semantic_dim);
PredictorConfig predictor_config_from(const RunConfig& cfg);
SelectorConfig selector_config_from(const RunConfig& cfg);

/// All trained models plus the semantic provider, loaded from checkpoints.
struct LoadedModels {
  EmbeddingNetwork embedding;
  BaseCountingModel base;
  ConditionalVAE vae;           // embedding-space generator
  ConditionalVAE vae_counting;  // exemplar-vector-space generator (baseline)
  ErrorPredictor predictor;
  SemanticProvider semantic;
};

LoadedModels load_models(const RunConfig& cfg, const std::string& run_root, bool force);

/// Evaluation modes reported by the eval stage.
enum class EvalMode {
  gt_exemplar,
  random,
  prototype_only,
  prototype_predictor,
  prototype_direct,
};
const char* eval_mode_name(EvalMode m);
const std::vector<EvalMode>& all_eval_modes();

struct EvalOutput {
  std::map<EvalMode, MetricsReport> reports;
  // Per-(mode, seed) MAE for the seed-dependent modes.
  std::map<EvalMode, std::vector<double>> per_seed_mae;
};

/// Evaluate every mode over the given records. Stochastic modes run once per
/// eval seed; their reports concatenate the per-seed (gt, pred) pairs.
EvalOutput run_evaluation(const std::vector<ImageRecord>& records, const LoadedModels& models,
                          const RunConfig& cfg);

struct AblationRow {
  int value = 0;
  MetricsReport report;
};

std::vector<AblationRow> run_ablation(const std::string& axis, const std::vector<int>& values,
                                      const std::vector<ImageRecord>& records,
                                      const LoadedModels& models, const RunConfig& cfg);

/// Correlate exemplar embeddings against a dense grid of patch embeddings,
/// min-max normalize, zero below threshold; returns the [H,W] mask map and
/// optionally writes a color overlay PNG.
Tensor emit_class_heatmap(const Image& image, const std::vector<BoundingBox>& selected_exemplars,
                          const EmbeddingNetwork& net, double threshold, int grid_stride = 8,
                          const std::string& out_path = {});

/// Grayscale density rendering (max-normalized) for inspection.
void write_density_png(const std::string& path, const DensityMap& density);

std::string resolve_run_root(const std::string& cli_value);

}  // namespace zsc
