// SPDX-License-Identifier: Apache-2.0
#include "zsc/stages.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>

#include "zsc/version.hpp"

namespace zsc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// One stage process at a time per run directory.
class RunLock {
 public:
  explicit RunLock(const fs::path& root) : path_(root / ".zsc.lock") {
    fs::create_directories(root);
    if (fs::exists(path_))
      throw std::runtime_error("run directory is locked by another stage (" + path_.string() +
                               "); remove the file if that run is gone");
    std::ofstream out(path_);
    out << "locked " << utc_timestamp() << "\n";
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

fs::path stage_output_dir(const fs::path& root, Stage stage, bool overwrite) {
  fs::path dir = root / stage_name(stage);
  if (fs::exists(dir) && !overwrite) {
    fs::path fresh;
    int suffix = 0;
    do {
      fresh = root / (std::string(stage_name(stage)) + "-" + utc_timestamp() +
                      (suffix ? "-" + std::to_string(suffix) : ""));
      ++suffix;
    } while (fs::exists(fresh));
    dir = fresh;
  }
  fs::create_directories(dir);
  return dir;
}

fs::path canonical_stage_dir(const fs::path& root, Stage stage) {
  return root / stage_name(stage);
}

void require_prereq(const fs::path& path, const std::string& producing_stage) {
  if (!fs::exists(path))
    throw std::runtime_error("missing prerequisite " + path.string() + "; run the '" +
                             producing_stage + "' stage first");
}

void write_stage_manifest(const fs::path& dir, Stage stage, const RunConfig& cfg,
                          double duration_s, const std::vector<std::string>& outputs) {
  json j{{"stage", stage_name(stage)},
         {"artifact_version", kVersion},
         {"config_hash", RunConfig::hash_hex(cfg.hash())},
         {"seed", std::to_string(cfg.seed())},
         {"timestamp_utc", utc_timestamp()},
         {"duration_seconds", duration_s},
         {"outputs", outputs}};
  write_text_file(dir / "stage_manifest.json", j.dump(1));
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string train_log_json(const TrainLog& log) {
  json j{{"epoch_loss", log.epoch_loss}, {"final_accuracy", log.final_accuracy}};
  return j.dump(1);
}

std::string join_classes(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    if (!out.empty()) out += ",";
    out += n;
  }
  return out;
}

std::vector<std::string> split_classes(const std::string& joined) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(joined);
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

CheckpointHeader make_header(const std::string& module, const RunConfig& cfg) {
  CheckpointHeader h;
  h.version = kVersion;
  h.module = module;
  h.config_hash = RunConfig::hash_hex(cfg.hash(module_hash_prefixes(module)));
  h.seed = cfg.seed();
  return h;
}

SemanticProvider resolve_semantic_provider(const RunConfig& cfg, const fs::path& root) {
  const std::string& mode = cfg.get_str("semantic.table");
  if (mode == "procedural")
    return SemanticProvider::procedural(static_cast<int>(cfg.get_int("semantic.dim")),
                                        cfg.seed());
  if (mode == "auto") {
    const fs::path table = canonical_stage_dir(root, Stage::synth_data) / "semantic_table.json";
    if (fs::exists(table)) return SemanticProvider::from_table_file(table.string());
    return SemanticProvider::procedural(static_cast<int>(cfg.get_int("semantic.dim")),
                                        cfg.seed());
  }
  return SemanticProvider::from_table_file(mode);
}

DatasetBundle load_preprocessed_dataset(const RunConfig& cfg, const fs::path& root) {
  const fs::path dataset_dir = canonical_stage_dir(root, Stage::synth_data) / "dataset";
  require_prereq(dataset_dir / "annotations" / "annotations.json", "synth-data");
  DatasetBundle bundle = load_dataset(dataset_dir.string());
  const int target_height = static_cast<int>(cfg.get_int("data.target_height"));
  for (Split s : {Split::train, Split::val, Split::test})
    for (auto& rec : bundle.split(s)) rec = preprocess_image(rec, target_height);
  return bundle;
}

uint64_t prototype_seed_of(const RunConfig& cfg) {
  return Rng::mix(cfg.seed(), Rng::hash_str("prototype"));
}

std::vector<VaeTrainSample> gather_vae_features(const DatasetBundle& bundle,
                                                const SemanticProvider& semantic,
                                                const std::function<Tensor(const ImageRecord&,
                                                                           const BoundingBox&)>&
                                                    embed_fn) {
  std::vector<VaeTrainSample> samples;
  for (const auto& rec : bundle.train) {
    const SemanticEmbedding sem = semantic.get(rec.class_name);
    for (const auto& box : rec.gt_boxes)
      samples.push_back(VaeTrainSample{embed_fn(rec, box), sem.vector});
  }
  return samples;
}

// ---- heatmap helpers ----

Tensor resize_bilinear_mono(const Tensor& in, int out_h, int out_w) {
  const int ih = in.dim(0), iw = in.dim(1);
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(ih) / out_h;
  const double sx = static_cast<double>(iw) / out_w;
  for (int r = 0; r < out_h; ++r) {
    double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(ih - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(iw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - x0;
      const double top = in.at2(y0, x0) * (1 - wx) + in.at2(y0, x1) * wx;
      const double bot = in.at2(y1, x0) * (1 - wx) + in.at2(y1, x1) * wx;
      out.at2(r, c) = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

void heat_color(double v, double& r, double& g, double& b) {
  // black -> blue -> red -> yellow ramp
  v = std::clamp(v, 0.0, 1.0);
  r = std::clamp(v * 2.0 - 0.5, 0.0, 1.0);
  g = std::clamp(v * 2.0 - 1.2, 0.0, 1.0);
  b = std::clamp(0.9 - v * 1.4, 0.0, 1.0) * std::clamp(v * 4.0, 0.0, 1.0);
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::synth_data: return "synth-data";
    case Stage::train_embed: return "train-embed";
    case Stage::train_counter: return "train-counter";
    case Stage::train_vae: return "train-vae";
    case Stage::train_predictor: return "train-predictor";
    case Stage::infer: return "infer";
    case Stage::eval: return "eval";
    default: return "ablate";
  }
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : {Stage::synth_data, Stage::train_embed, Stage::train_counter, Stage::train_vae,
                  Stage::train_predictor, Stage::infer, Stage::eval, Stage::ablate})
    if (name == stage_name(s)) return s;
  throw std::invalid_argument("unknown stage: " + name);
}

const char* eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::gt_exemplar: return "gt-exemplar";
    case EvalMode::random: return "random";
    case EvalMode::prototype_only: return "prototype-only";
    case EvalMode::prototype_predictor: return "prototype+predictor";
    default: return "prototype-direct-baseline";
  }
}

const std::vector<EvalMode>& all_eval_modes() {
  static const std::vector<EvalMode> modes = {EvalMode::gt_exemplar, EvalMode::random,
                                              EvalMode::prototype_only,
                                              EvalMode::prototype_predictor,
                                              EvalMode::prototype_direct};
  return modes;
}

std::string resolve_run_root(const std::string& cli_value) {
  if (!cli_value.empty()) return cli_value;
  if (const char* env = std::getenv("ZSC_RUN_DIR"); env && *env) return env;
  return "runs";
}

SyntheticSpec synthetic_spec_from(const RunConfig& cfg) {
  SyntheticSpec spec;
  spec.num_classes = static_cast<int>(cfg.get_int("data.num_classes"));
  spec.classes_per_split = {static_cast<int>(cfg.get_int("data.classes_train")),
                            static_cast<int>(cfg.get_int("data.classes_val")),
                            static_cast<int>(cfg.get_int("data.classes_test"))};
  spec.images_per_split = {static_cast<int>(cfg.get_int("data.images_train")),
                           static_cast<int>(cfg.get_int("data.images_val")),
                           static_cast<int>(cfg.get_int("data.images_test"))};
  spec.image_height = static_cast<int>(cfg.get_int("data.image_height"));
  spec.image_width = static_cast<int>(cfg.get_int("data.image_width"));
  spec.objects_per_image = {static_cast<int>(cfg.get_int("data.objects_min")),
                            static_cast<int>(cfg.get_int("data.objects_max"))};
  spec.object_scale = {static_cast<int>(cfg.get_int("data.object_scale_min")),
                       static_cast<int>(cfg.get_int("data.object_scale_max"))};
  spec.distractor_classes_per_image = {static_cast<int>(cfg.get_int("data.distractors_min")),
                                       static_cast<int>(cfg.get_int("data.distractors_max"))};
  spec.seed = cfg.seed();
  return spec;
}

EmbeddingConfig embedding_config_from(const RunConfig& cfg) {
  EmbeddingConfig e;
  e.embedding_dim = static_cast<int>(cfg.get_int("embed.dim"));
  e.patch_size = static_cast<int>(cfg.get_int("embed.patch_size"));
  e.epochs = static_cast<int>(cfg.get_int("embed.epochs"));
  e.batch_size = static_cast<int>(cfg.get_int("embed.batch"));
  e.lr = cfg.get_real("embed.lr");
  e.crop_jitter = cfg.get_real("embed.crop_jitter");
  e.seed = cfg.seed();
  return e;
}

CounterConfig counter_config_from(const RunConfig& cfg) {
  CounterConfig c;
  c.backbone_channels = cfg.get_int_list("counter.backbone");
  c.reduced_channels = static_cast<int>(cfg.get_int("counter.d"));
  c.head_channels = cfg.get_int_list("counter.head");
  c.exemplar_size = static_cast<int>(cfg.get_int("counter.exemplar_size"));
  c.n_exemplars = static_cast<int>(cfg.get_int("counter.n_exemplars"));
  c.epochs = static_cast<int>(cfg.get_int("counter.epochs"));
  c.batch_size = static_cast<int>(cfg.get_int("counter.batch"));
  c.lr = cfg.get_real("counter.lr");
  c.weight_decay = cfg.get_real("counter.weight_decay");
  c.sigma = cfg.get_real("data.sigma");
  c.seed = cfg.seed();
  return c;
}

VaeConfig vae_config_from(const RunConfig& cfg, int feature_dim, int semantic_dim) {
  VaeConfig v;
  v.feature_dim = feature_dim;
  v.semantic_dim = semantic_dim;
  v.latent_dim = static_cast<int>(cfg.get_int("vae.latent"));
  v.hidden = static_cast<int>(cfg.get_int("vae.hidden"));
  v.epochs = static_cast<int>(cfg.get_int("vae.epochs"));
  v.batch_size = static_cast<int>(cfg.get_int("vae.batch"));
  v.lr = cfg.get_real("vae.lr");
  v.kl_weight = cfg.get_real("vae.kl_weight");
  v.seed = cfg.seed();
  return v;
}

PredictorConfig predictor_config_from(const RunConfig& cfg) {
  PredictorConfig p;
  p.conv_channels = cfg.get_int_list("predictor.channels");
  p.conv_strides = cfg.get_int_list("predictor.strides");
  p.epochs = static_cast<int>(cfg.get_int("predictor.epochs"));
  p.batch_size = static_cast<int>(cfg.get_int("predictor.batch"));
  p.patches_per_image = static_cast<int>(cfg.get_int("predictor.patches_per_image"));
  p.lr = cfg.get_real("predictor.lr");
  p.normalize_target = cfg.get_int("predictor.normalize_target") != 0;
  p.patch_sizes = {static_cast<int>(cfg.get_int("selector.patch_min")),
                   static_cast<int>(cfg.get_int("selector.patch_max"))};
  p.aspect_lo = cfg.get_real("selector.aspect_min");
  p.aspect_hi = cfg.get_real("selector.aspect_max");
  p.seed = cfg.seed();
  return p;
}

SelectorConfig selector_config_from(const RunConfig& cfg) {
  SelectorConfig s;
  s.m = static_cast<int>(cfg.get_int("selector.m"));
  s.k = static_cast<int>(cfg.get_int("selector.k"));
  s.s = static_cast<int>(cfg.get_int("selector.s"));
  s.size_range = {static_cast<int>(cfg.get_int("selector.patch_min")),
                  static_cast<int>(cfg.get_int("selector.patch_max"))};
  s.aspect_lo = cfg.get_real("selector.aspect_min");
  s.aspect_hi = cfg.get_real("selector.aspect_max");
  s.seed = cfg.seed();
  const std::string& rank = cfg.get_str("selector.rank_by");
  if (rank == "predictor")
    s.rank_by = SelectorConfig::RankBy::predictor;
  else if (rank == "objectness")
    s.rank_by = SelectorConfig::RankBy::objectness;
  else
    throw std::invalid_argument("selector.rank_by must be 'predictor' or 'objectness'");
  return s;
}

LoadedModels load_models(const RunConfig& cfg, const std::string& run_root, bool force) {
  const fs::path root(run_root);
  LoadedModels out;
  out.semantic = resolve_semantic_provider(cfg, root);
  Rng dummy(0);

  {
    const fs::path path = canonical_stage_dir(root, Stage::train_embed) / "embed.ckpt";
    require_prereq(path, "train-embed");
    Checkpoint ckpt = load_checkpoint(path.string());
    check_config_hash(ckpt.header,
                      RunConfig::hash_hex(cfg.hash(module_hash_prefixes("embed"))), force);
    out.embedding = EmbeddingNetwork(embedding_config_from(cfg),
                                     split_classes(ckpt.header.meta.at("classes")), dummy);
    load_into_params(out.embedding.params(), ckpt);
    out.embedding.trained = true;
  }
  {
    const fs::path path = canonical_stage_dir(root, Stage::train_counter) / "counter.ckpt";
    require_prereq(path, "train-counter");
    Checkpoint ckpt = load_checkpoint(path.string());
    check_config_hash(ckpt.header,
                      RunConfig::hash_hex(cfg.hash(module_hash_prefixes("counter"))), force);
    out.base = BaseCountingModel(counter_config_from(cfg), dummy);
    load_into_params(out.base.params(), ckpt);
    out.base.trained = true;
  }
  for (const char* which : {"vae", "vae_counting"}) {
    const fs::path path =
        canonical_stage_dir(root, Stage::train_vae) / (std::string(which) + ".ckpt");
    require_prereq(path, "train-vae");
    Checkpoint ckpt = load_checkpoint(path.string());
    check_config_hash(ckpt.header, RunConfig::hash_hex(cfg.hash(module_hash_prefixes(which))),
                      force);
    const int feature_dim = std::stoi(ckpt.header.meta.at("feature_dim"));
    const int semantic_dim = std::stoi(ckpt.header.meta.at("semantic_dim"));
    if (semantic_dim != out.semantic.dim())
      throw std::runtime_error(std::string("semantic dimension changed since '") + which +
                               "' was trained (" + std::to_string(semantic_dim) + " vs " +
                               std::to_string(out.semantic.dim()) + ")");
    ConditionalVAE vae(vae_config_from(cfg, feature_dim, semantic_dim), dummy);
    load_into_params(vae.params(), ckpt);
    vae.trained = true;
    (std::string(which) == "vae" ? out.vae : out.vae_counting) = std::move(vae);
  }
  {
    const fs::path path =
        canonical_stage_dir(root, Stage::train_predictor) / "predictor.ckpt";
    require_prereq(path, "train-predictor");
    Checkpoint ckpt = load_checkpoint(path.string());
    check_config_hash(ckpt.header,
                      RunConfig::hash_hex(cfg.hash(module_hash_prefixes("predictor"))), force);
    out.predictor = ErrorPredictor(predictor_config_from(cfg),
                                   out.base.reduced_channels() + 1, dummy);
    load_into_params(out.predictor.params(), ckpt);
    out.predictor.trained = true;
  }
  return out;
}

// ---- evaluation ----

namespace {

struct EvalContext {
  Models models;
  std::map<std::string, ClassPrototype> prototypes;          // embedding space
  std::map<std::string, ClassPrototype> counting_prototypes; // exemplar-vector space
};

EvalContext make_eval_context(const LoadedModels& lm, const RunConfig& cfg,
                              const std::vector<ImageRecord>& records) {
  EvalContext ctx;
  ctx.models.embedding = &lm.embedding;
  ctx.models.vae = &lm.vae;
  ctx.models.base = &lm.base;
  ctx.models.predictor = &lm.predictor;
  ctx.models.semantic = &lm.semantic;
  ctx.models.prototype_samples = static_cast<int>(cfg.get_int("proto.samples"));
  ctx.models.prototype_seed = prototype_seed_of(cfg);
  std::set<std::string> classes;
  for (const auto& rec : records) classes.insert(rec.class_name);
  for (const auto& cls : classes) {
    const SemanticEmbedding sem = lm.semantic.get(cls);
    ctx.prototypes[cls] = generate_class_prototype(lm.vae, sem, ctx.models.prototype_samples,
                                                   ctx.models.prototype_seed);
    ctx.counting_prototypes[cls] = generate_class_prototype(
        lm.vae_counting, sem, ctx.models.prototype_samples, ctx.models.prototype_seed);
  }
  return ctx;  // callers point models.prototype_cache at ctx.prototypes
}

uint64_t image_eval_seed(const RunConfig& cfg, uint64_t eval_seed_idx, const std::string& id) {
  return Rng::mix(Rng::mix(cfg.seed(), 0xe7a1ull + eval_seed_idx), Rng::hash_str(id));
}

}  // namespace

EvalOutput run_evaluation(const std::vector<ImageRecord>& records, const LoadedModels& lm,
                          const RunConfig& cfg) {
  if (records.empty()) throw std::invalid_argument("run_evaluation: no records");
  const SelectorConfig base_cfg = selector_config_from(cfg);
  const int num_seeds = std::max<int>(1, static_cast<int>(cfg.get_int("eval.num_seeds")));
  EvalContext ctx = make_eval_context(lm, cfg, records);
  ctx.models.prototype_cache = &ctx.prototypes;

  std::vector<double> gts_once;
  for (const auto& rec : records) gts_once.push_back(static_cast<double>(rec.dots.size()));

  EvalOutput out;
  // Deterministic modes: one pass.
  {
    std::vector<double> gt_preds, direct_preds;
    for (const auto& rec : records) {
      std::vector<BoundingBox> boxes(rec.gt_boxes.begin(),
                                     rec.gt_boxes.begin() +
                                         std::min<size_t>(rec.gt_boxes.size(),
                                                          static_cast<size_t>(base_cfg.s)));
      gt_preds.push_back(count_with_boxes(rec.pixels, boxes, lm.base));
      const ClassPrototype& proto = ctx.counting_prototypes.at(rec.class_name);
      const FeatureMap fm = lm.base.extract_features(rec.pixels);
      const SimilarityMap sim = similarity_map(fm, {ExemplarVector{proto.vector}});
      direct_preds.push_back(count(lm.base.predict_density(fm, sim)));
    }
    out.reports[EvalMode::gt_exemplar] = evaluate(gts_once, gt_preds, true);
    out.reports[EvalMode::prototype_direct] = evaluate(gts_once, direct_preds, true);
    out.per_seed_mae[EvalMode::gt_exemplar] = {out.reports[EvalMode::gt_exemplar].mae};
    out.per_seed_mae[EvalMode::prototype_direct] = {out.reports[EvalMode::prototype_direct].mae};
  }

  // Stochastic modes: one pass per eval seed, reports over the concatenation.
  std::vector<double> gts_all, random_preds, nearest_preds, full_preds;
  for (int j = 0; j < num_seeds; ++j) {
    std::vector<double> seed_gts, seed_random, seed_nearest, seed_full;
    for (const auto& rec : records) {
      SelectorConfig scfg = base_cfg;
      scfg.seed = image_eval_seed(cfg, static_cast<uint64_t>(j), rec.id);
      seed_gts.push_back(static_cast<double>(rec.dots.size()));
      seed_random.push_back(count_with_random_exemplars(rec.pixels, scfg.s, scfg.size_range,
                                                        lm.base, scfg.seed));
      const ScoredCandidates scored =
          score_candidates(rec.pixels, rec.id, rec.class_name, ctx.models, scfg);
      seed_nearest.push_back(finalize_nearest(rec.pixels, scored, ctx.models, scfg).count);
      seed_full.push_back(finalize_selection(rec.pixels, scored, ctx.models, scfg).count);
    }
    out.per_seed_mae[EvalMode::random].push_back(evaluate(seed_gts, seed_random).mae);
    out.per_seed_mae[EvalMode::prototype_only].push_back(evaluate(seed_gts, seed_nearest).mae);
    out.per_seed_mae[EvalMode::prototype_predictor].push_back(evaluate(seed_gts, seed_full).mae);
    gts_all.insert(gts_all.end(), seed_gts.begin(), seed_gts.end());
    random_preds.insert(random_preds.end(), seed_random.begin(), seed_random.end());
    nearest_preds.insert(nearest_preds.end(), seed_nearest.begin(), seed_nearest.end());
    full_preds.insert(full_preds.end(), seed_full.begin(), seed_full.end());
  }
  out.reports[EvalMode::random] = evaluate(gts_all, random_preds, true);
  out.reports[EvalMode::prototype_only] = evaluate(gts_all, nearest_preds, true);
  out.reports[EvalMode::prototype_predictor] = evaluate(gts_all, full_preds, true);
  return out;
}

std::vector<AblationRow> run_ablation(const std::string& axis, const std::vector<int>& values,
                                      const std::vector<ImageRecord>& records,
                                      const LoadedModels& lm, const RunConfig& cfg) {
  if (values.empty()) throw std::invalid_argument("run_ablation: empty values list");
  if (records.empty()) throw std::invalid_argument("run_ablation: no records");
  const SelectorConfig base_cfg = selector_config_from(cfg);
  const int num_seeds = std::max<int>(1, static_cast<int>(cfg.get_int("eval.num_seeds")));
  EvalContext ctx = make_eval_context(lm, cfg, records);
  ctx.models.prototype_cache = &ctx.prototypes;

  std::map<int, std::vector<double>> preds_by_value;
  std::vector<double> gts;

  if (axis == "num_exemplars" || axis == "k_neighbors") {
    SelectorConfig scan_cfg = base_cfg;
    if (axis == "num_exemplars") {
      const int max_s = *std::max_element(values.begin(), values.end());
      if (max_s > scan_cfg.k) scan_cfg.k = std::min(scan_cfg.m, max_s);
    } else {
      const int max_k = *std::max_element(values.begin(), values.end());
      scan_cfg.k = std::min(scan_cfg.m, max_k);
    }
    for (int j = 0; j < num_seeds; ++j) {
      for (const auto& rec : records) {
        SelectorConfig scfg = scan_cfg;
        scfg.seed = image_eval_seed(cfg, static_cast<uint64_t>(j), rec.id);
        const ScoredCandidates scored =
            score_candidates(rec.pixels, rec.id, rec.class_name, ctx.models, scfg);
        gts.push_back(static_cast<double>(rec.dots.size()));
        for (int v : values) {
          const SelectionResult res =
              axis == "num_exemplars"
                  ? finalize_selection(rec.pixels, scored, ctx.models, scfg, v)
                  : finalize_selection(rec.pixels, scored, ctx.models, scfg, 0, v);
          preds_by_value[v].push_back(res.count);
        }
      }
    }
  } else if (axis == "num_proposals") {
    for (int j = 0; j < num_seeds; ++j) {
      for (const auto& rec : records) {
        gts.push_back(static_cast<double>(rec.dots.size()));
        for (int v : values) {
          SelectorConfig scfg = base_cfg;
          scfg.m = v;
          scfg.k = std::min(scfg.k, scfg.m);
          scfg.seed = image_eval_seed(cfg, static_cast<uint64_t>(j), rec.id);
          preds_by_value[v].push_back(
              select_exemplars(rec.pixels, rec.id, rec.class_name, ctx.models, scfg).count);
        }
      }
    }
  } else {
    throw std::invalid_argument(
        "run_ablation: axis must be num_exemplars, num_proposals or k_neighbors");
  }

  std::vector<AblationRow> rows;
  for (int v : values) rows.push_back(AblationRow{v, evaluate(gts, preds_by_value.at(v))});
  return rows;
}

Tensor emit_class_heatmap(const Image& image, const std::vector<BoundingBox>& selected_exemplars,
                          const EmbeddingNetwork& net, double threshold, int grid_stride,
                          const std::string& out_path) {
  if (selected_exemplars.empty())
    throw std::invalid_argument("emit_class_heatmap: no exemplars");
  if (grid_stride < 1) throw std::invalid_argument("emit_class_heatmap: bad stride");
  const int h = image_height(image), w = image_width(image);

  std::vector<Tensor> exemplar_embs;
  for (const auto& b : selected_exemplars) exemplar_embs.push_back(net.embed_patch(image, b));

  // Window size: median exemplar extent, clamped to the image.
  std::vector<int> hs, ws;
  for (const auto& b : selected_exemplars) {
    hs.push_back(b.height());
    ws.push_back(b.width());
  }
  std::sort(hs.begin(), hs.end());
  std::sort(ws.begin(), ws.end());
  const int win_h = std::clamp(hs[hs.size() / 2], 2, h);
  const int win_w = std::clamp(ws[ws.size() / 2], 2, w);

  const int gh = std::max(1, h / grid_stride), gw = std::max(1, w / grid_stride);
  Tensor grid({gh, gw});
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const double cy = (gy + 0.5) * grid_stride;
      const double cx = (gx + 0.5) * grid_stride;
      int x1 = static_cast<int>(std::lround(cx - win_w / 2.0));
      int y1 = static_cast<int>(std::lround(cy - win_h / 2.0));
      x1 = std::clamp(x1, 0, w - win_w);
      y1 = std::clamp(y1, 0, h - win_h);
      const Tensor emb = net.embed_patch(image, BoundingBox{x1, y1, x1 + win_w, y1 + win_h});
      double acc = 0.0;
      for (const auto& ex : exemplar_embs)
        for (int64_t i = 0; i < emb.numel(); ++i) acc += emb[i] * ex[i];
      grid.at2(gy, gx) = acc / static_cast<double>(exemplar_embs.size());
    }
  }

  Tensor heat = resize_bilinear_mono(grid, h, w);
  double lo = heat[0], hi = heat[0];
  for (int64_t i = 0; i < heat.numel(); ++i) {
    lo = std::min(lo, heat[i]);
    hi = std::max(hi, heat[i]);
  }
  if (hi > lo) {
    const double inv = 1.0 / (hi - lo);
    for (int64_t i = 0; i < heat.numel(); ++i) heat[i] = (heat[i] - lo) * inv;
  } else {
    heat.fill(0.0);
  }
  for (int64_t i = 0; i < heat.numel(); ++i)
    if (heat[i] < threshold) heat[i] = 0.0;

  if (!out_path.empty()) {
    Image overlay({3, h, w});
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double hr, hg, hb;
        heat_color(heat.at2(r, c), hr, hg, hb);
        overlay.at3(0, r, c) = 0.45 * image.at3(0, r, c) + 0.55 * hr;
        overlay.at3(1, r, c) = 0.45 * image.at3(1, r, c) + 0.55 * hg;
        overlay.at3(2, r, c) = 0.45 * image.at3(2, r, c) + 0.55 * hb;
      }
    write_png(out_path, overlay);
  }
  return heat;
}

void write_density_png(const std::string& path, const DensityMap& density) {
  const int h = density.height(), w = density.width();
  double peak = 0.0;
  for (int64_t i = 0; i < density.values.numel(); ++i) peak = std::max(peak, density.values[i]);
  const double inv = peak > 0 ? 1.0 / peak : 0.0;
  Image im({3, h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double hr, hg, hb;
      heat_color(density.values.at2(r, c) * inv, hr, hg, hb);
      im.at3(0, r, c) = hr;
      im.at3(1, r, c) = hg;
      im.at3(2, r, c) = hb;
    }
  write_png(path, im);
}

// ---- stage drivers ----

namespace {

std::string run_synth_data(const RunConfig& cfg, const fs::path& dir) {
  const SyntheticSpec spec = synthetic_spec_from(cfg);
  DatasetBundle bundle = generate_synthetic_dataset(spec);
  save_dataset(bundle, (dir / "dataset").string());

  // Structured semantic vectors for every class in the dataset; the
  // file-backed provider picks this table up in 'auto' mode.
  std::vector<std::string> all_classes;
  for (Split s : {Split::train, Split::val, Split::test})
    for (const auto& c : bundle.classes(s)) all_classes.push_back(c);
  const auto table = build_structured_semantic_table(
      all_classes, static_cast<int>(cfg.get_int("semantic.dim")), cfg.seed());
  save_semantic_table(table, (dir / "semantic_table.json").string());
  return "dataset with " + std::to_string(bundle.train.size()) + "/" +
         std::to_string(bundle.val.size()) + "/" + std::to_string(bundle.test.size()) +
         " train/val/test images";
}

std::string run_train_embed(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
  DatasetBundle bundle = load_preprocessed_dataset(cfg, root);
  TrainLog log;
  EmbeddingNetwork net =
      train_embedding_network(bundle.train, bundle.classes_train, embedding_config_from(cfg), &log);
  CheckpointHeader header = make_header("embed", cfg);
  header.meta["classes"] = join_classes(net.class_names());
  save_checkpoint((dir / "embed.ckpt").string(), header, snapshot_params(net.params()));
  write_text_file(dir / "train_log.json", train_log_json(log));
  char buf[96];
  std::snprintf(buf, sizeof(buf), "final train accuracy %.4f", log.final_accuracy);
  return buf;
}

std::string run_train_counter(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
  DatasetBundle bundle = load_preprocessed_dataset(cfg, root);
  TrainLog log;
  BaseCountingModel model = train_base_model(bundle.train, counter_config_from(cfg), &log);
  CheckpointHeader header = make_header("counter", cfg);
  save_checkpoint((dir / "counter.ckpt").string(), header, snapshot_params(model.params()));
  write_text_file(dir / "train_log.json", train_log_json(log));
  char buf[96];
  std::snprintf(buf, sizeof(buf), "final epoch loss %.6f", log.epoch_loss.back());
  return buf;
}

std::string run_train_vae(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
  DatasetBundle bundle = load_preprocessed_dataset(cfg, root);
  const SemanticProvider semantic = resolve_semantic_provider(cfg, root);

  // Embedding-space generator (drives class-relevant patch selection).
  const fs::path embed_path = canonical_stage_dir(root, Stage::train_embed) / "embed.ckpt";
  require_prereq(embed_path, "train-embed");
  Checkpoint embed_ckpt = load_checkpoint(embed_path.string());
  Rng dummy(0);
  EmbeddingNetwork embed_net(embedding_config_from(cfg),
                             split_classes(embed_ckpt.header.meta.at("classes")), dummy);
  load_into_params(embed_net.params(), embed_ckpt);
  embed_net.trained = true;

  TrainLog log_a;
  {
    auto samples = gather_vae_features(bundle, semantic,
                                       [&](const ImageRecord& rec, const BoundingBox& box) {
                                         return embed_net.embed_patch(rec.pixels, box);
                                       });
    VaeConfig vcfg = vae_config_from(cfg, embed_net.embedding_dim(), semantic.dim());
    ConditionalVAE vae = train_vae(samples, vcfg, &log_a);
    CheckpointHeader header = make_header("vae", cfg);
    header.meta["feature_dim"] = std::to_string(vcfg.feature_dim);
    header.meta["semantic_dim"] = std::to_string(vcfg.semantic_dim);
    save_checkpoint((dir / "vae.ckpt").string(), header, snapshot_params(vae.params()));
  }

  // Exemplar-vector-space generator (prototype-direct correlation baseline).
  const fs::path counter_path = canonical_stage_dir(root, Stage::train_counter) / "counter.ckpt";
  require_prereq(counter_path, "train-counter");
  Checkpoint counter_ckpt = load_checkpoint(counter_path.string());
  BaseCountingModel base(counter_config_from(cfg), dummy);
  load_into_params(base.params(), counter_ckpt);
  base.trained = true;

  TrainLog log_b;
  {
    auto samples = gather_vae_features(bundle, semantic,
                                       [&](const ImageRecord& rec, const BoundingBox& box) {
                                         return base.exemplar_vector(rec.pixels, box).values;
                                       });
    VaeConfig vcfg = vae_config_from(cfg, base.reduced_channels(), semantic.dim());
    ConditionalVAE vae = train_vae(samples, vcfg, &log_b);
    CheckpointHeader header = make_header("vae_counting", cfg);
    header.meta["feature_dim"] = std::to_string(vcfg.feature_dim);
    header.meta["semantic_dim"] = std::to_string(vcfg.semantic_dim);
    save_checkpoint((dir / "vae_counting.ckpt").string(), header, snapshot_params(vae.params()));
  }
  json j{{"vae_epoch_loss", log_a.epoch_loss}, {"vae_counting_epoch_loss", log_b.epoch_loss}};
  write_text_file(dir / "train_log.json", j.dump(1));
  char buf[96];
  std::snprintf(buf, sizeof(buf), "final losses %.4f / %.4f", log_a.epoch_loss.back(),
                log_b.epoch_loss.back());
  return buf;
}

std::string run_train_predictor(const RunConfig& cfg, const fs::path& root, const fs::path& dir) {
  DatasetBundle bundle = load_preprocessed_dataset(cfg, root);
  const fs::path counter_path = canonical_stage_dir(root, Stage::train_counter) / "counter.ckpt";
  require_prereq(counter_path, "train-counter");
  Checkpoint counter_ckpt = load_checkpoint(counter_path.string());
  Rng dummy(0);
  BaseCountingModel base(counter_config_from(cfg), dummy);
  load_into_params(base.params(), counter_ckpt);
  base.trained = true;

  TrainLog log;
  ErrorPredictor pred = train_error_predictor(base, bundle.train, predictor_config_from(cfg), &log);
  CheckpointHeader header = make_header("predictor", cfg);
  save_checkpoint((dir / "predictor.ckpt").string(), header, snapshot_params(pred.params()));
  write_text_file(dir / "train_log.json", train_log_json(log));
  char buf[96];
  std::snprintf(buf, sizeof(buf), "final epoch mse %.6f", log.epoch_loss.back());
  return buf;
}

std::string run_eval_stage(const RunConfig& cfg, const StageOptions& opts, const fs::path& root,
                           const fs::path& dir, std::vector<std::string>& outputs) {
  DatasetBundle bundle = load_preprocessed_dataset(cfg, root);
  LoadedModels models = load_models(cfg, root.string(), opts.force);
  const Split split = split_from_name(cfg.get_str("eval.split"));
  const auto& records = bundle.split(split);

  EvalOutput out = run_evaluation(records, models, cfg);

  std::string csv = "mode," + MetricsReport::csv_header() + "\n";
  for (EvalMode m : all_eval_modes()) {
    const std::string name = eval_mode_name(m);
    const fs::path jpath = dir / ("metrics_" + name + ".json");
    write_text_file(jpath, out.reports.at(m).to_json());
    outputs.push_back(jpath.string());
    csv += name + "," + out.reports.at(m).csv_row() + "\n";
  }
  write_text_file(dir / "metrics.csv", csv);
  outputs.push_back((dir / "metrics.csv").string());

  json per_seed = json::object();
  for (const auto& [mode, maes] : out.per_seed_mae) per_seed[eval_mode_name(mode)] = maes;
  write_text_file(dir / "per_seed_mae.json", per_seed.dump(1));
  outputs.push_back((dir / "per_seed_mae.json").string());

  if (cfg.get_int("eval.save_density") != 0) {
    fs::create_directories(dir / "density");
    EvalContext ctx = make_eval_context(models, cfg, records);
    ctx.models.prototype_cache = &ctx.prototypes;
    for (const auto& rec : records) {
      SelectorConfig scfg = selector_config_from(cfg);
      scfg.seed = image_eval_seed(cfg, 0, rec.id);
      const SelectionResult res =
          select_exemplars(rec.pixels, rec.id, rec.class_name, ctx.models, scfg);
      write_density_png((dir / "density" / (rec.id + ".png")).string(), res.density);
    }
  }

  std::string summary;
  for (EvalMode m : all_eval_modes()) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s mae %.3f; ", eval_mode_name(m), out.reports.at(m).mae);
    summary += buf;
  }
  return summary;
}

std::string run_ablate_stage(const RunConfig& cfg, const StageOptions& opts, const fs::path& root,
                             const fs::path& dir, std::vector<std::string>& outputs) {
  if (opts.axis.empty()) throw std::invalid_argument("ablate: --axis is required");
  std::vector<int> values = opts.values;
  if (values.empty()) {
    if (opts.axis == "num_exemplars") values = {1, 2, 3, 4, 5};
    else if (opts.axis == "num_proposals") values = {150, 300, 450, 600};
    else if (opts.axis == "k_neighbors") values = {5, 10, 25, 50};
  }
  DatasetBundle bundle = load_preprocessed_dataset(cfg, root);
  LoadedModels models = load_models(cfg, root.string(), opts.force);
  const Split split = split_from_name(cfg.get_str("eval.split"));

  const auto rows = run_ablation(opts.axis, values, bundle.split(split), models, cfg);
  std::string csv = "axis,value," + MetricsReport::csv_header() + "\n";
  for (const auto& row : rows)
    csv += opts.axis + "," + std::to_string(row.value) + "," + row.report.csv_row() + "\n";
  const fs::path out_path = dir / ("ablation_" + opts.axis + ".csv");
  write_text_file(out_path, csv);
  outputs.push_back(out_path.string());
  return "wrote " + std::to_string(rows.size()) + " rows";
}

std::string run_infer_stage(const RunConfig& cfg, const StageOptions& opts, const fs::path& root,
                            std::vector<std::string>& outputs) {
  if (opts.image_path.empty() || opts.class_name.empty())
    throw std::invalid_argument("infer: --image and --class are required");
  LoadedModels lm = load_models(cfg, root.string(), opts.force);

  ImageRecord rec;
  rec.id = fs::path(opts.image_path).stem().string();
  rec.pixels = read_png(opts.image_path);
  rec.class_name = opts.class_name;
  rec = preprocess_image(rec, static_cast<int>(cfg.get_int("data.target_height")));

  Models models;
  models.embedding = &lm.embedding;
  models.vae = &lm.vae;
  models.base = &lm.base;
  models.predictor = &lm.predictor;
  models.semantic = &lm.semantic;
  models.prototype_samples = static_cast<int>(cfg.get_int("proto.samples"));
  models.prototype_seed = prototype_seed_of(cfg);

  SelectorConfig scfg = selector_config_from(cfg);
  scfg.seed = Rng::mix(cfg.seed(), Rng::hash_str(rec.id));
  std::unique_ptr<FileProposalSource> file_source;
  if (!cfg.get_str("selector.proposals").empty()) {
    file_source = std::make_unique<FileProposalSource>(cfg.get_str("selector.proposals"));
    models.proposals = file_source.get();
  }

  const SelectionResult res = select_exemplars(rec.pixels, rec.id, rec.class_name, models, scfg);
  write_density_png(opts.density_out, res.density);
  outputs.push_back(opts.density_out);
  if (!opts.heatmap_out.empty()) {
    std::vector<BoundingBox> boxes;
    for (int idx : res.exemplar_indices)
      boxes.push_back(res.candidates[static_cast<size_t>(idx)].box);
    emit_class_heatmap(rec.pixels, boxes, lm.embedding, cfg.get_real("heatmap.threshold"),
                       static_cast<int>(cfg.get_int("heatmap.stride")), opts.heatmap_out);
    outputs.push_back(opts.heatmap_out);
  }
  // The single count line the CLI contract promises.
  char buf[64];
  std::snprintf(buf, sizeof(buf), "count: %.6f", res.count);
  printf("%s\n", buf);
  return buf;
}

}  // namespace

std::string run_stage(Stage stage, const RunConfig& cfg, const StageOptions& opts) {
  const fs::path root(resolve_run_root(opts.run_root));
  fs::create_directories(root);
  RunLock lock(root);
  StageTimer timer;

  const fs::path dir = stage_output_dir(root, stage, opts.overwrite);
  std::vector<std::string> outputs;
  std::string note;
  switch (stage) {
    case Stage::synth_data: note = run_synth_data(cfg, dir); break;
    case Stage::train_embed: note = run_train_embed(cfg, root, dir); break;
    case Stage::train_counter: note = run_train_counter(cfg, root, dir); break;
    case Stage::train_vae: note = run_train_vae(cfg, root, dir); break;
    case Stage::train_predictor: note = run_train_predictor(cfg, root, dir); break;
    case Stage::eval: note = run_eval_stage(cfg, opts, root, dir, outputs); break;
    case Stage::ablate: note = run_ablate_stage(cfg, opts, root, dir, outputs); break;
    case Stage::infer: note = run_infer_stage(cfg, opts, root, outputs); break;
  }
  write_stage_manifest(dir, stage, cfg, timer.seconds(), outputs);
  if (stage != Stage::infer)
    fprintf(stderr, "[%s] %s (%.1fs) -> %s\n", stage_name(stage), note.c_str(), timer.seconds(),
            dir.string().c_str());
  return dir.string();
}

}  // namespace zsc
