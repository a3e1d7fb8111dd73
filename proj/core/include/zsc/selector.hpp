// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "zsc/counter.hpp"
#include "zsc/cvae.hpp"
#include "zsc/embedding.hpp"

namespace zsc {

struct SelectorConfig {
  int m = 450;  // candidates sampled per image
  int k = 10;   // nearest neighbors kept as class-relevant
  int s = 3;    // final exemplars
  IntRange size_range{32, 96};
  double aspect_lo = 0.75, aspect_hi = 1.33;
  uint64_t seed = 1;
  enum class RankBy { predictor, objectness } rank_by = RankBy::predictor;

  void validate() const;  // enforces 1 <= s <= k <= m
};

struct CandidatePatch {
  enum class Source { random, external };
  BoundingBox box;
  Tensor embedding;
  double prototype_distance = -1.0;  // set by select_class_relevant
  std::optional<double> predicted_error;
  std::optional<double> objectness;  // external proposals may carry a score
  Source source = Source::random;
};

/// Uniform random boxes: side from size_range, aspect jitter, position
/// uniform subject to full containment. Deterministic per cfg.seed.
std::vector<BoundingBox> sample_patches(int image_height, int image_width,
                                        const SelectorConfig& cfg);

/// Indices of the k candidates nearest to the prototype (L2 on embeddings),
/// ties broken by ascending candidate index; records distances on candidates.
std::vector<int> select_class_relevant(std::vector<CandidatePatch>& candidates,
                                       const ClassPrototype& prototype, int k);

struct Proposal {
  BoundingBox box;
  std::optional<double> score;
};

/// Candidate-patch supplier. The random sampler and any external generator
/// (file-backed boxes, an RPN dump, ...) plug in through the same contract.
class ProposalSource {
 public:
  virtual ~ProposalSource() = default;
  virtual std::vector<Proposal> proposals(const std::string& image_id, int image_height,
                                          int image_width, const SelectorConfig& cfg) const = 0;
  virtual CandidatePatch::Source kind() const { return CandidatePatch::Source::external; }
};

class RandomProposalSource final : public ProposalSource {
 public:
  std::vector<Proposal> proposals(const std::string& image_id, int image_height, int image_width,
                                  const SelectorConfig& cfg) const override;
  CandidatePatch::Source kind() const override { return CandidatePatch::Source::random; }
};

/// JSON file: {"image_id": [[x1,y1,x2,y2], ...] or [[x1,y1,x2,y2,score], ...]}.
class FileProposalSource final : public ProposalSource {
 public:
  explicit FileProposalSource(const std::string& path);
  std::vector<Proposal> proposals(const std::string& image_id, int image_height, int image_width,
                                  const SelectorConfig& cfg) const override;

 private:
  std::map<std::string, std::vector<Proposal>> by_image_;
};

struct PredictorConfig {
  std::vector<int> conv_channels = {24, 16, 16, 8, 8};
  std::vector<int> conv_strides = {2, 2, 1, 1, 1};
  int epochs = 12;
  int batch_size = 8;
  int patches_per_image = 4;
  double lr = 1e-3;
  bool normalize_target = true;  // regress eps / max(N*, 1) instead of raw eps
  IntRange patch_sizes{32, 96};  // training-patch sampler, mirrors the selector
  double aspect_lo = 0.75, aspect_hi = 1.33;
  uint64_t seed = 1;
};

/// Regresses the counting error the frozen base model makes when a given
/// patch serves as the exemplar. Input is [F(I), S] channel-concatenated.
class ErrorPredictor {
 public:
  ErrorPredictor() = default;
  ErrorPredictor(const PredictorConfig& cfg, int in_channels, Rng& rng);

  ad::Var forward(const ad::Var& feat_sim) const;  // [d+1,h,w] -> [1]
  double predict(const FeatureMap& featmap, const SimilarityMap& simmap) const;

  const PredictorConfig& config() const { return cfg_; }
  int in_channels() const { return in_channels_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  bool trained = false;

 private:
  PredictorConfig cfg_;
  int in_channels_ = 0;
  nn::ParamStore params_;
  std::vector<nn::Conv2d> convs_;
  nn::Linear head_;
};

double predict_patch_error(const ErrorPredictor& predictor, const FeatureMap& featmap,
                           const SimilarityMap& simmap);

ErrorPredictor train_error_predictor(const BaseCountingModel& base_model,
                                     const std::vector<ImageRecord>& train_split,
                                     const PredictorConfig& cfg, TrainLog* log = nullptr);

/// Everything the zero-shot pipeline needs, wired once per run.
struct Models {
  const EmbeddingNetwork* embedding = nullptr;
  const ConditionalVAE* vae = nullptr;  // embedding-space feature generator
  const BaseCountingModel* base = nullptr;
  const ErrorPredictor* predictor = nullptr;
  const SemanticProvider* semantic = nullptr;
  const ProposalSource* proposals = nullptr;  // null -> random sampling
  int prototype_samples = 256;
  uint64_t prototype_seed = 1;
  // Optional precomputed prototypes (e.g. the eval driver computes each val
  // class once); falls back to generate_class_prototype when absent.
  const std::map<std::string, ClassPrototype>* prototype_cache = nullptr;
};

struct SelectionResult {
  std::vector<CandidatePatch> candidates;
  std::vector<int> class_relevant_indices;
  std::vector<int> exemplar_indices;
  DensityMap density;
  double count = 0.0;
};

/// Stage 1+2 of the pipeline: sample -> embed -> k-NN -> per-patch error
/// scores. Kept separate so sweeps over s or k reuse the expensive part.
struct ScoredCandidates {
  std::vector<CandidatePatch> candidates;
  std::vector<int> class_relevant;  // ordered by (distance, index)
  FeatureMap featmap;
  ClassPrototype prototype;
};

ScoredCandidates score_candidates(const Image& image, const std::string& image_id,
                                  const std::string& class_name, const Models& models,
                                  const SelectorConfig& cfg);

/// Top-s by predicted error (or objectness score), then count with those
/// exemplars. `override_s` <= 0 uses cfg.s; `override_k` > 0 restricts the
/// pool to the first k class-relevant candidates (they are distance-ordered,
/// so a smaller k is a prefix of a larger one).
SelectionResult finalize_selection(const Image& image, const ScoredCandidates& scored,
                                   const Models& models, const SelectorConfig& cfg,
                                   int override_s = 0, int override_k = 0);

/// Prototype-only variant: the s candidates nearest to the prototype, no
/// error prediction.
SelectionResult finalize_nearest(const Image& image, const ScoredCandidates& scored,
                                 const Models& models, const SelectorConfig& cfg,
                                 int override_s = 0);

SelectionResult select_exemplars(const Image& image, const std::string& image_id,
                                 const std::string& class_name, const Models& models,
                                 const SelectorConfig& cfg);

std::pair<double, SelectionResult> count_zero_shot(const Image& image, const std::string& image_id,
                                                   const std::string& class_name,
                                                   const Models& models,
                                                   const SelectorConfig& cfg);

/// Correlation matching directly against a prototype generated in the
/// counting model's exemplar-vector space; no patch selection.
double count_with_prototype_baseline(const Image& image, const std::string& class_name,
                                     const ConditionalVAE& counting_space_vae,
                                     const BaseCountingModel& base_model,
                                     const SemanticProvider& semantic, int prototype_samples,
                                     uint64_t prototype_seed);

/// s uniformly sampled patches used directly as exemplars, no selection.
double count_with_random_exemplars(const Image& image, int s, const IntRange& size_range,
                                   const BaseCountingModel& base_model, uint64_t seed);

/// Count with caller-provided exemplar boxes (gt-exemplar mode and plugin use).
double count_with_boxes(const Image& image, const std::vector<BoundingBox>& boxes,
                        const BaseCountingModel& base_model, DensityMap* density_out = nullptr);

}  // namespace zsc
