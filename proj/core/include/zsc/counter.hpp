// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "zsc/dataset.hpp"
#include "zsc/density.hpp"
#include "zsc/nn.hpp"

namespace zsc {

/// Backbone output for one image: [d, h_I, w_I] plus the stride and source
/// image size needed to regress a density map back at image resolution.
struct FeatureMap {
  Tensor values;  // [d,h,w]
  int stride = 1;
  int image_height = 0, image_width = 0;

  int channels() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
};

struct ExemplarVector {
  Tensor values;  // [d]
};

struct SimilarityMap {
  Tensor values;  // [h,w], matches the source FeatureMap spatially
};

struct CounterConfig {
  std::vector<int> backbone_channels = {16, 32, 32};  // stride-2 conv widths
  int reduced_channels = 32;                          // d after the 1x1 reduction
  std::vector<int> head_channels = {32, 16, 8, 8};    // conv widths before the 1x1 output
  int exemplar_size = 32;
  int n_exemplars = 3;  // gt boxes sampled per training step
  int epochs = 25;
  int batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double sigma = 2.0;  // density target kernel width
  uint64_t seed = 1;
};

/// Exemplar-conditioned density counter: a strided conv feature extractor and
/// a conv/upsample counting head over [F(I), S].
class BaseCountingModel {
 public:
  BaseCountingModel() = default;
  BaseCountingModel(const CounterConfig& cfg, Rng& rng);

  ad::Var backbone(const ad::Var& image) const;  // [3,H,W] -> [d,h,w]
  ad::Var exemplar_from_crop(const ad::Var& crop) const;
  // Counting head over channel-concatenated [F(I), S]; output is cropped to
  // (out_h, out_w) and rectified to be nonnegative.
  ad::Var head(const ad::Var& featmap, const ad::Var& simmap, int out_h, int out_w) const;

  FeatureMap extract_features(const Image& image) const;
  ExemplarVector exemplar_vector(const Image& image, const BoundingBox& box) const;
  DensityMap predict_density(const FeatureMap& featmap, const SimilarityMap& simmap) const;

  int stride() const { return stride_; }
  int reduced_channels() const { return cfg_.reduced_channels; }
  const CounterConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  bool trained = false;

 private:
  CounterConfig cfg_;
  int stride_ = 1;
  int upsample_stages_ = 0;
  nn::ParamStore params_;
  std::vector<nn::Conv2d> backbone_convs_;
  nn::Conv2d reduce_;
  std::vector<nn::Conv2d> head_convs_;
  nn::Conv2d head_out_;
};

/// S_ij = w_ij^T b per exemplar, averaged over exemplars (shift-based mean, so
/// duplicate exemplars reproduce the single-exemplar map exactly).
SimilarityMap similarity_map(const FeatureMap& featmap,
                             const std::vector<ExemplarVector>& exemplars);

/// Eq.-style final count: the sum over the predicted density map.
double count(const DensityMap& density);

/// Squared L2 between maps (pixel sum, not mean).
double counting_loss(const DensityMap& pred, const DensityMap& target);

BaseCountingModel train_base_model(const std::vector<ImageRecord>& train_split,
                                   const CounterConfig& cfg, TrainLog* log = nullptr);

}  // namespace zsc
