// SPDX-License-Identifier: Apache-2.0
#include "zsc/counter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace zsc {

using ad::Var;

BaseCountingModel::BaseCountingModel(const CounterConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.backbone_channels.empty() || cfg.head_channels.empty())
    throw std::invalid_argument("BaseCountingModel: empty channel lists");
  int in_ch = 3;
  stride_ = 1;
  for (size_t i = 0; i < cfg.backbone_channels.size(); ++i) {
    backbone_convs_.push_back(nn::Conv2d::create(params_, "backbone" + std::to_string(i), in_ch,
                                                 cfg.backbone_channels[i], 3, 2, 1, rng));
    in_ch = cfg.backbone_channels[i];
    stride_ *= 2;
  }
  reduce_ = nn::Conv2d::create(params_, "reduce", in_ch, cfg.reduced_channels, 1, 1, 0, rng);

  // Bilinear x2 after each of the first stages until image resolution is
  // reachable, then crop to exact size.
  upsample_stages_ = 0;
  for (int s = stride_; s > 1; s /= 2) ++upsample_stages_;
  in_ch = cfg.reduced_channels + 1;  // + similarity channel
  for (size_t i = 0; i < cfg.head_channels.size(); ++i) {
    head_convs_.push_back(nn::Conv2d::create(params_, "head" + std::to_string(i), in_ch,
                                             cfg.head_channels[i], 3, 1, 1, rng));
    in_ch = cfg.head_channels[i];
  }
  head_out_ = nn::Conv2d::create(params_, "head_out", in_ch, 1, 1, 1, 0, rng);
}

Var BaseCountingModel::backbone(const Var& image) const {
  Var x = image;
  for (const auto& c : backbone_convs_) x = ad::relu(c(x));
  return reduce_(x);
}

Var BaseCountingModel::exemplar_from_crop(const Var& crop) const {
  return ad::global_avg_pool(backbone(crop));
}

Var BaseCountingModel::head(const Var& featmap, const Var& simmap, int out_h, int out_w) const {
  Var x = ad::concat_channels(featmap, simmap);
  for (size_t i = 0; i < head_convs_.size(); ++i) {
    x = ad::relu(head_convs_[i](x));
    if (static_cast<int>(i) < upsample_stages_) x = ad::upsample2x(x);
  }
  for (int i = static_cast<int>(head_convs_.size()); i < upsample_stages_; ++i)
    x = ad::upsample2x(x);
  x = ad::relu(head_out_(x));  // densities are nonnegative
  return ad::crop_pad(x, out_h, out_w);
}

FeatureMap BaseCountingModel::extract_features(const Image& image) const {
  ad::NoGradGuard ng;
  Var f = backbone(ad::constant(image));
  return FeatureMap{f->value, stride_, image_height(image), image_width(image)};
}

ExemplarVector BaseCountingModel::exemplar_vector(const Image& image,
                                                  const BoundingBox& box) const {
  if (!box.inside(image_height(image), image_width(image)))
    throw std::invalid_argument("exemplar_vector: box out of bounds or degenerate");
  ad::NoGradGuard ng;
  Image resized = resize_bilinear(crop(image, box), cfg_.exemplar_size, cfg_.exemplar_size);
  return ExemplarVector{exemplar_from_crop(ad::constant(std::move(resized)))->value};
}

DensityMap BaseCountingModel::predict_density(const FeatureMap& featmap,
                                              const SimilarityMap& simmap) const {
  if (featmap.height() != simmap.values.dim(0) || featmap.width() != simmap.values.dim(1))
    throw std::invalid_argument("predict_density: feature and similarity dims disagree");
  ad::NoGradGuard ng;
  Var f = ad::constant(featmap.values);
  Var s = ad::constant(simmap.values.reshaped({1, featmap.height(), featmap.width()}));
  Var d = head(f, s, featmap.image_height, featmap.image_width);
  return DensityMap{d->value.reshaped({featmap.image_height, featmap.image_width})};
}

SimilarityMap similarity_map(const FeatureMap& featmap,
                             const std::vector<ExemplarVector>& exemplars) {
  if (exemplars.empty()) throw std::invalid_argument("similarity_map: no exemplars");
  for (const auto& e : exemplars)
    if (e.values.numel() != featmap.channels())
      throw std::invalid_argument("similarity_map: exemplar dim does not match channels");
  ad::NoGradGuard ng;
  Var f = ad::constant(featmap.values);
  std::vector<Var> maps;
  maps.reserve(exemplars.size());
  for (const auto& e : exemplars) maps.push_back(ad::correlate(f, ad::constant(e.values)));
  Var mean = ad::shifted_mean(maps);
  return SimilarityMap{mean->value.reshaped({featmap.height(), featmap.width()})};
}

double count(const DensityMap& density) { return density.values.sum(); }

double counting_loss(const DensityMap& pred, const DensityMap& target) {
  if (!pred.values.same_shape(target.values))
    throw std::invalid_argument("counting_loss: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < pred.values.numel(); ++i) {
    const double d = pred.values[i] - target.values[i];
    acc += d * d;
  }
  return acc;
}

BaseCountingModel train_base_model(const std::vector<ImageRecord>& train_split,
                                   const CounterConfig& cfg, TrainLog* log) {
  if (train_split.empty()) throw std::invalid_argument("train_base_model: empty split");
  for (const auto& rec : train_split)
    if (rec.gt_boxes.empty())
      throw std::invalid_argument("train_base_model: record without gt boxes: " + rec.id);

  Rng rng(Rng::mix(cfg.seed, Rng::hash_str("counter-train")));
  BaseCountingModel model(cfg, rng);

  // Density targets once per record.
  std::vector<Tensor> targets;
  targets.reserve(train_split.size());
  for (const auto& rec : train_split)
    targets.push_back(
        render_density_target(rec.dots, rec.height(), rec.width(), cfg.sigma).values.reshaped(
            {1, rec.height(), rec.width()}));

  nn::AdamW opt(model.params().vars(), cfg.lr, cfg.weight_decay);
  std::vector<size_t> order(train_split.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainLog local;
  TrainLog& tl = log ? *log : local;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      opt.zero_grad();
      for (size_t i = start; i < stop; ++i) {
        const ImageRecord& rec = train_split[order[i]];
        // Up to n_exemplars gt boxes, sampled without replacement.
        std::vector<int> box_idx(rec.gt_boxes.size());
        for (size_t j = 0; j < box_idx.size(); ++j) box_idx[j] = static_cast<int>(j);
        const int n_use = std::min<int>(cfg.n_exemplars, static_cast<int>(box_idx.size()));
        std::vector<Var> maps;
        Var featmap = model.backbone(ad::constant(rec.pixels));
        for (int j = 0; j < n_use; ++j) {
          const int pick = rng.uniform_int(0, static_cast<int>(box_idx.size()) - 1);
          const BoundingBox& b = rec.gt_boxes[static_cast<size_t>(box_idx[static_cast<size_t>(pick)])];
          box_idx.erase(box_idx.begin() + pick);
          Image patch = resize_bilinear(crop(rec.pixels, b), cfg.exemplar_size, cfg.exemplar_size);
          Var bvec = model.exemplar_from_crop(ad::constant(std::move(patch)));
          maps.push_back(ad::correlate(featmap, bvec));
        }
        Var sim = ad::shifted_mean(maps);
        Var density = model.head(featmap, sim, rec.height(), rec.width());
        Var loss = ad::scale(ad::sse(density, targets[order[i]]), inv_batch);
        epoch_loss += loss->value[0];
        ad::backward(loss);
      }
      opt.step();
    }
    tl.epoch_loss.push_back(epoch_loss * cfg.batch_size / static_cast<double>(order.size()));
  }
  model.trained = true;
  return model;
}

}  // namespace zsc
