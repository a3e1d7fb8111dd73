// SPDX-License-Identifier: Apache-2.0
#include "zsc/selector.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace zsc {

using ad::Var;

void SelectorConfig::validate() const {
  if (s < 1 || s > k || k > m)
    throw std::invalid_argument("SelectorConfig: requires 1 <= s <= k <= m");
  if (!size_range.valid() || size_range.lo < 2)
    throw std::invalid_argument("SelectorConfig: size_range empty or below 2px");
  if (aspect_lo <= 0 || aspect_hi < aspect_lo)
    throw std::invalid_argument("SelectorConfig: bad aspect range");
}

std::vector<BoundingBox> sample_patches(int image_height, int image_width,
                                        const SelectorConfig& cfg) {
  cfg.validate();
  const int lim = std::min(image_height, image_width);
  if (cfg.size_range.lo > lim)
    throw std::invalid_argument("sample_patches: size_range does not fit in image");
  Rng rng(Rng::mix(cfg.seed, Rng::hash_str("sample-patches")));
  std::vector<BoundingBox> boxes;
  boxes.reserve(static_cast<size_t>(cfg.m));
  for (int i = 0; i < cfg.m; ++i) {
    const double side = rng.uniform(cfg.size_range.lo, cfg.size_range.hi);
    const double aspect = rng.uniform(cfg.aspect_lo, cfg.aspect_hi);
    const double root = std::sqrt(aspect);
    int bw = static_cast<int>(std::lround(side * root));
    int bh = static_cast<int>(std::lround(side / root));
    bw = std::clamp(bw, 2, image_width);
    bh = std::clamp(bh, 2, image_height);
    const int x1 = rng.uniform_int(0, image_width - bw);
    const int y1 = rng.uniform_int(0, image_height - bh);
    boxes.push_back(BoundingBox{x1, y1, x1 + bw, y1 + bh});
  }
  return boxes;
}

std::vector<int> select_class_relevant(std::vector<CandidatePatch>& candidates,
                                       const ClassPrototype& prototype, int k) {
  if (k < 1 || k > static_cast<int>(candidates.size()))
    throw std::invalid_argument("select_class_relevant: k outside [1, #candidates]");
  for (auto& c : candidates) {
    if (c.embedding.numel() != prototype.vector.numel())
      throw std::invalid_argument("select_class_relevant: embedding dim mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < c.embedding.numel(); ++i) {
      const double d = c.embedding[i] - prototype.vector[i];
      acc += d * d;
    }
    c.prototype_distance = std::sqrt(acc);
  }
  std::vector<int> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const double da = candidates[static_cast<size_t>(a)].prototype_distance;
    const double db = candidates[static_cast<size_t>(b)].prototype_distance;
    return da != db ? da < db : a < b;
  });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

std::vector<Proposal> RandomProposalSource::proposals(const std::string&, int image_height,
                                                      int image_width,
                                                      const SelectorConfig& cfg) const {
  std::vector<Proposal> out;
  for (const auto& b : sample_patches(image_height, image_width, cfg))
    out.push_back(Proposal{b, std::nullopt});
  return out;
}

FileProposalSource::FileProposalSource(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("proposal file not found: " + path);
  nlohmann::json j;
  in >> j;
  for (const auto& [id, arr] : j.items()) {
    auto& list = by_image_[id];
    for (const auto& row : arr) {
      if (!row.is_array() || row.size() < 4)
        throw std::runtime_error("proposal row must be [x1,y1,x2,y2(,score)] for image " + id);
      Proposal p;
      p.box = BoundingBox{row[0].get<int>(), row[1].get<int>(), row[2].get<int>(),
                          row[3].get<int>()};
      if (row.size() >= 5) p.score = row[4].get<double>();
      list.push_back(p);
    }
  }
}

std::vector<Proposal> FileProposalSource::proposals(const std::string& image_id, int image_height,
                                                    int image_width,
                                                    const SelectorConfig&) const {
  auto it = by_image_.find(image_id);
  if (it == by_image_.end())
    throw std::out_of_range("proposal file has no boxes for image " + image_id);
  std::vector<Proposal> out;
  for (const auto& p : it->second)
    if (p.box.inside(image_height, image_width)) out.push_back(p);
  return out;
}

ErrorPredictor::ErrorPredictor(const PredictorConfig& cfg, int in_channels, Rng& rng)
    : cfg_(cfg), in_channels_(in_channels) {
  if (cfg.conv_channels.size() != cfg.conv_strides.size() || cfg.conv_channels.empty())
    throw std::invalid_argument("ErrorPredictor: channels/strides must align");
  int ch = in_channels;
  for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    convs_.push_back(nn::Conv2d::create(params_, "conv" + std::to_string(i), ch,
                                        cfg.conv_channels[i], 3, cfg.conv_strides[i], 1, rng));
    ch = cfg.conv_channels[i];
  }
  head_ = nn::Linear::create(params_, "head", ch, 1, rng);
}

Var ErrorPredictor::forward(const Var& feat_sim) const {
  Var x = feat_sim;
  for (const auto& c : convs_) x = ad::relu(c(x));
  // Pool so the head is independent of the input's spatial size (widths vary
  // with image aspect).
  return head_(ad::global_avg_pool(x));
}

double ErrorPredictor::predict(const FeatureMap& featmap, const SimilarityMap& simmap) const {
  if (featmap.height() != simmap.values.dim(0) || featmap.width() != simmap.values.dim(1))
    throw std::invalid_argument("ErrorPredictor::predict: dims disagree");
  if (featmap.channels() + 1 != in_channels_)
    throw std::invalid_argument("ErrorPredictor::predict: channel count mismatch");
  ad::NoGradGuard ng;
  Var f = ad::constant(featmap.values);
  Var s = ad::constant(simmap.values.reshaped({1, featmap.height(), featmap.width()}));
  return forward(ad::concat_channels(f, s))->value[0];
}

double predict_patch_error(const ErrorPredictor& predictor, const FeatureMap& featmap,
                           const SimilarityMap& simmap) {
  return predictor.predict(featmap, simmap);
}

namespace {

BoundingBox sample_one_box(int image_height, int image_width, const IntRange& sizes,
                           double aspect_lo, double aspect_hi, Rng& rng) {
  const double side = rng.uniform(sizes.lo, sizes.hi);
  const double aspect = rng.uniform(aspect_lo, aspect_hi);
  const double root = std::sqrt(aspect);
  int bw = std::clamp(static_cast<int>(std::lround(side * root)), 2, image_width);
  int bh = std::clamp(static_cast<int>(std::lround(side / root)), 2, image_height);
  const int x1 = rng.uniform_int(0, image_width - bw);
  const int y1 = rng.uniform_int(0, image_height - bh);
  return BoundingBox{x1, y1, x1 + bw, y1 + bh};
}

}  // namespace

ErrorPredictor train_error_predictor(const BaseCountingModel& base_model,
                                     const std::vector<ImageRecord>& train_split,
                                     const PredictorConfig& cfg, TrainLog* log) {
  if (!base_model.trained)
    throw std::invalid_argument("train_error_predictor: base model is untrained");
  if (train_split.empty()) throw std::invalid_argument("train_error_predictor: empty split");

  Rng rng(Rng::mix(cfg.seed, Rng::hash_str("predictor-train")));
  ErrorPredictor pred(cfg, base_model.reduced_channels() + 1, rng);
  nn::AdamW opt(pred.params().vars(), cfg.lr);

  // The base model is frozen; its features per image never change.
  std::vector<FeatureMap> feats;
  feats.reserve(train_split.size());
  for (const auto& rec : train_split) feats.push_back(base_model.extract_features(rec.pixels));

  std::vector<size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);

  TrainLog local;
  TrainLog& tl = log ? *log : local;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    double epoch_loss = 0.0;
    int n_samples = 0, in_batch = 0;
    opt.zero_grad();
    for (size_t rec_pos = 0; rec_pos < order.size(); ++rec_pos) {
      const ImageRecord& rec = train_split[order[rec_pos]];
      const FeatureMap& fm = feats[order[rec_pos]];
      const double gt_count = static_cast<double>(rec.dots.size());
      for (int p = 0; p < cfg.patches_per_image; ++p) {
        const BoundingBox box = sample_one_box(rec.height(), rec.width(), cfg.patch_sizes,
                                               cfg.aspect_lo, cfg.aspect_hi, rng);
        const ExemplarVector b = base_model.exemplar_vector(rec.pixels, box);
        const SimilarityMap sim = similarity_map(fm, {b});
        const DensityMap density = base_model.predict_density(fm, sim);
        const double eps = std::abs(count(density) - gt_count);
        const double target =
            cfg.normalize_target ? eps / std::max(gt_count, 1.0) : eps;

        Var f = ad::constant(fm.values);
        Var s = ad::constant(sim.values.reshaped({1, fm.height(), fm.width()}));
        Var out = pred.forward(ad::concat_channels(f, s));
        Var loss = ad::sse(out, Tensor::scalar(target));
        epoch_loss += loss->value[0];
        ad::backward(loss);
        ++n_samples;
        if (++in_batch == cfg.batch_size) {
          opt.step();
          opt.zero_grad();
          in_batch = 0;
        }
      }
    }
    if (in_batch > 0) opt.step();
    tl.epoch_loss.push_back(epoch_loss / std::max(1, n_samples));
  }
  pred.trained = true;
  return pred;
}

namespace {

void require_models(const Models& m, bool need_predictor) {
  if (!m.embedding || !m.embedding->trained)
    throw std::invalid_argument("pipeline: embedding network missing or untrained");
  if (!m.vae || !m.vae->trained)
    throw std::invalid_argument("pipeline: feature generator missing or untrained");
  if (!m.base || !m.base->trained)
    throw std::invalid_argument("pipeline: base counting model missing or untrained");
  if (need_predictor && (!m.predictor || !m.predictor->trained))
    throw std::invalid_argument("pipeline: error predictor missing or untrained");
  if (!m.semantic) throw std::invalid_argument("pipeline: semantic provider missing");
}

SelectionResult count_with_candidates(const Image& image, const ScoredCandidates& scored,
                                      const Models& models, std::vector<int> exemplar_indices) {
  SelectionResult res;
  res.candidates = scored.candidates;
  res.class_relevant_indices = scored.class_relevant;
  res.exemplar_indices = std::move(exemplar_indices);

  std::vector<ExemplarVector> exemplars;
  exemplars.reserve(res.exemplar_indices.size());
  for (int idx : res.exemplar_indices)
    exemplars.push_back(
        models.base->exemplar_vector(image, res.candidates[static_cast<size_t>(idx)].box));
  const SimilarityMap sim = similarity_map(scored.featmap, exemplars);
  res.density = models.base->predict_density(scored.featmap, sim);
  res.count = count(res.density);
  return res;
}

}  // namespace

ScoredCandidates score_candidates(const Image& image, const std::string& image_id,
                                  const std::string& class_name, const Models& models,
                                  const SelectorConfig& cfg) {
  cfg.validate();
  require_models(models, cfg.rank_by == SelectorConfig::RankBy::predictor);

  const int h = image_height(image), w = image_width(image);
  static const RandomProposalSource default_source;
  const ProposalSource& source = models.proposals ? *models.proposals : default_source;

  ScoredCandidates out;
  const auto proposals = source.proposals(image_id, h, w, cfg);
  if (static_cast<int>(proposals.size()) < cfg.k)
    throw std::invalid_argument("score_candidates: fewer proposals than k");
  out.candidates.reserve(proposals.size());
  for (const auto& p : proposals) {
    CandidatePatch c;
    c.box = p.box;
    c.objectness = p.score;
    c.source = source.kind();
    c.embedding = models.embedding->embed_patch(image, p.box);
    out.candidates.push_back(std::move(c));
  }

  if (models.prototype_cache && models.prototype_cache->count(class_name)) {
    out.prototype = models.prototype_cache->at(class_name);
  } else {
    const SemanticEmbedding sem = models.semantic->get(class_name);
    out.prototype = generate_class_prototype(*models.vae, sem, models.prototype_samples,
                                             models.prototype_seed);
  }
  out.class_relevant = select_class_relevant(out.candidates, out.prototype, cfg.k);

  out.featmap = models.base->extract_features(image);
  if (cfg.rank_by == SelectorConfig::RankBy::predictor) {
    // Each candidate is scored with its own single-exemplar similarity map.
    for (int idx : out.class_relevant) {
      auto& cand = out.candidates[static_cast<size_t>(idx)];
      const ExemplarVector b = models.base->exemplar_vector(image, cand.box);
      const SimilarityMap sim = similarity_map(out.featmap, {b});
      cand.predicted_error = models.predictor->predict(out.featmap, sim);
    }
  } else {
    for (int idx : out.class_relevant)
      if (!out.candidates[static_cast<size_t>(idx)].objectness)
        throw std::invalid_argument(
            "score_candidates: objectness ranking needs scored proposals");
  }
  return out;
}

SelectionResult finalize_selection(const Image& image, const ScoredCandidates& scored,
                                   const Models& models, const SelectorConfig& cfg,
                                   int override_s, int override_k) {
  const int s = override_s > 0 ? override_s : cfg.s;
  std::vector<int> ranked = scored.class_relevant;
  if (override_k > 0) {
    if (override_k > static_cast<int>(ranked.size()))
      throw std::invalid_argument("finalize_selection: override_k exceeds scored pool");
    ranked.resize(static_cast<size_t>(override_k));
  }
  if (s < 1 || s > static_cast<int>(ranked.size()))
    throw std::invalid_argument("finalize_selection: s outside [1, k]");

  if (cfg.rank_by == SelectorConfig::RankBy::predictor) {
    std::sort(ranked.begin(), ranked.end(), [&](int a, int b) {
      const double ea = *scored.candidates[static_cast<size_t>(a)].predicted_error;
      const double eb = *scored.candidates[static_cast<size_t>(b)].predicted_error;
      return ea != eb ? ea < eb : a < b;  // smallest predicted error wins
    });
  } else {
    std::sort(ranked.begin(), ranked.end(), [&](int a, int b) {
      const double sa = *scored.candidates[static_cast<size_t>(a)].objectness;
      const double sb = *scored.candidates[static_cast<size_t>(b)].objectness;
      return sa != sb ? sa > sb : a < b;  // highest objectness wins
    });
  }
  ranked.resize(static_cast<size_t>(s));
  return count_with_candidates(image, scored, models, std::move(ranked));
}

SelectionResult finalize_nearest(const Image& image, const ScoredCandidates& scored,
                                 const Models& models, const SelectorConfig& cfg,
                                 int override_s) {
  const int s = override_s > 0 ? override_s : cfg.s;
  if (s < 1 || s > static_cast<int>(scored.class_relevant.size()))
    throw std::invalid_argument("finalize_nearest: s outside [1, k]");
  // class_relevant is already ordered by (distance, index).
  std::vector<int> nearest(scored.class_relevant.begin(), scored.class_relevant.begin() + s);
  return count_with_candidates(image, scored, models, std::move(nearest));
}

SelectionResult select_exemplars(const Image& image, const std::string& image_id,
                                 const std::string& class_name, const Models& models,
                                 const SelectorConfig& cfg) {
  return finalize_selection(image, score_candidates(image, image_id, class_name, models, cfg),
                            models, cfg);
}

std::pair<double, SelectionResult> count_zero_shot(const Image& image, const std::string& image_id,
                                                   const std::string& class_name,
                                                   const Models& models,
                                                   const SelectorConfig& cfg) {
  SelectionResult res = select_exemplars(image, image_id, class_name, models, cfg);
  return {res.count, std::move(res)};
}

double count_with_prototype_baseline(const Image& image, const std::string& class_name,
                                     const ConditionalVAE& counting_space_vae,
                                     const BaseCountingModel& base_model,
                                     const SemanticProvider& semantic, int prototype_samples,
                                     uint64_t prototype_seed) {
  if (!counting_space_vae.trained)
    throw std::invalid_argument("count_with_prototype_baseline: baseline VAE untrained");
  if (!base_model.trained)
    throw std::invalid_argument("count_with_prototype_baseline: base model untrained");
  const SemanticEmbedding sem = semantic.get(class_name);
  const ClassPrototype proto =
      generate_class_prototype(counting_space_vae, sem, prototype_samples, prototype_seed);
  const FeatureMap fm = base_model.extract_features(image);
  const SimilarityMap sim = similarity_map(fm, {ExemplarVector{proto.vector}});
  return count(base_model.predict_density(fm, sim));
}

double count_with_random_exemplars(const Image& image, int s, const IntRange& size_range,
                                   const BaseCountingModel& base_model, uint64_t seed) {
  if (!base_model.trained)
    throw std::invalid_argument("count_with_random_exemplars: base model untrained");
  if (s < 1) throw std::invalid_argument("count_with_random_exemplars: s must be >=1");
  Rng rng(Rng::mix(seed, Rng::hash_str("random-exemplars")));
  std::vector<BoundingBox> boxes;
  for (int i = 0; i < s; ++i)
    boxes.push_back(
        sample_one_box(image_height(image), image_width(image), size_range, 0.75, 1.33, rng));
  return count_with_boxes(image, boxes, base_model);
}

double count_with_boxes(const Image& image, const std::vector<BoundingBox>& boxes,
                        const BaseCountingModel& base_model, DensityMap* density_out) {
  if (boxes.empty()) throw std::invalid_argument("count_with_boxes: no exemplar boxes");
  const FeatureMap fm = base_model.extract_features(image);
  std::vector<ExemplarVector> exemplars;
  exemplars.reserve(boxes.size());
  for (const auto& b : boxes) exemplars.push_back(base_model.exemplar_vector(image, b));
  const DensityMap density = base_model.predict_density(fm, similarity_map(fm, exemplars));
  const double n = count(density);
  if (density_out) *density_out = density;
  return n;
}

}  // namespace zsc
