// SPDX-License-Identifier: Apache-2.0
#include "zsc/embedding.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace zsc {

using ad::Var;
using nlohmann::json;

EmbeddingNetwork::EmbeddingNetwork(const EmbeddingConfig& cfg,
                                   std::vector<std::string> class_names, Rng& rng)
    : cfg_(cfg), class_names_(std::move(class_names)) {
  if (class_names_.size() < 2)
    throw std::invalid_argument("EmbeddingNetwork: needs at least 2 classes");
  // Four stride-2 blocks; the last block's width is the embedding dimension.
  const int c1 = std::max(8, cfg_.embedding_dim / 4);
  const int c2 = std::max(8, cfg_.embedding_dim / 2);
  const int widths[4] = {c1, c2, cfg_.embedding_dim, cfg_.embedding_dim};
  int in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    blocks_.push_back(
        nn::Conv2d::create(params_, "block" + std::to_string(i), in_ch, widths[i], 3, 2, 1, rng));
    in_ch = widths[i];
  }
  head_ = nn::Linear::create(params_, "head", cfg_.embedding_dim,
                             static_cast<int>(class_names_.size()), rng);
}

Var EmbeddingNetwork::features(const Var& patch) const {
  Var x = patch;
  for (const auto& b : blocks_) x = ad::relu(b(x));
  return ad::global_avg_pool(x);
}

Var EmbeddingNetwork::logits(const Var& patch) const { return head_(features(patch)); }

Tensor EmbeddingNetwork::embed_crop(const Image& crop) const {
  ad::NoGradGuard ng;
  Image resized = resize_bilinear(crop, cfg_.patch_size, cfg_.patch_size);
  return features(ad::constant(std::move(resized)))->value;
}

Tensor EmbeddingNetwork::embed_patch(const Image& image, const BoundingBox& box) const {
  if (!box.inside(image_height(image), image_width(image)))
    throw std::invalid_argument("embed_patch: box out of bounds or degenerate");
  return embed_crop(crop(image, box));
}

namespace {

struct CropSample {
  Image crop;
  int label;
};

BoundingBox inflate_box(const BoundingBox& b, double frac_x1, double frac_y1, double frac_x2,
                        double frac_y2, int img_h, int img_w) {
  BoundingBox out = b;
  out.x1 = std::max(0, b.x1 - static_cast<int>(std::lround(frac_x1 * b.width())));
  out.y1 = std::max(0, b.y1 - static_cast<int>(std::lround(frac_y1 * b.height())));
  out.x2 = std::min(img_w, b.x2 + static_cast<int>(std::lround(frac_x2 * b.width())));
  out.y2 = std::min(img_h, b.y2 + static_cast<int>(std::lround(frac_y2 * b.height())));
  return out;
}

}  // namespace

EmbeddingNetwork train_embedding_network(const std::vector<ImageRecord>& train_split,
                                         const std::vector<std::string>& train_classes,
                                         const EmbeddingConfig& cfg, TrainLog* log) {
  if (train_split.empty()) throw std::invalid_argument("train_embedding_network: empty split");
  if (train_classes.size() < 2)
    throw std::invalid_argument("train_embedding_network: needs at least 2 classes");

  Rng rng(Rng::mix(cfg.seed, Rng::hash_str("embed-train")));
  EmbeddingNetwork net(cfg, train_classes, rng);

  std::map<std::string, int> label_of;
  for (size_t i = 0; i < train_classes.size(); ++i)
    label_of[train_classes[i]] = static_cast<int>(i);

  // Materialize resized crops once. Boxes are jittered so embeddings stay
  // informative for loosely framed candidate patches later on.
  std::vector<CropSample> samples;
  for (const auto& rec : train_split) {
    auto it = label_of.find(rec.class_name);
    if (it == label_of.end())
      throw std::invalid_argument("train_embedding_network: record class not in class list: " +
                                  rec.class_name);
    for (const auto& b : rec.gt_boxes) {
      BoundingBox jb = inflate_box(b, rng.uniform(0, cfg.crop_jitter),
                                   rng.uniform(0, cfg.crop_jitter),
                                   rng.uniform(0, cfg.crop_jitter),
                                   rng.uniform(0, cfg.crop_jitter), rec.height(), rec.width());
      samples.push_back(
          CropSample{resize_bilinear(crop(rec.pixels, jb), cfg.patch_size, cfg.patch_size),
                     it->second});
    }
  }
  if (samples.empty()) throw std::invalid_argument("train_embedding_network: no crops found");

  nn::AdamW opt(net.params().vars(), cfg.lr);
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainLog local;
  TrainLog& tl = log ? *log : local;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    double epoch_loss = 0.0;
    int correct = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      opt.zero_grad();
      for (size_t i = start; i < stop; ++i) {
        const CropSample& s = samples[order[i]];
        Var lg = net.logits(ad::constant(s.crop));
        int argmax = 0;
        for (int64_t j = 1; j < lg->value.numel(); ++j)
          if (lg->value[j] > lg->value[argmax]) argmax = static_cast<int>(j);
        if (argmax == s.label) ++correct;
        Var loss = ad::scale(ad::softmax_cross_entropy(lg, s.label), inv_batch);
        epoch_loss += loss->value[0];
        ad::backward(loss);
      }
      opt.step();
    }
    tl.epoch_loss.push_back(epoch_loss / std::ceil(static_cast<double>(order.size()) /
                                                   cfg.batch_size));
    tl.final_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
  }
  net.trained = true;
  return net;
}

SemanticProvider SemanticProvider::procedural(int dim, uint64_t global_seed) {
  SemanticProvider p;
  p.file_backed_ = false;
  p.dim_ = dim;
  p.seed_ = global_seed;
  return p;
}

SemanticProvider SemanticProvider::from_table(std::map<std::string, Tensor> table) {
  if (table.empty()) throw std::invalid_argument("SemanticProvider: empty table");
  SemanticProvider p;
  p.file_backed_ = true;
  p.table_ = std::move(table);
  p.dim_ = static_cast<int>(p.table_.begin()->second.numel());
  for (const auto& [name, v] : p.table_)
    if (v.numel() != p.dim_)
      throw std::invalid_argument("SemanticProvider: inconsistent vector length for " + name);
  return p;
}

SemanticProvider SemanticProvider::from_table_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("semantic table not found: " + path);
  json j;
  in >> j;
  std::map<std::string, Tensor> table;
  for (const auto& [name, arr] : j.items()) {
    std::vector<double> v = arr.get<std::vector<double>>();
    table[name] = Tensor::from({static_cast<int>(v.size())}, std::move(v));
  }
  return from_table(std::move(table));
}

SemanticEmbedding SemanticProvider::get(const std::string& class_name) const {
  if (file_backed_) {
    auto it = table_.find(class_name);
    if (it == table_.end())
      throw std::out_of_range("semantic table has no entry for class: " + class_name);
    return SemanticEmbedding{it->second, class_name};
  }
  Rng rng(Rng::mix(Rng::hash_str(class_name), seed_));
  Tensor v({dim_});
  double norm2 = 0.0;
  for (int i = 0; i < dim_; ++i) {
    v[i] = rng.normal();
    norm2 += v[i] * v[i];
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (int i = 0; i < dim_; ++i) v[i] *= inv;
  return SemanticEmbedding{std::move(v), class_name};
}

SemanticEmbedding semantic_embedding(const SemanticProvider& provider,
                                     const std::string& class_name) {
  return provider.get(class_name);
}

std::map<std::string, Tensor> build_structured_semantic_table(
    const std::vector<std::string>& class_names, int dim, uint64_t seed) {
  if (dim < 8) throw std::invalid_argument("build_structured_semantic_table: dim too small");

  // Attribute value -> stable random direction within its block. Vectors of
  // classes sharing an attribute share that block, which is what lets the
  // feature generator compose embeddings for unseen attribute combinations.
  const int block = dim / 4;  // hue | texture | shape | class-specific residue
  auto block_vec = [&](const std::string& token, int block_idx, int block_len) {
    Rng rng(Rng::mix(Rng::hash_str(token), Rng::mix(seed, static_cast<uint64_t>(block_idx))));
    Tensor v({block_len});
    for (int i = 0; i < block_len; ++i) v[i] = rng.normal();
    return v;
  };

  std::map<std::string, Tensor> table;
  for (const auto& name : class_names) {
    std::stringstream ss(name);
    std::string hue, texture, shape;
    if (!std::getline(ss, hue, '_') || !std::getline(ss, texture, '_') ||
        !std::getline(ss, shape))
      throw std::invalid_argument("class name is not hue_texture_shape: " + name);
    Tensor v({dim});
    const Tensor hb = block_vec("hue:" + hue, 0, block);
    const Tensor tb = block_vec("tex:" + texture, 1, block);
    const Tensor sb = block_vec("shape:" + shape, 2, block);
    const Tensor rb = block_vec("class:" + name, 3, dim - 3 * block);
    int k = 0;
    for (int i = 0; i < block; ++i) v[k++] = hb[i];
    for (int i = 0; i < block; ++i) v[k++] = tb[i];
    for (int i = 0; i < block; ++i) v[k++] = sb[i];
    for (int i = 0; i < dim - 3 * block; ++i) v[k++] = 0.25 * rb[i];
    double norm2 = 0.0;
    for (int i = 0; i < dim; ++i) norm2 += v[i] * v[i];
    const double inv = 1.0 / std::sqrt(norm2);
    for (int i = 0; i < dim; ++i) v[i] *= inv;
    table[name] = std::move(v);
  }
  return table;
}

void save_semantic_table(const std::map<std::string, Tensor>& table, const std::string& path) {
  json j = json::object();
  for (const auto& [name, v] : table) {
    std::vector<double> vals(v.data(), v.data() + v.numel());
    j[name] = vals;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write semantic table: " + path);
  out << j.dump(1);
}

}  // namespace zsc
