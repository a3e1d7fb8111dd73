// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zsc/dataset.hpp"
#include "zsc/nn.hpp"

namespace zsc {

struct EmbeddingConfig {
  int embedding_dim = 64;
  int patch_size = 32;      // crops are resized to patch_size x patch_size
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double crop_jitter = 0.25;  // max per-side box inflation during training
  uint64_t seed = 1;
};

/// Small convolutional classifier over training-split classes; its
/// penultimate (pooled) activations are the patch embedding space used for
/// class-relevant patch selection.
class EmbeddingNetwork {
 public:
  EmbeddingNetwork() = default;
  EmbeddingNetwork(const EmbeddingConfig& cfg, std::vector<std::string> class_names, Rng& rng);

  ad::Var features(const ad::Var& patch) const;  // [3,p,p] -> [embedding_dim]
  ad::Var logits(const ad::Var& patch) const;

  /// Crop, resize to the patch input size, and return pooled features.
  Tensor embed_patch(const Image& image, const BoundingBox& box) const;
  Tensor embed_crop(const Image& crop) const;

  int embedding_dim() const { return cfg_.embedding_dim; }
  int patch_size() const { return cfg_.patch_size; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const EmbeddingConfig& config() const { return cfg_; }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  bool trained = false;

 private:
  EmbeddingConfig cfg_;
  std::vector<std::string> class_names_;
  nn::ParamStore params_;
  std::vector<nn::Conv2d> blocks_;
  nn::Linear head_;
};

/// Cross-entropy training on object crops from the training split.
EmbeddingNetwork train_embedding_network(const std::vector<ImageRecord>& train_split,
                                         const std::vector<std::string>& train_classes,
                                         const EmbeddingConfig& cfg, TrainLog* log = nullptr);

struct SemanticEmbedding {
  Tensor vector;
  std::string class_name;
};

/// Class-name -> semantic vector. Either file-backed (JSON table, e.g. real
/// text-model vectors) or procedural unit vectors seeded by the class name.
class SemanticProvider {
 public:
  static SemanticProvider procedural(int dim, uint64_t global_seed);
  static SemanticProvider from_table_file(const std::string& path);
  static SemanticProvider from_table(std::map<std::string, Tensor> table);

  SemanticEmbedding get(const std::string& class_name) const;
  int dim() const { return dim_; }
  bool file_backed() const { return file_backed_; }

 private:
  bool file_backed_ = false;
  int dim_ = 0;
  uint64_t seed_ = 0;
  std::map<std::string, Tensor> table_;
};

SemanticEmbedding semantic_embedding(const SemanticProvider& provider,
                                     const std::string& class_name);

/// Attribute-structured semantic table for synthetic classes: one block of
/// coordinates per hue/texture/shape attribute so related classes share
/// components, the way text-model embeddings do. Written by dataset
/// generation and consumed through the file-backed provider.
std::map<std::string, Tensor> build_structured_semantic_table(
    const std::vector<std::string>& class_names, int dim, uint64_t seed);

void save_semantic_table(const std::map<std::string, Tensor>& table, const std::string& path);

}  // namespace zsc
