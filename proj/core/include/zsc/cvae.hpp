// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "zsc/embedding.hpp"
#include "zsc/nn.hpp"

namespace zsc {

struct VaeConfig {
  int feature_dim = 64;   // dimension of the reconstructed feature space
  int semantic_dim = 512;
  int latent_dim = 64;
  int hidden = 256;
  int epochs = 150;
  int batch_size = 32;
  double lr = 1e-3;
  double kl_weight = 1.0;
  // identity mode exists for algebraic probes (a purely linear decoder).
  enum class Activation { leaky_relu, identity } hidden_activation = Activation::leaky_relu;
  uint64_t seed = 1;
};

struct VaeLossTerms {
  double kl = 0.0, recon = 0.0, total = 0.0;
};

/// Conditional VAE over feature vectors: encoder (x ++ a) -> (mu, logvar),
/// decoder (z ++ a) -> x_hat, prior N(0,I). Conditioning concatenates the
/// semantic vector at both the encoder input and the latent code.
class ConditionalVAE {
 public:
  ConditionalVAE() = default;
  ConditionalVAE(const VaeConfig& cfg, Rng& rng);

  void encode(const Tensor& x, const Tensor& a, ad::Var& mu, ad::Var& logvar) const;
  ad::Var decode(const ad::Var& z, const Tensor& a) const;
  Tensor decode_value(const Tensor& z, const Tensor& a) const;

  // Loss graph with an explicit noise draw (callers pass eps for determinism).
  ad::Var loss_graph(const Tensor& x, const Tensor& a, const Tensor& eps,
                     VaeLossTerms* terms = nullptr) const;

  const VaeConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Direct access for algebraic test fixtures.
  nn::Linear& dec_hidden() { return dec_hidden_; }
  nn::Linear& dec_out() { return dec_out_; }
  bool trained = false;

 private:
  ad::Var hidden_act(const ad::Var& x) const;
  VaeConfig cfg_;
  nn::ParamStore params_;
  nn::Linear enc_hidden_, enc_mu_, enc_logvar_;
  nn::Linear dec_hidden_, dec_out_;
};

/// Closed-form Gaussian KL + one-sample squared-error reconstruction.
VaeLossTerms vae_loss(const ConditionalVAE& vae, const Tensor& x, const SemanticEmbedding& a,
                      Rng& rng);
VaeLossTerms vae_loss_with_eps(const ConditionalVAE& vae, const Tensor& x,
                               const SemanticEmbedding& a, const Tensor& eps);

/// Closed-form KL( N(mu, diag(exp(logvar))) || N(0, I) ).
double gaussian_kl(const Tensor& mu, const Tensor& logvar);

struct VaeTrainSample {
  Tensor x;
  Tensor a;
};

ConditionalVAE train_vae(const std::vector<VaeTrainSample>& features, const VaeConfig& cfg,
                         TrainLog* log = nullptr);

struct ClassPrototype {
  Tensor vector;
  std::string class_name;
  int n_samples = 0;
  uint64_t seed = 0;
};

/// Mean of n_samples decoded features with z ~ N(0,I), seeded.
ClassPrototype generate_class_prototype(const ConditionalVAE& vae, const SemanticEmbedding& a,
                                        int n_samples, uint64_t seed);

void save_prototype_json(const ClassPrototype& proto, const std::string& path);

}  // namespace zsc
