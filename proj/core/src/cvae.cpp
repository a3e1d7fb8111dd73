// SPDX-License-Identifier: Apache-2.0
#include "zsc/cvae.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace zsc {

using ad::Var;

namespace {

Tensor concat_vec(const Tensor& a, const Tensor& b) {
  Tensor out({static_cast<int>(a.numel() + b.numel())});
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i];
  for (int64_t i = 0; i < b.numel(); ++i) out[a.numel() + i] = b[i];
  return out;
}

}  // namespace

ConditionalVAE::ConditionalVAE(const VaeConfig& cfg, Rng& rng) : cfg_(cfg) {
  enc_hidden_ = nn::Linear::create(params_, "enc_hidden", cfg.feature_dim + cfg.semantic_dim,
                                   cfg.hidden, rng);
  enc_mu_ = nn::Linear::create(params_, "enc_mu", cfg.hidden, cfg.latent_dim, rng);
  enc_logvar_ = nn::Linear::create(params_, "enc_logvar", cfg.hidden, cfg.latent_dim, rng);
  dec_hidden_ = nn::Linear::create(params_, "dec_hidden", cfg.latent_dim + cfg.semantic_dim,
                                   cfg.hidden, rng);
  dec_out_ = nn::Linear::create(params_, "dec_out", cfg.hidden, cfg.feature_dim, rng);
}

Var ConditionalVAE::hidden_act(const Var& x) const {
  if (cfg_.hidden_activation == VaeConfig::Activation::identity) return x;
  return ad::leaky_relu(x, 0.2);
}

void ConditionalVAE::encode(const Tensor& x, const Tensor& a, Var& mu, Var& logvar) const {
  if (x.numel() != cfg_.feature_dim || a.numel() != cfg_.semantic_dim)
    throw std::invalid_argument("ConditionalVAE::encode: dimension mismatch");
  Var h = hidden_act(enc_hidden_(ad::constant(concat_vec(x, a))));
  mu = enc_mu_(h);
  logvar = enc_logvar_(h);
}

Var ConditionalVAE::decode(const Var& z, const Tensor& a) const {
  if (z->value.numel() != cfg_.latent_dim || a.numel() != cfg_.semantic_dim)
    throw std::invalid_argument("ConditionalVAE::decode: dimension mismatch");
  Var za = ad::concat_flat(z, ad::constant(a));
  Var h = hidden_act(dec_hidden_(za));
  return ad::relu(dec_out_(h));  // features live in a rectified space
}

Tensor ConditionalVAE::decode_value(const Tensor& z, const Tensor& a) const {
  ad::NoGradGuard ng;
  return decode(ad::constant(z), a)->value;
}

Var ConditionalVAE::loss_graph(const Tensor& x, const Tensor& a, const Tensor& eps,
                               VaeLossTerms* terms) const {
  if (eps.numel() != cfg_.latent_dim)
    throw std::invalid_argument("ConditionalVAE::loss_graph: eps dimension mismatch");
  Var mu, logvar;
  encode(x, a, mu, logvar);

  // kl = 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)
  Var kl_inner = ad::sub(ad::add(ad::exp(logvar), ad::square(mu)), logvar);
  Var kl = ad::scale(ad::add_scalar(ad::sum(kl_inner), -static_cast<double>(cfg_.latent_dim)), 0.5);

  // z = mu + exp(0.5*logvar) * eps  (one reparameterized sample)
  Var z = ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), ad::constant(eps)));
  Var recon = ad::sse(decode(z, a), x);

  if (terms) {
    terms->kl = kl->value[0];
    terms->recon = recon->value[0];
    terms->total = cfg_.kl_weight * terms->kl + terms->recon;
  }
  return ad::add(ad::scale(kl, cfg_.kl_weight), recon);
}

double gaussian_kl(const Tensor& mu, const Tensor& logvar) {
  if (!mu.same_shape(logvar)) throw std::invalid_argument("gaussian_kl: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < mu.numel(); ++i)
    acc += std::exp(logvar[i]) + mu[i] * mu[i] - 1.0 - logvar[i];
  return 0.5 * acc;
}

VaeLossTerms vae_loss_with_eps(const ConditionalVAE& vae, const Tensor& x,
                               const SemanticEmbedding& a, const Tensor& eps) {
  ad::NoGradGuard ng;
  VaeLossTerms terms;
  vae.loss_graph(x, a.vector, eps, &terms);
  return terms;
}

VaeLossTerms vae_loss(const ConditionalVAE& vae, const Tensor& x, const SemanticEmbedding& a,
                      Rng& rng) {
  Tensor eps({vae.config().latent_dim});
  for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
  return vae_loss_with_eps(vae, x, a, eps);
}

ConditionalVAE train_vae(const std::vector<VaeTrainSample>& features, const VaeConfig& cfg,
                         TrainLog* log) {
  if (features.empty()) throw std::invalid_argument("train_vae: empty feature set");
  for (const auto& s : features)
    if (s.x.numel() != cfg.feature_dim || s.a.numel() != cfg.semantic_dim)
      throw std::invalid_argument("train_vae: sample dims do not match config");

  Rng rng(Rng::mix(cfg.seed, Rng::hash_str("vae-train")));
  ConditionalVAE vae(cfg, rng);
  nn::AdamW opt(vae.params().vars(), cfg.lr);

  std::vector<size_t> order(features.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Tensor eps({cfg.latent_dim});

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
        const auto& s = features[order[i]];
        for (int64_t j = 0; j < eps.numel(); ++j) eps[j] = rng.normal();
        Var loss = ad::scale(vae.loss_graph(s.x, s.a, eps), inv_batch);
        epoch_loss += loss->value[0];
        ad::backward(loss);
      }
      opt.step();
    }
    tl.epoch_loss.push_back(epoch_loss * cfg.batch_size / static_cast<double>(order.size()));
  }
  vae.trained = true;
  return vae;
}

ClassPrototype generate_class_prototype(const ConditionalVAE& vae, const SemanticEmbedding& a,
                                        int n_samples, uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("generate_class_prototype: n_samples must be >=1");
  Rng rng(Rng::mix(seed, Rng::hash_str(a.class_name)));
  const int latent = vae.config().latent_dim;
  Tensor z({latent});
  Tensor acc({vae.config().feature_dim});
  for (int s = 0; s < n_samples; ++s) {
    for (int i = 0; i < latent; ++i) z[i] = rng.normal();
    Tensor xhat = vae.decode_value(z, a.vector);
    for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += xhat[i];
  }
  const double inv = 1.0 / static_cast<double>(n_samples);
  for (int64_t i = 0; i < acc.numel(); ++i) acc[i] *= inv;
  return ClassPrototype{std::move(acc), a.class_name, n_samples, seed};
}

void save_prototype_json(const ClassPrototype& proto, const std::string& path) {
  nlohmann::json j{{"class_name", proto.class_name},
                   {"n_samples", proto.n_samples},
                   {"seed", proto.seed},
                   {"vector", std::vector<double>(proto.vector.data(),
                                                  proto.vector.data() + proto.vector.numel())}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prototype json: " + path);
  out << j.dump(1);
}

}  // namespace zsc
