// SPDX-License-Identifier: Apache-2.0
#include "zsc/nn.hpp"

#include <cmath>

namespace zsc::nn {

Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-s, s);
  return t;
}

Conv2d Conv2d::create(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                      int stride, int pad, Rng& rng) {
  Conv2d c;
  const int fan_in = in_ch * k * k;
  c.w = ps.add(name + ".w", init_uniform({out_ch, in_ch, k, k}, fan_in, rng));
  c.b = ps.add(name + ".b", init_uniform({out_ch}, fan_in, rng));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.w = ps.add(name + ".w", init_uniform({out, in}, in, rng));
  l.b = ps.add(name + ".b", init_uniform({out}, in, rng));
  return l;
}

AdamW::AdamW(std::vector<Var> params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    p->ensure_grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (int64_t j = 0; j < p->value.numel(); ++j) {
      const double g = p->grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p->value[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p->value[j]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

}  // namespace zsc::nn
