// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "zsc/autodiff.hpp"
#include "zsc/rng.hpp"
#include "zsc/tensor.hpp"

namespace zsc {

/// Per-epoch loss trace shared by all trainers in this project.
struct TrainLog {
  std::vector<double> epoch_loss;
  double final_accuracy = 0.0;  // meaningful for classifiers only
};

}  // namespace zsc

namespace zsc::nn {

using ad::Var;

/// Named trainable tensors of one model, in a fixed registration order.
/// The order is what makes checkpoints and optimizer sweeps deterministic.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init) {
    Var p = ad::leaf(std::move(init), true);
    entries_.emplace_back(name, p);
    return p;
  }

  const std::vector<std::pair<std::string, Var>>& named() const { return entries_; }

  std::vector<Var> vars() const {
    std::vector<Var> out;
    out.reserve(entries_.size());
    for (const auto& [_, v] : entries_) out.push_back(v);
    return out;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v->zero_grad();
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& [_, v] : entries_) n += v->value.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

/// Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng);

struct Conv2d {
  Var w, b;
  int stride = 1, pad = 1;

  static Conv2d create(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
                       int stride, int pad, Rng& rng);
  Var operator()(const Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct Linear {
  Var w, b;

  static Linear create(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);
  Var operator()(const Var& x) const { return ad::linear(x, w, b); }
};

/// Adam with decoupled weight decay (AdamW). weight_decay = 0 gives plain Adam.
class AdamW {
 public:
  AdamW(std::vector<Var> params, double lr, double weight_decay = 0.0, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_, wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace zsc::nn
