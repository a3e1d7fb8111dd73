// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "zsc/autodiff.hpp"
#include "zsc/dataset.hpp"
#include "zsc/rng.hpp"
#include "zsc/tensor.hpp"

namespace zsc::testutil {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Max relative error between the analytic gradient of `loss_fn` (a scalar
/// graph over the given leaf parameters) and central finite differences.
inline double gradcheck(const std::vector<ad::Var>& params,
                        const std::function<ad::Var()>& loss_fn, double h = 1e-6) {
  for (auto& p : params) p->zero_grad();
  ad::Var loss = loss_fn();
  ad::backward(loss);

  double worst = 0.0;
  for (auto& p : params) {
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const double keep = p->value[i];
      const double step = h * std::max(1.0, std::abs(keep));
      p->value[i] = keep + step;
      const double up = loss_fn()->value[0];
      p->value[i] = keep - step;
      const double dn = loss_fn()->value[0];
      p->value[i] = keep;
      const double fd = (up - dn) / (2.0 * step);
      const double an = p->grad[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

/// Tiny synthetic bundle used across suites; deterministic per seed.
inline SyntheticSpec small_spec(uint64_t seed, int num_classes = 6, int train_images = 12,
                                int val_images = 4) {
  SyntheticSpec spec;
  spec.num_classes = num_classes;
  spec.images_per_split = {train_images, val_images, val_images};
  spec.image_height = 64;
  spec.image_width = 64;
  spec.objects_per_image = {4, 9};
  spec.object_scale = {10, 16};
  spec.distractor_classes_per_image = {1, 2};
  spec.seed = seed;
  return spec;
}

inline bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace zsc::testutil
