// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "zsc/tensor.hpp"

namespace zsc::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One node of a define-by-run computation graph. Parameters are long-lived
/// leaf nodes: their grad accumulates across backward() calls until an
/// optimizer zeroes it. Intermediate nodes are created per forward pass.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily by backward()
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // pulls node.grad into parents' grads

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape());
  }
  void zero_grad() {
    ensure_grad();
    grad.fill(0.0);
  }
};

/// While a guard is alive, ops produce unlinked constant nodes: values are
/// computed as usual but no graph is recorded and backward() is unavailable.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

// Convolution over [C,H,W] with kernel [OC,C,kh,kw], square stride/zero-pad.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x is treated as a flat vector of length `in`; w is [out,in], b is [out].
Var linear(const Var& x, const Var& w, const Var& b);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
// Bilinear x2 upsampling of [C,H,W] (half-pixel centers, clamped borders).
Var upsample2x(const Var& x);
// Top-left anchored crop or zero-pad of [C,H,W] to [C,h,w].
Var crop_pad(const Var& x, int h, int w);
Var global_avg_pool(const Var& x);               // [C,H,W] -> [C]
Var concat_channels(const Var& a, const Var& b);  // [Ca,H,W],[Cb,H,W] -> [Ca+Cb,H,W]
Var concat_flat(const Var& a, const Var& b);      // two vectors -> [Na+Nb]
// S[0,i,j] = sum_c feat[c,i,j] * vec[c]
Var correlate(const Var& feat, const Var& vec);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var exp(const Var& a);
Var sum(const Var& a);  // -> [1]
// Sum of squared differences against a constant target (Eq-style ||.||_2^2).
Var sse(const Var& pred, const Tensor& target);
Var softmax_cross_entropy(const Var& logits, int label);
Var reshape(const Var& a, std::vector<int> shape);

/// Shift-based arithmetic mean of same-shaped values:
///   mean = v0 + sum_k (vk - v0)/n
/// Exact when all inputs are identical, which the similarity-map contract
/// relies on.
Var shifted_mean(const std::vector<Var>& vs);

/// Reverse-mode sweep from a scalar root. Seeds d(root)=1, walks the graph in
/// reverse topological order, accumulates into every requires_grad leaf.
void backward(const Var& root);

}  // namespace zsc::ad
