// SPDX-License-Identifier: Apache-2.0
#include "zsc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace zsc::ad {

namespace {

thread_local int g_no_grad_depth = 0;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_no_grad_depth > 0) {
    n->requires_grad = false;
    n->is_leaf = true;
    return n;
  }
  n->is_leaf = false;
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                " vs " + b->value.shape_str());
}

int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && g_no_grad_depth == 0;
  n->is_leaf = true;
  if (n->requires_grad) n->zero_grad();
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 3 || wv.ndim() != 4) throw std::invalid_argument("conv2d: bad ranks");
  const int ic = xv.dim(0), ih = xv.dim(1), iw = xv.dim(2);
  const int oc = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != ic) throw std::invalid_argument("conv2d: channel mismatch");
  if (b->value.numel() != oc) throw std::invalid_argument("conv2d: bias size mismatch");
  const int oh = conv_out_dim(ih, kh, stride, pad);
  const int ow = conv_out_dim(iw, kw, stride, pad);
  if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: output collapses to zero size");

  Tensor out({oc, oh, ow});
  const double* xp = xv.data();
  const double* wp = wv.data();
  const double* bp = b->value.data();
  double* op = out.data();
  for (int o = 0; o < oc; ++o) {
    for (int r = 0; r < oh; ++r) {
      for (int c = 0; c < ow; ++c) {
        double acc = bp[o];
        const int y0 = r * stride - pad;
        const int x0 = c * stride - pad;
        for (int i = 0; i < ic; ++i) {
          const double* xrow = xp + static_cast<size_t>(i) * ih * iw;
          const double* wrow = wp + ((static_cast<size_t>(o) * ic + i) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            const int yy = y0 + ky;
            if (yy < 0 || yy >= ih) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int xx = x0 + kx;
              if (xx < 0 || xx >= iw) continue;
              acc += xrow[static_cast<size_t>(yy) * iw + xx] * wrow[static_cast<size_t>(ky) * kw + kx];
            }
          }
        }
        op[(static_cast<size_t>(o) * oh + r) * ow + c] = acc;
      }
    }
  }

  return make_node(std::move(out), {x, w, b}, [=](Node& n) {
    Node& xn = *n.parents[0];
    Node& wn = *n.parents[1];
    Node& bn = *n.parents[2];
    const double* g = n.grad.data();
    const Tensor& xv2 = xn.value;
    const Tensor& wv2 = wn.value;
    const int oh2 = n.value.dim(1), ow2 = n.value.dim(2);
    for (int o = 0; o < oc; ++o) {
      for (int r = 0; r < oh2; ++r) {
        for (int c = 0; c < ow2; ++c) {
          const double go = g[(static_cast<size_t>(o) * oh2 + r) * ow2 + c];
          if (go == 0.0) continue;
          if (bn.requires_grad) bn.grad[o] += go;
          const int y0 = r * stride - pad;
          const int x0 = c * stride - pad;
          for (int i = 0; i < ic; ++i) {
            for (int ky = 0; ky < kh; ++ky) {
              const int yy = y0 + ky;
              if (yy < 0 || yy >= ih) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int xx = x0 + kx;
                if (xx < 0 || xx >= iw) continue;
                const size_t xi = (static_cast<size_t>(i) * ih + yy) * iw + xx;
                const size_t wi = ((static_cast<size_t>(o) * ic + i) * kh + ky) * kw + kx;
                if (wn.requires_grad) wn.grad[wi] += go * xv2[xi];
                if (xn.requires_grad) xn.grad[xi] += go * wv2[wi];
              }
            }
          }
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const int in = static_cast<int>(x->value.numel());
  if (w->value.ndim() != 2 || w->value.dim(1) != in)
    throw std::invalid_argument("linear: weight shape mismatch");
  const int out = w->value.dim(0);
  if (b->value.numel() != out) throw std::invalid_argument("linear: bias size mismatch");

  Tensor y({out});
  const double* xp = x->value.data();
  const double* wp = w->value.data();
  for (int o = 0; o < out; ++o) {
    double acc = b->value[o];
    const double* wr = wp + static_cast<size_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += wr[i] * xp[i];
    y[o] = acc;
  }
  return make_node(std::move(y), {x, w, b}, [=](Node& n) {
    Node& xn = *n.parents[0];
    Node& wn = *n.parents[1];
    Node& bn = *n.parents[2];
    const double* g = n.grad.data();
    const double* xp2 = xn.value.data();
    const double* wp2 = wn.value.data();
    for (int o = 0; o < out; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      if (bn.requires_grad) bn.grad[o] += go;
      const size_t base = static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) {
        if (wn.requires_grad) wn.grad[base + i] += go * xp2[i];
        if (xn.requires_grad) xn.grad[i] += go * wp2[base + i];
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor y = x->value;
  for (int64_t i = 0; i < y.numel(); ++i)
    if (y[i] < 0.0) y[i] = 0.0;
  return make_node(std::move(y), {x}, [](Node& n) {
    Node& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (int64_t i = 0; i < n.value.numel(); ++i)
      if (xn.value[i] > 0.0) xn.grad[i] += n.grad[i];
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor y = x->value;
  for (int64_t i = 0; i < y.numel(); ++i)
    if (y[i] < 0.0) y[i] *= slope;
  return make_node(std::move(y), {x}, [slope](Node& n) {
    Node& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (int64_t i = 0; i < n.value.numel(); ++i)
      xn.grad[i] += n.grad[i] * (xn.value[i] > 0.0 ? 1.0 : slope);
  });
}

namespace {

struct Lerp {
  int lo, hi;
  double whi;  // weight of hi; weight of lo is 1-whi
};

Lerp half_pixel(int out_idx, int in_dim) {
  double src = (out_idx + 0.5) * 0.5 - 0.5;
  if (src < 0) src = 0;
  double lim = in_dim - 1;
  if (src > lim) src = lim;
  int lo = static_cast<int>(src);
  int hi = std::min(lo + 1, in_dim - 1);
  return {lo, hi, src - lo};
}

}  // namespace

Var upsample2x(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 3) throw std::invalid_argument("upsample2x: expects [C,H,W]");
  const int ch = xv.dim(0), ih = xv.dim(1), iw = xv.dim(2);
  const int oh = ih * 2, ow = iw * 2;
  Tensor y({ch, oh, ow});
  std::vector<Lerp> ly(oh), lx(ow);
  for (int r = 0; r < oh; ++r) ly[r] = half_pixel(r, ih);
  for (int c = 0; c < ow; ++c) lx[c] = half_pixel(c, iw);
  for (int k = 0; k < ch; ++k) {
    const double* xp = xv.data() + static_cast<size_t>(k) * ih * iw;
    double* yp = y.data() + static_cast<size_t>(k) * oh * ow;
    for (int r = 0; r < oh; ++r) {
      const Lerp& a = ly[r];
      for (int c = 0; c < ow; ++c) {
        const Lerp& b = lx[c];
        double top = xp[static_cast<size_t>(a.lo) * iw + b.lo] * (1 - b.whi) +
                     xp[static_cast<size_t>(a.lo) * iw + b.hi] * b.whi;
        double bot = xp[static_cast<size_t>(a.hi) * iw + b.lo] * (1 - b.whi) +
                     xp[static_cast<size_t>(a.hi) * iw + b.hi] * b.whi;
        yp[static_cast<size_t>(r) * ow + c] = top * (1 - a.whi) + bot * a.whi;
      }
    }
  }
  return make_node(std::move(y), {x}, [=](Node& n) {
    Node& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (int k = 0; k < ch; ++k) {
      double* gx = xn.grad.data() + static_cast<size_t>(k) * ih * iw;
      const double* gy = n.grad.data() + static_cast<size_t>(k) * oh * ow;
      for (int r = 0; r < oh; ++r) {
        const Lerp& a = ly[r];
        for (int c = 0; c < ow; ++c) {
          const Lerp& b = lx[c];
          const double g = gy[static_cast<size_t>(r) * ow + c];
          gx[static_cast<size_t>(a.lo) * iw + b.lo] += g * (1 - a.whi) * (1 - b.whi);
          gx[static_cast<size_t>(a.lo) * iw + b.hi] += g * (1 - a.whi) * b.whi;
          gx[static_cast<size_t>(a.hi) * iw + b.lo] += g * a.whi * (1 - b.whi);
          gx[static_cast<size_t>(a.hi) * iw + b.hi] += g * a.whi * b.whi;
        }
      }
    }
  });
}

Var crop_pad(const Var& x, int h, int w) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 3) throw std::invalid_argument("crop_pad: expects [C,H,W]");
  const int ch = xv.dim(0), ih = xv.dim(1), iw = xv.dim(2);
  Tensor y({ch, h, w});
  const int ch_h = std::min(h, ih), ch_w = std::min(w, iw);
  for (int k = 0; k < ch; ++k)
    for (int r = 0; r < ch_h; ++r)
      for (int c = 0; c < ch_w; ++c) y.at3(k, r, c) = xv.at3(k, r, c);
  return make_node(std::move(y), {x}, [=](Node& n) {
    Node& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (int k = 0; k < ch; ++k)
      for (int r = 0; r < ch_h; ++r)
        for (int c = 0; c < ch_w; ++c) xn.grad.at3(k, r, c) += n.grad.at3(k, r, c);
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 3) throw std::invalid_argument("global_avg_pool: expects [C,H,W]");
  const int ch = xv.dim(0), ih = xv.dim(1), iw = xv.dim(2);
  const double inv = 1.0 / (static_cast<double>(ih) * iw);
  Tensor y({ch});
  for (int k = 0; k < ch; ++k) {
    double acc = 0.0;
    const double* xp = xv.data() + static_cast<size_t>(k) * ih * iw;
    for (int i = 0; i < ih * iw; ++i) acc += xp[i];
    y[k] = acc * inv;
  }
  return make_node(std::move(y), {x}, [=](Node& n) {
    Node& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (int k = 0; k < ch; ++k) {
      const double g = n.grad[k] * inv;
      double* gp = xn.grad.data() + static_cast<size_t>(k) * ih * iw;
      for (int i = 0; i < ih * iw; ++i) gp[i] += g;
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
    throw std::invalid_argument("concat_channels: spatial dims disagree");
  const int ca = av.dim(0), cb = bv.dim(0), h = av.dim(1), w = av.dim(2);
  Tensor y({ca + cb, h, w});
  std::copy(av.data(), av.data() + av.numel(), y.data());
  std::copy(bv.data(), bv.data() + bv.numel(), y.data() + av.numel());
  return make_node(std::move(y), {a, b}, [=](Node& n) {
    Node& an = *n.parents[0];
    Node& bn = *n.parents[1];
    const int64_t na = static_cast<int64_t>(ca) * h * w;
    const int64_t nb = static_cast<int64_t>(cb) * h * w;
    if (an.requires_grad)
      for (int64_t i = 0; i < na; ++i) an.grad[i] += n.grad[i];
    if (bn.requires_grad)
      for (int64_t i = 0; i < nb; ++i) bn.grad[i] += n.grad[na + i];
  });
}

Var concat_flat(const Var& a, const Var& b) {
  const int64_t na = a->value.numel(), nb = b->value.numel();
  Tensor y({static_cast<int>(na + nb)});
  std::copy(a->value.data(), a->value.data() + na, y.data());
  std::copy(b->value.data(), b->value.data() + nb, y.data() + na);
  return make_node(std::move(y), {a, b}, [na, nb](Node& n) {
    Node& an = *n.parents[0];
    Node& bn = *n.parents[1];
    if (an.requires_grad)
      for (int64_t i = 0; i < na; ++i) an.grad[i] += n.grad[i];
    if (bn.requires_grad)
      for (int64_t i = 0; i < nb; ++i) bn.grad[i] += n.grad[na + i];
  });
}

Var correlate(const Var& feat, const Var& vec) {
  const Tensor& fv = feat->value;
  if (fv.ndim() != 3) throw std::invalid_argument("correlate: feat must be [C,H,W]");
  const int ch = fv.dim(0), h = fv.dim(1), w = fv.dim(2);
  if (vec->value.numel() != ch)
    throw std::invalid_argument("correlate: vector length does not match channels");
  Tensor y({1, h, w});
  const double* vp = vec->value.data();
  for (int k = 0; k < ch; ++k) {
    const double* fp = fv.data() + static_cast<size_t>(k) * h * w;
    const double vk = vp[k];
    double* yp = y.data();
    for (int i = 0; i < h * w; ++i) yp[i] += fp[i] * vk;
  }
  return make_node(std::move(y), {feat, vec}, [=](Node& n) {
    Node& fn = *n.parents[0];
    Node& vn = *n.parents[1];
    const double* g = n.grad.data();
    for (int k = 0; k < ch; ++k) {
      const double* fp = fn.value.data() + static_cast<size_t>(k) * h * w;
      const double vk = vn.value[k];
      double* gf = fn.requires_grad ? fn.grad.data() + static_cast<size_t>(k) * h * w : nullptr;
      double gv = 0.0;
      for (int i = 0; i < h * w; ++i) {
        if (gf) gf[i] += g[i] * vk;
        gv += g[i] * fp[i];
      }
      if (vn.requires_grad) vn.grad[k] += gv;
    }
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
  return make_node(std::move(y), {a, b}, [](Node& n) {
    for (int p = 0; p < 2; ++p) {
      Node& pn = *n.parents[p];
      if (!pn.requires_grad) continue;
      for (int64_t i = 0; i < n.value.numel(); ++i) pn.grad[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] -= b->value[i];
  return make_node(std::move(y), {a, b}, [](Node& n) {
    Node& an = *n.parents[0];
    Node& bn = *n.parents[1];
    for (int64_t i = 0; i < n.value.numel(); ++i) {
      if (an.requires_grad) an.grad[i] += n.grad[i];
      if (bn.requires_grad) bn.grad[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= b->value[i];
  return make_node(std::move(y), {a, b}, [](Node& n) {
    Node& an = *n.parents[0];
    Node& bn = *n.parents[1];
    for (int64_t i = 0; i < n.value.numel(); ++i) {
      if (an.requires_grad) an.grad[i] += n.grad[i] * bn.value[i];
      if (bn.requires_grad) bn.grad[i] += n.grad[i] * an.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= s;
  return make_node(std::move(y), {a}, [s](Node& n) {
    Node& an = *n.parents[0];
    if (!an.requires_grad) return;
    for (int64_t i = 0; i < n.value.numel(); ++i) an.grad[i] += n.grad[i] * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += s;
  return make_node(std::move(y), {a}, [](Node& n) {
    Node& an = *n.parents[0];
    if (!an.requires_grad) return;
    for (int64_t i = 0; i < n.value.numel(); ++i) an.grad[i] += n.grad[i];
  });
}

Var square(const Var& a) {
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= y[i];
  return make_node(std::move(y), {a}, [](Node& n) {
    Node& an = *n.parents[0];
    if (!an.requires_grad) return;
    for (int64_t i = 0; i < n.value.numel(); ++i) an.grad[i] += 2.0 * an.value[i] * n.grad[i];
  });
}

Var exp(const Var& a) {
  Tensor y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::exp(y[i]);
  return make_node(std::move(y), {a}, [](Node& n) {
    Node& an = *n.parents[0];
    if (!an.requires_grad) return;
    for (int64_t i = 0; i < n.value.numel(); ++i) an.grad[i] += n.value[i] * n.grad[i];
  });
}

Var sum(const Var& a) {
  Tensor y({1});
  y[0] = a->value.sum();
  return make_node(std::move(y), {a}, [](Node& n) {
    Node& an = *n.parents[0];
    if (!an.requires_grad) return;
    const double g = n.grad[0];
    for (int64_t i = 0; i < an.value.numel(); ++i) an.grad[i] += g;
  });
}

Var sse(const Var& pred, const Tensor& target) {
  if (!pred->value.same_shape(target))
    throw std::invalid_argument("sse: prediction and target shapes differ");
  Tensor y({1});
  double acc = 0.0;
  for (int64_t i = 0; i < target.numel(); ++i) {
    const double d = pred->value[i] - target[i];
    acc += d * d;
  }
  y[0] = acc;
  Tensor tgt = target;
  return make_node(std::move(y), {pred}, [tgt = std::move(tgt)](Node& n) {
    Node& pn = *n.parents[0];
    if (!pn.requires_grad) return;
    const double g = 2.0 * n.grad[0];
    for (int64_t i = 0; i < tgt.numel(); ++i) pn.grad[i] += g * (pn.value[i] - tgt[i]);
  });
}

Var softmax_cross_entropy(const Var& logits, int label) {
  const int64_t k = logits->value.numel();
  if (label < 0 || label >= k) throw std::invalid_argument("softmax_cross_entropy: bad label");
  double mx = logits->value[0];
  for (int64_t i = 1; i < k; ++i) mx = std::max(mx, logits->value[i]);
  double z = 0.0;
  for (int64_t i = 0; i < k; ++i) z += std::exp(logits->value[i] - mx);
  Tensor y({1});
  y[0] = std::log(z) + mx - logits->value[label];
  return make_node(std::move(y), {logits}, [label, mx, z](Node& n) {
    Node& ln = *n.parents[0];
    if (!ln.requires_grad) return;
    const double g = n.grad[0];
    for (int64_t i = 0; i < ln.value.numel(); ++i) {
      double p = std::exp(ln.value[i] - mx) / z;
      ln.grad[i] += g * (p - (i == label ? 1.0 : 0.0));
    }
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor y = a->value.reshaped(shape);
  return make_node(std::move(y), {a}, [](Node& n) {
    Node& an = *n.parents[0];
    if (!an.requires_grad) return;
    for (int64_t i = 0; i < n.value.numel(); ++i) an.grad[i] += n.grad[i];
  });
}

Var shifted_mean(const std::vector<Var>& vs) {
  if (vs.empty()) throw std::invalid_argument("shifted_mean: empty input");
  if (vs.size() == 1) return vs[0];
  const double inv = 1.0 / static_cast<double>(vs.size());
  Var acc;
  for (size_t i = 1; i < vs.size(); ++i) {
    Var d = sub(vs[i], vs[0]);
    acc = acc ? add(acc, d) : d;
  }
  return add(vs[0], scale(acc, inv));
}

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  // Post-order DFS for a reverse-topological schedule.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Fresh (non-leaf) nodes start from zero; parameter leaves keep accumulating.
  for (Node* n : order)
    if (!n->is_leaf) n->zero_grad();
  for (Node* n : order) n->ensure_grad();

  root->grad[0] = root->grad[0] + 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace zsc::ad
