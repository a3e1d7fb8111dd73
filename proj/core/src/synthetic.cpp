// SPDX-License-Identifier: Apache-2.0
//
// Synthetic shape-counting benchmark. Classes are (hue, texture, shape)
// tuples; each image holds several target-class instances plus instances of
// distractor classes from the same split, on a noisy gray background.
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "zsc/dataset.hpp"
#include "zsc/rng.hpp"

namespace zsc {

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kShapes[] = {"disc", "square", "triangle", "ring", "cross", "star"};
const char* kHues[] = {"red", "yellow", "green", "cyan", "blue", "magenta"};
const char* kTextures[] = {"solid", "striped", "dotted"};

struct Rgb {
  double r, g, b;
};

Rgb hue_rgb(int hue) {
  switch (hue) {
    case 0: return {0.85, 0.10, 0.10};
    case 1: return {0.85, 0.75, 0.10};
    case 2: return {0.10, 0.70, 0.15};
    case 3: return {0.10, 0.70, 0.75};
    case 4: return {0.15, 0.20, 0.85};
    default: return {0.80, 0.15, 0.75};
  }
}

struct ClassTraits {
  int shape, hue, texture;
};

ClassTraits traits_from_index(int idx) {
  // Catalog order: shape-major, then hue, then texture.
  const int n_h = 6, n_t = 3;
  return {idx / (n_h * n_t), (idx / n_t) % n_h, idx % n_t};
}

std::string class_name_of(const ClassTraits& t) {
  return std::string(kHues[t.hue]) + "_" + kTextures[t.texture] + "_" + kShapes[t.shape];
}

// Unit-shape membership in local coordinates (|x|,|y| <= 1 circumscribed).
bool in_polygon(const double* vx, const double* vy, int n, double x, double y) {
  bool in = false;
  for (int i = 0, j = n - 1; i < n; j = i++) {
    if ((vy[i] > y) != (vy[j] > y) &&
        x < (vx[j] - vx[i]) * (y - vy[i]) / (vy[j] - vy[i]) + vx[i])
      in = !in;
  }
  return in;
}

bool unit_shape_contains(int shape, double x, double y) {
  switch (shape) {
    case 0:  // disc
      return x * x + y * y <= 1.0;
    case 1:  // square
      return std::max(std::abs(x), std::abs(y)) <= 0.82;
    case 2: {  // triangle (equilateral, apex up)
      static const double vx[3] = {0.0, -0.9397, 0.9397};
      static const double vy[3] = {-1.0, 0.766, 0.766};
      return in_polygon(vx, vy, 3, x, y);
    }
    case 3: {  // ring
      const double r2 = x * x + y * y;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case 4:  // cross
      return (std::abs(x) <= 0.34 && std::abs(y) <= 1.0) ||
             (std::abs(y) <= 0.34 && std::abs(x) <= 1.0);
    default: {  // star, 5 points
      static double vx[10], vy[10];
      static bool built = false;
      if (!built) {
        for (int i = 0; i < 10; ++i) {
          const double r = (i % 2 == 0) ? 1.0 : 0.45;
          const double a = -kPi / 2 + i * kPi / 5;
          vx[i] = r * std::cos(a);
          vy[i] = r * std::sin(a);
        }
        built = true;
      }
      return in_polygon(vx, vy, 10, x, y);
    }
  }
}

bool texture_secondary(int texture, double x, double y) {
  switch (texture) {
    case 1: {  // striped: bands along local x
      const int band = static_cast<int>(std::floor(x / 0.35));
      return (band & 1) != 0;
    }
    case 2: {  // dotted: grid of small spots
      const double px = x - 0.55 * std::round(x / 0.55);
      const double py = y - 0.55 * std::round(y / 0.55);
      return px * px + py * py <= 0.18 * 0.18 * 4.0;
    }
    default:
      return false;
  }
}

struct PlacedInstance {
  ClassTraits traits;
  std::string class_name;
  double cx, cy, radius, theta, brightness;
  bool is_target;
  BoundingBox tight;  // filled during rasterization
};

/// Rasterize with 4x4 supersampling; records the instance's tight pixel box.
void draw_instance(Image& canvas, PlacedInstance& inst) {
  const int h = image_height(canvas), w = image_width(canvas);
  const Rgb base = hue_rgb(inst.traits.hue);
  const double br = inst.brightness;
  const Rgb primary{base.r * br, base.g * br, base.b * br};
  const Rgb secondary{primary.r * 0.45, primary.g * 0.45, primary.b * 0.45};
  const double ct = std::cos(inst.theta), st = std::sin(inst.theta);
  const double inv_r = 1.0 / inst.radius;

  const int r0 = std::max(0, static_cast<int>(std::floor(inst.cy - inst.radius)) - 1);
  const int r1 = std::min(h - 1, static_cast<int>(std::ceil(inst.cy + inst.radius)) + 1);
  const int c0 = std::max(0, static_cast<int>(std::floor(inst.cx - inst.radius)) - 1);
  const int c1 = std::min(w - 1, static_cast<int>(std::ceil(inst.cx + inst.radius)) + 1);

  int bx0 = w, bx1 = -1, by0 = h, by1 = -1;
  constexpr int kSS = 4;
  constexpr double kStep = 1.0 / kSS;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      int hits = 0, sec_hits = 0;
      for (int sy = 0; sy < kSS; ++sy) {
        for (int sx = 0; sx < kSS; ++sx) {
          const double py = r + (sy + 0.5) * kStep - inst.cy;
          const double px = c + (sx + 0.5) * kStep - inst.cx;
          // rotate into local frame, normalize by radius
          const double lx = (px * ct + py * st) * inv_r;
          const double ly = (-px * st + py * ct) * inv_r;
          if (!unit_shape_contains(inst.traits.shape, lx, ly)) continue;
          ++hits;
          if (texture_secondary(inst.traits.texture, lx, ly)) ++sec_hits;
        }
      }
      if (hits == 0) continue;
      const double alpha = static_cast<double>(hits) / (kSS * kSS);
      const double sec_frac = static_cast<double>(sec_hits) / hits;
      const Rgb col{primary.r * (1 - sec_frac) + secondary.r * sec_frac,
                    primary.g * (1 - sec_frac) + secondary.g * sec_frac,
                    primary.b * (1 - sec_frac) + secondary.b * sec_frac};
      canvas.at3(0, r, c) = canvas.at3(0, r, c) * (1 - alpha) + col.r * alpha;
      canvas.at3(1, r, c) = canvas.at3(1, r, c) * (1 - alpha) + col.g * alpha;
      canvas.at3(2, r, c) = canvas.at3(2, r, c) * (1 - alpha) + col.b * alpha;
      if (alpha >= 0.3) {
        bx0 = std::min(bx0, c);
        bx1 = std::max(bx1, c);
        by0 = std::min(by0, r);
        by1 = std::max(by1, r);
      }
    }
  }
  if (bx1 < bx0) {  // degenerate; fall back to the analytic footprint
    bx0 = std::max(0, static_cast<int>(inst.cx - inst.radius));
    bx1 = std::min(w - 1, static_cast<int>(inst.cx + inst.radius));
    by0 = std::max(0, static_cast<int>(inst.cy - inst.radius));
    by1 = std::min(h - 1, static_cast<int>(inst.cy + inst.radius));
  }
  inst.tight = BoundingBox{bx0, by0, bx1 + 1, by1 + 1};
}

void quantize_to_8bit(Image& im) {
  for (int64_t i = 0; i < im.numel(); ++i) {
    double v = std::clamp(im[i], 0.0, 1.0);
    im[i] = std::round(v * 255.0) / 255.0;
  }
}

ImageRecord render_image(const SyntheticSpec& spec, const std::string& id, Split split,
                         const std::string& target_class,
                         const std::vector<std::string>& split_classes, uint64_t image_seed,
                         std::vector<InstanceInfo>& instances_out) {
  Rng rng(image_seed);
  const int h = spec.image_height, w = spec.image_width;

  Image canvas({3, h, w});
  const double tint_r = 0.84 + rng.uniform(-0.03, 0.03);
  const double tint_g = 0.84 + rng.uniform(-0.03, 0.03);
  const double tint_b = 0.84 + rng.uniform(-0.03, 0.03);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double n = rng.uniform(-0.02, 0.02);
      canvas.at3(0, r, c) = tint_r + n;
      canvas.at3(1, r, c) = tint_g + n;
      canvas.at3(2, r, c) = tint_b + n;
    }

  // Distractor classes from the same split, excluding the target.
  std::vector<std::string> others;
  for (const auto& c : split_classes)
    if (c != target_class) others.push_back(c);
  int n_distr_classes = rng.uniform_int(spec.distractor_classes_per_image.lo,
                                        spec.distractor_classes_per_image.hi);
  n_distr_classes = std::min<int>(n_distr_classes, static_cast<int>(others.size()));
  std::vector<std::string> distractors;
  for (int i = 0; i < n_distr_classes; ++i) {
    const int pick = rng.uniform_int(0, static_cast<int>(others.size()) - 1);
    distractors.push_back(others[static_cast<size_t>(pick)]);
    others.erase(others.begin() + pick);
  }

  auto traits_of = [](const std::string& name) {
    for (int i = 0; i < 108; ++i) {
      const ClassTraits t = traits_from_index(i);
      if (class_name_of(t) == name) return t;
    }
    throw std::invalid_argument("unknown synthetic class: " + name);
  };

  std::vector<PlacedInstance> placed;
  auto place = [&](const std::string& cls, bool is_target) {
    PlacedInstance inst;
    inst.traits = traits_of(cls);
    inst.class_name = cls;
    inst.is_target = is_target;
    inst.radius = 0.5 * rng.uniform(spec.object_scale.lo, spec.object_scale.hi);
    inst.theta = (inst.traits.shape == 0 || inst.traits.shape == 3)
                     ? 0.0
                     : rng.uniform(0.0, 2.0 * kPi);
    inst.brightness = rng.uniform(0.8, 1.0);
    const double lo_x = inst.radius + 1.0, hi_x = w - inst.radius - 2.0;
    const double lo_y = inst.radius + 1.0, hi_y = h - inst.radius - 2.0;
    for (int attempt = 0; attempt < 40; ++attempt) {
      inst.cx = rng.uniform(lo_x, std::max(lo_x, hi_x));
      inst.cy = rng.uniform(lo_y, std::max(lo_y, hi_y));
      bool ok = true;
      for (const auto& p : placed) {
        const double dx = p.cx - inst.cx, dy = p.cy - inst.cy;
        if (std::sqrt(dx * dx + dy * dy) < 0.75 * (p.radius + inst.radius)) {
          ok = false;
          break;
        }
      }
      if (ok) break;  // crowded images keep the last draw
    }
    placed.push_back(inst);
  };

  // Distractors first so targets are drawn on top of any overlap.
  for (const auto& cls : distractors) {
    const int n = rng.uniform_int(1, 3);
    for (int i = 0; i < n; ++i) place(cls, false);
  }
  const int n_targets = rng.uniform_int(spec.objects_per_image.lo, spec.objects_per_image.hi);
  for (int i = 0; i < n_targets; ++i) place(target_class, true);

  for (auto& inst : placed) draw_instance(canvas, inst);
  quantize_to_8bit(canvas);

  ImageRecord rec;
  rec.id = id;
  rec.pixels = std::move(canvas);
  rec.class_name = target_class;
  rec.split = split;
  std::vector<int> target_idx;
  for (size_t i = 0; i < placed.size(); ++i) {
    const auto& inst = placed[i];
    instances_out.push_back(
        InstanceInfo{inst.class_name, inst.cx, inst.cy, inst.tight, inst.is_target});
    if (inst.is_target) {
      rec.dots.push_back(Point{inst.cx, inst.cy});
      target_idx.push_back(static_cast<int>(i));
    }
  }
  // Tight boxes of 3 randomly chosen target instances.
  for (int i = 0; i < 3; ++i) {
    const int pick = rng.uniform_int(0, static_cast<int>(target_idx.size()) - 1);
    rec.gt_boxes.push_back(placed[static_cast<size_t>(target_idx[static_cast<size_t>(pick)])].tight);
    target_idx.erase(target_idx.begin() + pick);
  }
  return rec;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split name: " + name);
}

std::vector<std::string> synthetic_class_catalog() {
  std::vector<std::string> out;
  out.reserve(108);
  for (int i = 0; i < 108; ++i) out.push_back(class_name_of(traits_from_index(i)));
  return out;
}

std::array<int, 3> SyntheticSpec::resolved_class_split() const {
  if (classes_per_split[0] > 0 || classes_per_split[1] > 0 || classes_per_split[2] > 0)
    return classes_per_split;
  const int val = std::max(1, num_classes / 6);
  const int test = std::max(1, num_classes / 6);
  return {num_classes - val - test, val, test};
}

void SyntheticSpec::validate() const {
  if (num_classes < 4 || num_classes > 108)
    throw std::invalid_argument("SyntheticSpec: num_classes must be in [4,108]");
  const auto cps = resolved_class_split();
  if (cps[0] < 2 || cps[1] < 1 || cps[2] < 1)
    throw std::invalid_argument("SyntheticSpec: class split needs >=2 train, >=1 val/test classes");
  if (cps[0] + cps[1] + cps[2] != num_classes)
    throw std::invalid_argument("SyntheticSpec: classes_per_split must sum to num_classes");
  for (int n : images_per_split)
    if (n < 0) throw std::invalid_argument("SyntheticSpec: negative image count");
  if (!objects_per_image.valid() || objects_per_image.lo < 3)
    throw std::invalid_argument(
        "SyntheticSpec: objects_per_image range empty or below 3 (3 exemplar boxes are drawn)");
  if (!object_scale.valid() || object_scale.lo < 4)
    throw std::invalid_argument("SyntheticSpec: object_scale range empty or below 4px");
  if (!distractor_classes_per_image.valid() || distractor_classes_per_image.lo < 0)
    throw std::invalid_argument("SyntheticSpec: distractor range invalid");
  if (image_height < object_scale.hi + 6 || image_width < object_scale.hi + 6)
    throw std::invalid_argument("SyntheticSpec: image too small for object_scale");
}

DatasetBundle generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  DatasetBundle bundle;

  auto catalog = synthetic_class_catalog();
  Rng cat_rng(Rng::mix(spec.seed, Rng::hash_str("class-catalog")));
  for (size_t i = catalog.size(); i > 1; --i)
    std::swap(catalog[i - 1],
              catalog[static_cast<size_t>(cat_rng.uniform_int(0, static_cast<int>(i) - 1))]);

  const auto cps = spec.resolved_class_split();
  bundle.classes_train.assign(catalog.begin(), catalog.begin() + cps[0]);
  bundle.classes_val.assign(catalog.begin() + cps[0], catalog.begin() + cps[0] + cps[1]);
  bundle.classes_test.assign(catalog.begin() + cps[0] + cps[1],
                             catalog.begin() + cps[0] + cps[1] + cps[2]);

  uint64_t global_idx = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto& classes = bundle.classes(s);
    const int n_images = spec.images_per_split[static_cast<size_t>(s)];
    for (int i = 0; i < n_images; ++i, ++global_idx) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%05d", split_name(s), i);
      const std::string target = classes[static_cast<size_t>(i) % classes.size()];
      auto& insts = bundle.instances[id];
      bundle.split(s).push_back(render_image(spec, id, s, target, classes,
                                             Rng::mix(spec.seed, 0x517e0000ull + global_idx),
                                             insts));
    }
  }
  return bundle;
}

}  // namespace zsc
