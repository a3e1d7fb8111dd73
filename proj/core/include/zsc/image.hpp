// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "zsc/tensor.hpp"

namespace zsc {

/// Images are [3,H,W] tensors with values in [0,1].
using Image = Tensor;

/// Half-open pixel box [x1,x2) x [y1,y2).
struct BoundingBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool inside(int img_h, int img_w) const {
    return valid() && x1 >= 0 && y1 >= 0 && x2 <= img_w && y2 <= img_h;
  }
  bool contains(double x, double y) const { return x >= x1 && x < x2 && y >= y1 && y < y2; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

struct Point {
  double x = 0, y = 0;
};

inline int image_height(const Image& im) { return im.dim(1); }
inline int image_width(const Image& im) { return im.dim(2); }

Image make_image(int h, int w);

/// Extract box region; box must lie inside the image and be nondegenerate.
Image crop(const Image& im, const BoundingBox& box);

/// Bilinear resample (half-pixel centers, clamped borders).
Image resize_bilinear(const Image& im, int out_h, int out_w);

void write_png(const std::string& path, const Image& im);
Image read_png(const std::string& path);

}  // namespace zsc
