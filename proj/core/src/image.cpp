// SPDX-License-Identifier: Apache-2.0
#include "zsc/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace zsc {

Image make_image(int h, int w) {
  if (h < 1 || w < 1) throw std::invalid_argument("make_image: nonpositive size");
  return Tensor({3, h, w});
}

Image crop(const Image& im, const BoundingBox& box) {
  const int h = image_height(im), w = image_width(im);
  if (!box.inside(h, w))
    throw std::invalid_argument("crop: box out of bounds or degenerate");
  Image out({3, box.height(), box.width()});
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < box.height(); ++r)
      for (int k = 0; k < box.width(); ++k)
        out.at3(c, r, k) = im.at3(c, box.y1 + r, box.x1 + k);
  return out;
}

Image resize_bilinear(const Image& im, int out_h, int out_w) {
  const int ih = image_height(im), iw = image_width(im);
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: nonpositive size");
  if (out_h == ih && out_w == iw) return im;
  Image out({3, out_h, out_w});
  const double sy = static_cast<double>(ih) / out_h;
  const double sx = static_cast<double>(iw) / out_w;
  for (int r = 0; r < out_h; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(ih - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(iw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - x0;
      for (int k = 0; k < 3; ++k) {
        const double top = im.at3(k, y0, x0) * (1 - wx) + im.at3(k, y0, x1) * wx;
        const double bot = im.at3(k, y1, x0) * (1 - wx) + im.at3(k, y1, x1) * wx;
        out.at3(k, r, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace zsc
