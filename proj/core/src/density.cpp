// SPDX-License-Identifier: Apache-2.0
#include "zsc/density.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace zsc {

DensityMap render_density_target(const std::vector<Point>& dots, int height, int width,
                                 double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("render_density_target: sigma must be positive");
  if (height < 1 || width < 1)
    throw std::invalid_argument("render_density_target: nonpositive size");
  DensityMap dm{Tensor({height, width})};
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (const Point& p : dots) {
    if (p.x < 0 || p.x >= width || p.y < 0 || p.y >= height)
      throw std::invalid_argument("render_density_target: dot (" + std::to_string(p.x) + "," +
                                  std::to_string(p.y) + ") outside " + std::to_string(width) +
                                  "x" + std::to_string(height));
    const int r0 = std::max(0, static_cast<int>(std::floor(p.y)) - radius);
    const int r1 = std::min(height - 1, static_cast<int>(std::ceil(p.y)) + radius);
    const int c0 = std::max(0, static_cast<int>(std::floor(p.x)) - radius);
    const int c1 = std::min(width - 1, static_cast<int>(std::ceil(p.x)) + radius);
    double norm = 0.0;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double dy = r - p.y, dx = c - p.x;
        norm += std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    if (norm <= 0.0) continue;  // unreachable for in-bounds dots
    const double inv_norm = 1.0 / norm;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double dy = r - p.y, dx = c - p.x;
        dm.values.at2(r, c) += std::exp(-(dx * dx + dy * dy) * inv2s2) * inv_norm;
      }
  }
  return dm;
}

DensityMap resize_density(const DensityMap& in, int out_h, int out_w) {
  const int ih = in.height(), iw = in.width();
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_density: nonpositive size");
  DensityMap out{Tensor({out_h, out_w})};
  const double sy = static_cast<double>(out_h) / ih;
  const double sx = static_cast<double>(out_w) / iw;
  for (int r = 0; r < ih; ++r) {
    const double ty0 = r * sy, ty1 = (r + 1) * sy;
    const int ry0 = std::min(out_h - 1, static_cast<int>(ty0));
    const int ry1 = std::min(out_h - 1, static_cast<int>(std::ceil(ty1)) - 1);
    for (int c = 0; c < iw; ++c) {
      const double mass = in.values.at2(r, c);
      if (mass == 0.0) continue;
      const double tx0 = c * sx, tx1 = (c + 1) * sx;
      const int rx0 = std::min(out_w - 1, static_cast<int>(tx0));
      const int rx1 = std::min(out_w - 1, static_cast<int>(std::ceil(tx1)) - 1);
      const double inv_area = 1.0 / ((ty1 - ty0) * (tx1 - tx0));
      for (int rr = ry0; rr <= ry1; ++rr) {
        const double oy = std::min<double>(rr + 1, ty1) - std::max<double>(rr, ty0);
        if (oy <= 0) continue;
        for (int cc = rx0; cc <= rx1; ++cc) {
          const double ox = std::min<double>(cc + 1, tx1) - std::max<double>(cc, tx0);
          if (ox <= 0) continue;
          out.values.at2(rr, cc) += mass * oy * ox * inv_area;
        }
      }
    }
  }
  return out;
}

}  // namespace zsc
