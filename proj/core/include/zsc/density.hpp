// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "zsc/image.hpp"
#include "zsc/tensor.hpp"

namespace zsc {

/// Per-pixel object density; the sum over a region is the object count there.
struct DensityMap {
  Tensor values;  // [H,W]

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
  double total() const { return values.sum(); }
};

/// One truncated Gaussian kernel per dot, each renormalized to sum exactly 1
/// after truncation at 4*sigma and at the image borders, so the map total is
/// the dot count.
DensityMap render_density_target(const std::vector<Point>& dots, int height, int width,
                                 double sigma);

/// Count-preserving resample: each source cell's mass is split over the output
/// cells it overlaps, proportional to overlap area.
DensityMap resize_density(const DensityMap& in, int out_h, int out_w);

}  // namespace zsc
