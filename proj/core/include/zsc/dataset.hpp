// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zsc/density.hpp"
#include "zsc/image.hpp"

namespace zsc {

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct ImageRecord {
  std::string id;
  Image pixels;  // [3,H,W], values in [0,1]
  std::string class_name;
  std::vector<Point> dots;            // target-instance centers
  std::vector<BoundingBox> gt_boxes;  // annotated exemplar boxes
  Split split = Split::train;

  int height() const { return image_height(pixels); }
  int width() const { return image_width(pixels); }
};

struct IntRange {
  int lo = 0, hi = 0;
  bool valid() const { return lo <= hi; }
};

/// Generator-side record of every rendered instance (targets and distractors).
/// Kept in memory only; used by relevance diagnostics, never serialized.
struct InstanceInfo {
  std::string class_name;
  double cx = 0, cy = 0;
  BoundingBox box;
  bool is_target = false;
};

struct DatasetBundle {
  std::vector<ImageRecord> train, val, test;
  std::vector<std::string> classes_train, classes_val, classes_test;
  std::map<std::string, std::vector<InstanceInfo>> instances;  // by record id

  const std::vector<ImageRecord>& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      default: return test;
    }
  }
  std::vector<ImageRecord>& split(Split s) {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      default: return test;
    }
  }
  const std::vector<std::string>& classes(Split s) const {
    switch (s) {
      case Split::train: return classes_train;
      case Split::val: return classes_val;
      default: return classes_test;
    }
  }
};

/// Recipe for the synthetic benchmark. A class is a (shape, hue, texture)
/// tuple; split class sets are disjoint by construction.
struct SyntheticSpec {
  int num_classes = 12;
  std::array<int, 3> images_per_split = {120, 40, 40};  // train, val, test
  // 0,0,0 selects the default allocation: val = test = max(1, n/6), train = rest.
  std::array<int, 3> classes_per_split = {0, 0, 0};
  int image_height = 64, image_width = 64;
  IntRange objects_per_image{4, 12};
  IntRange object_scale{8, 16};  // instance diameter in pixels
  IntRange distractor_classes_per_image{1, 2};
  uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument on bad specs
  std::array<int, 3> resolved_class_split() const;
};

DatasetBundle generate_synthetic_dataset(const SyntheticSpec& spec);

/// All class names the generator can produce, in catalog order.
std::vector<std::string> synthetic_class_catalog();

struct LoadReport {
  struct Rejection {
    std::string id;
    std::string reason;
  };
  std::vector<Rejection> rejected;
  bool clean() const { return rejected.empty(); }
};

/// Layout: <root>/{images,annotations/annotations.json,manifest.json}.
void save_dataset(const DatasetBundle& bundle, const std::string& root);
DatasetBundle load_dataset(const std::string& root, LoadReport* report = nullptr);
DatasetBundle load_annotations(const std::string& annotation_path, const std::string& images_dir,
                               LoadReport* report = nullptr);

/// Resize to target_height preserving aspect ratio; dots and boxes follow.
ImageRecord preprocess_image(const ImageRecord& record, int target_height);

}  // namespace zsc
