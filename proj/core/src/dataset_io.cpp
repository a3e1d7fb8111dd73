// SPDX-License-Identifier: Apache-2.0
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "zsc/dataset.hpp"
#include "zsc/version.hpp"

namespace zsc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json dump_record(const ImageRecord& rec) {
  json points = json::array();
  for (const auto& p : rec.dots) points.push_back({p.x, p.y});
  json boxes = json::array();
  for (const auto& b : rec.gt_boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
  return json{{"class_name", rec.class_name},
              {"split", split_name(rec.split)},
              {"points", points},
              {"boxes", boxes}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void save_dataset(const DatasetBundle& bundle, const std::string& root) {
  const fs::path base(root);
  fs::create_directories(base / "images");
  fs::create_directories(base / "annotations");

  json ann = json::object();
  json split_ids = json::object();
  for (Split s : {Split::train, Split::val, Split::test}) {
    json ids = json::array();
    for (const auto& rec : bundle.split(s)) {
      const std::string file = rec.id + ".png";
      write_png((base / "images" / file).string(), rec.pixels);
      ann[file] = dump_record(rec);
      ids.push_back(file);
    }
    split_ids[split_name(s)] = ids;
  }
  write_text(base / "annotations" / "annotations.json", ann.dump(1));

  json manifest{{"artifact_version", kVersion},
                {"splits", split_ids},
                {"classes",
                 {{"train", bundle.classes_train},
                  {"val", bundle.classes_val},
                  {"test", bundle.classes_test}}}};
  write_text(base / "manifest.json", manifest.dump(1));
}

DatasetBundle load_annotations(const std::string& annotation_path, const std::string& images_dir,
                               LoadReport* report) {
  std::ifstream in(annotation_path);
  if (!in) throw std::runtime_error("annotation file not found: " + annotation_path);
  json ann;
  try {
    in >> ann;
  } catch (const json::exception& e) {
    throw std::runtime_error("annotation file does not parse: " + std::string(e.what()));
  }
  if (!ann.is_object()) throw std::runtime_error("annotation file must be a JSON object");

  DatasetBundle bundle;
  LoadReport local;
  LoadReport& rep = report ? *report : local;

  std::set<std::string> class_sets[3];
  for (const auto& [file, entry] : ann.items()) {
    auto reject = [&](const std::string& why) {
      rep.rejected.push_back({file, why});
    };
    const fs::path img_path = fs::path(images_dir) / file;
    if (!fs::exists(img_path)) {
      reject("image file missing: " + img_path.string());
      continue;
    }
    ImageRecord rec;
    rec.id = fs::path(file).stem().string();
    try {
      rec.pixels = read_png(img_path.string());
      rec.class_name = entry.at("class_name").get<std::string>();
      rec.split = split_from_name(entry.value("split", "train"));
      for (const auto& p : entry.at("points")) {
        if (!p.is_array() || p.size() != 2) throw std::runtime_error("malformed point");
        rec.dots.push_back(Point{p[0].get<double>(), p[1].get<double>()});
      }
      for (const auto& b : entry.at("boxes")) {
        if (!b.is_array() || b.size() != 4) throw std::runtime_error("malformed box");
        rec.gt_boxes.push_back(
            BoundingBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()});
      }
    } catch (const std::exception& e) {
      reject(std::string("malformed entry: ") + e.what());
      continue;
    }

    const int h = rec.height(), w = rec.width();
    bool ok = true;
    for (const auto& p : rec.dots)
      if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h) {
        reject("dot out of bounds");
        ok = false;
        break;
      }
    if (!ok) continue;
    for (const auto& b : rec.gt_boxes)
      if (!b.inside(h, w)) {
        reject("box out of bounds or degenerate");
        ok = false;
        break;
      }
    if (!ok) continue;

    class_sets[static_cast<size_t>(rec.split)].insert(rec.class_name);
    bundle.split(rec.split).push_back(std::move(rec));
  }

  for (Split s : {Split::train, Split::val, Split::test}) {
    auto& recs = bundle.split(s);
    std::sort(recs.begin(), recs.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
  }
  bundle.classes_train.assign(class_sets[0].begin(), class_sets[0].end());
  bundle.classes_val.assign(class_sets[1].begin(), class_sets[1].end());
  bundle.classes_test.assign(class_sets[2].begin(), class_sets[2].end());
  if (!report && !local.clean()) {
    std::string msg = "rejected records:";
    for (const auto& r : local.rejected) msg += " [" + r.id + ": " + r.reason + "]";
    throw std::runtime_error(msg);
  }
  return bundle;
}

DatasetBundle load_dataset(const std::string& root, LoadReport* report) {
  const fs::path base(root);
  auto bundle = load_annotations((base / "annotations" / "annotations.json").string(),
                                 (base / "images").string(), report);
  // The manifest's class lists are authoritative: they preserve classes for
  // which every record might have been rejected and the catalog ordering.
  const fs::path man_path = base / "manifest.json";
  if (fs::exists(man_path)) {
    std::ifstream in(man_path);
    json man;
    in >> man;
    if (man.contains("classes")) {
      bundle.classes_train = man["classes"]["train"].get<std::vector<std::string>>();
      bundle.classes_val = man["classes"]["val"].get<std::vector<std::string>>();
      bundle.classes_test = man["classes"]["test"].get<std::vector<std::string>>();
    }
  }
  return bundle;
}

ImageRecord preprocess_image(const ImageRecord& record, int target_height) {
  if (target_height < 1) throw std::invalid_argument("preprocess_image: target_height must be >0");
  const int h = record.height(), w = record.width();
  if (target_height == h) return record;

  const double sy = static_cast<double>(target_height) / h;
  const int out_w = std::max(1, static_cast<int>(std::lround(w * sy)));
  const double sx = static_cast<double>(out_w) / w;

  ImageRecord out;
  out.id = record.id;
  out.class_name = record.class_name;
  out.split = record.split;
  out.pixels = resize_bilinear(record.pixels, target_height, out_w);
  out.dots.reserve(record.dots.size());
  for (const auto& p : record.dots)
    out.dots.push_back(Point{std::min(p.x * sx, out_w - 1e-9), std::min(p.y * sy, target_height - 1e-9)});
  out.gt_boxes.reserve(record.gt_boxes.size());
  for (const auto& b : record.gt_boxes) {
    BoundingBox nb;
    nb.x1 = std::max(0, static_cast<int>(std::floor(b.x1 * sx)));
    nb.y1 = std::max(0, static_cast<int>(std::floor(b.y1 * sy)));
    nb.x2 = std::min(out_w, static_cast<int>(std::ceil(b.x2 * sx)));
    nb.y2 = std::min(target_height, static_cast<int>(std::ceil(b.y2 * sy)));
    if (nb.x2 <= nb.x1) nb.x2 = std::min(out_w, nb.x1 + 1);
    if (nb.y2 <= nb.y1) nb.y2 = std::min(target_height, nb.y1 + 1);
    out.gt_boxes.push_back(nb);
  }
  return out;
}

}  // namespace zsc
