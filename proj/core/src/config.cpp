// SPDX-License-Identifier: Apache-2.0
#include "zsc/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "zsc/rng.hpp"

namespace zsc {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string canon_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  long long x;
  try {
    x = std::stoll(trim(v), &pos);
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
  if (pos != trim(v).size())
    throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
  return std::to_string(x);
}

std::string canon_real(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double x;
  try {
    x = std::stod(trim(v), &pos);
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' expects a real, got '" + v + "'");
  }
  if (pos != trim(v).size())
    throw std::invalid_argument("config: key '" + key + "' expects a real, got '" + v + "'");
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string canon_int_list(const std::string& key, const std::string& v) {
  std::string out;
  std::stringstream ss(trim(v));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw std::invalid_argument("config: key '" + key + "' has an empty list element");
    if (!out.empty()) out += ",";
    out += canon_int(key, item);
  }
  if (out.empty())
    throw std::invalid_argument("config: key '" + key + "' expects a comma-separated int list");
  return out;
}

}  // namespace

const std::map<std::string, RunConfig::KeyInfo>& RunConfig::schema() {
  using T = Type;
  static const std::map<std::string, KeyInfo> s = {
      {"seed", {T::Int, "1", "global seed; stages derive their own streams"}},

      {"data.num_classes", {T::Int, "12", "synthetic classes across all splits"}},
      {"data.classes_train", {T::Int, "0", "0 = auto allocation"}},
      {"data.classes_val", {T::Int, "0", "0 = auto allocation"}},
      {"data.classes_test", {T::Int, "0", "0 = auto allocation"}},
      {"data.images_train", {T::Int, "120", ""}},
      {"data.images_val", {T::Int, "40", ""}},
      {"data.images_test", {T::Int, "40", ""}},
      {"data.image_height", {T::Int, "64", ""}},
      {"data.image_width", {T::Int, "64", ""}},
      {"data.objects_min", {T::Int, "4", "target instances per image, lower bound (>=3)"}},
      {"data.objects_max", {T::Int, "12", ""}},
      {"data.object_scale_min", {T::Int, "8", "instance diameter in px"}},
      {"data.object_scale_max", {T::Int, "16", ""}},
      {"data.distractors_min", {T::Int, "1", "distractor classes per image"}},
      {"data.distractors_max", {T::Int, "2", ""}},
      {"data.sigma", {T::Real, "2", "density target kernel width in px"}},
      {"data.target_height", {T::Int, "64", "preprocess resize height"}},

      {"embed.dim", {T::Int, "64", "patch embedding dimension"}},
      {"embed.patch_size", {T::Int, "32", "crop resize for the embedding net"}},
      {"embed.epochs", {T::Int, "30", ""}},
      {"embed.batch", {T::Int, "16", ""}},
      {"embed.lr", {T::Real, "1e-3", ""}},
      {"embed.crop_jitter", {T::Real, "0.25", "max per-side box inflation of training crops"}},

      {"semantic.dim", {T::Int, "512", "semantic embedding dimension"}},
      {"semantic.table",
       {T::Str, "auto", "semantic vector source: 'auto' (dataset table if present), "
                        "'procedural', or a JSON table path"}},

      {"vae.latent", {T::Int, "64", "latent dimension"}},
      {"vae.hidden", {T::Int, "256", "hidden width of encoder/decoder"}},
      {"vae.epochs", {T::Int, "150", ""}},
      {"vae.batch", {T::Int, "32", ""}},
      {"vae.lr", {T::Real, "1e-3", ""}},
      {"vae.kl_weight", {T::Real, "1", ""}},

      {"proto.samples", {T::Int, "256", "features averaged into a class prototype"}},

      {"counter.backbone", {T::IntList, "16,32,32", "stride-2 conv widths"}},
      {"counter.d", {T::Int, "32", "channels after the 1x1 reduction"}},
      {"counter.head", {T::IntList, "32,16,8,8", "counting head conv widths"}},
      {"counter.exemplar_size", {T::Int, "32", "exemplar crop resize"}},
      {"counter.n_exemplars", {T::Int, "3", "gt boxes per training step"}},
      {"counter.epochs", {T::Int, "25", ""}},
      {"counter.batch", {T::Int, "4", ""}},
      {"counter.lr", {T::Real, "1e-3", ""}},
      {"counter.weight_decay", {T::Real, "1e-4", ""}},

      {"predictor.channels", {T::IntList, "24,16,16,8,8", "error predictor conv widths"}},
      {"predictor.strides", {T::IntList, "2,2,1,1,1", ""}},
      {"predictor.epochs", {T::Int, "12", ""}},
      {"predictor.batch", {T::Int, "8", ""}},
      {"predictor.patches_per_image", {T::Int, "4", "training patches sampled per image"}},
      {"predictor.lr", {T::Real, "1e-3", ""}},
      {"predictor.normalize_target", {T::Int, "1", "1: regress eps/max(N*,1); 0: raw eps"}},

      {"selector.m", {T::Int, "450", "candidate patches sampled per image"}},
      {"selector.k", {T::Int, "10", "nearest neighbors kept"}},
      {"selector.s", {T::Int, "3", "final exemplars"}},
      {"selector.patch_min", {T::Int, "32", "candidate side length lower bound"}},
      {"selector.patch_max", {T::Int, "96", ""}},
      {"selector.aspect_min", {T::Real, "0.75", ""}},
      {"selector.aspect_max", {T::Real, "1.33", ""}},
      {"selector.rank_by", {T::Str, "predictor", "'predictor' or 'objectness'"}},
      {"selector.proposals", {T::Str, "", "external proposal JSON; empty = random sampling"}},

      {"eval.split", {T::Str, "val", "'train', 'val' or 'test'"}},
      {"eval.num_seeds", {T::Int, "3", "seeds averaged for stochastic modes"}},
      {"eval.save_density", {T::Int, "0", "1: write per-image density PNGs"}},

      {"heatmap.threshold", {T::Real, "0.5", "mask activations below this after min-max"}},
      {"heatmap.stride", {T::Int, "8", "dense embedding grid stride"}},
  };
  return s;
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const auto& [key, info] : schema()) c.set(key, info.default_value);
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = schema().find(key);
  if (it == schema().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  switch (it->second.type) {
    case Type::Int: values_[key] = canon_int(key, value); break;
    case Type::Real: values_[key] = canon_real(key, value); break;
    case Type::IntList: values_[key] = canon_int_list(key, value); break;
    case Type::Str: values_[key] = trim(value); break;
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig RunConfig::from_text(const std::string& text, const std::vector<std::string>& overrides) {
  RunConfig c = defaults();
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  " is not key = value: '" + line + "'");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& o : overrides) c.apply_override(o);
  return c;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config file not found: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), overrides);
}

int64_t RunConfig::get_int(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return std::stoll(it->second);
}

double RunConfig::get_real(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return std::stod(it->second);
}

const std::string& RunConfig::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get_str(key));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

uint64_t RunConfig::hash(const std::vector<std::string>& prefixes) const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [key, value] : values_) {  // std::map: sorted order
    bool match = prefixes.empty();
    for (const auto& p : prefixes)
      if (key == p || key.rfind(p, 0) == 0) {
        match = true;
        break;
      }
    if (!match) continue;
    feed(key);
    feed("=");
    feed(value);
    feed("\n");
  }
  return h;
}

std::string RunConfig::hash_hex(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

std::vector<std::string> module_hash_prefixes(const std::string& module) {
  if (module == "dataset") return {"seed", "data."};
  if (module == "embed") return {"seed", "data.", "embed."};
  if (module == "counter") return {"seed", "data.", "counter."};
  if (module == "vae") return {"seed", "data.", "embed.", "semantic.", "vae."};
  if (module == "vae_counting") return {"seed", "data.", "counter.", "semantic.", "vae."};
  if (module == "predictor") return {"seed", "data.", "counter.", "predictor."};
  throw std::invalid_argument("module_hash_prefixes: unknown module '" + module + "'");
}

}  // namespace zsc
