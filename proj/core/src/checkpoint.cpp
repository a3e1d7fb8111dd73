// SPDX-License-Identifier: Apache-2.0
#include "zsc/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace zsc {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'Z', 'S', 'C', 'K', 'P', 'T', '0', '1'};

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void put_f64_le(std::ostream& out, double v) {
  const uint64_t u = std::bit_cast<uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);

  json index = json::array();
  for (const auto& [name, t] : tensors) index.push_back({{"name", name}, {"shape", t.shape()}});
  json h{{"version", header.version},
         {"module", header.module},
         {"config_hash", header.config_hash},
         {"seed", std::to_string(header.seed)},
         {"meta", header.meta},
         {"tensors", index}};
  const std::string htext = h.dump();

  out.write(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<uint32_t>(htext.size()));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [_, t] : tensors)
    for (int64_t i = 0; i < t.numel(); ++i) put_f64_le(out, t[i]);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const uint32_t hlen = get_u32(in);
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  json h;
  try {
    h = json::parse(htext);
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt checkpoint header in " + path + ": " + e.what());
  }

  Checkpoint ckpt;
  ckpt.header.version = h.at("version").get<std::string>();
  ckpt.header.module = h.at("module").get<std::string>();
  ckpt.header.config_hash = h.at("config_hash").get<std::string>();
  ckpt.header.seed = std::stoull(h.at("seed").get<std::string>());
  ckpt.header.meta = h.at("meta").get<std::map<std::string, std::string>>();
  for (const auto& entry : h.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor t{shape};
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = get_f64_le(in);
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return ckpt;
}

void check_config_hash(const CheckpointHeader& header, const std::string& expected_hash,
                       bool force) {
  if (header.config_hash == expected_hash) return;
  if (force) return;
  throw std::runtime_error("checkpoint config hash " + header.config_hash +
                           " does not match current config " + expected_hash +
                           " (module " + header.module + "); rerun the stage or pass --force");
}

void load_into_params(nn::ParamStore& params, const Checkpoint& ckpt) {
  const auto& named = params.named();
  if (named.size() != ckpt.tensors.size())
    throw std::runtime_error("checkpoint tensor count mismatch (" +
                             std::to_string(ckpt.tensors.size()) + " vs " +
                             std::to_string(named.size()) + " parameters)");
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& [pname, pvar] = named[i];
    const auto& [cname, ct] = ckpt.tensors[i];
    if (pname != cname)
      throw std::runtime_error("checkpoint tensor '" + cname + "' where '" + pname +
                               "' expected");
    if (!pvar->value.same_shape(ct))
      throw std::runtime_error("checkpoint tensor '" + cname + "' shape " + ct.shape_str() +
                               " does not match parameter " + pvar->value.shape_str());
    pvar->value = ct;
  }
}

std::vector<std::pair<std::string, Tensor>> snapshot_params(const nn::ParamStore& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params.named().size());
  for (const auto& [name, var] : params.named()) out.emplace_back(name, var->value);
  return out;
}

}  // namespace zsc
