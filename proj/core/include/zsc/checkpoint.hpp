// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "zsc/nn.hpp"
#include "zsc/tensor.hpp"

namespace zsc {

/// Checkpoint container: a JSON header (artifact version, module name, config
/// hash, seed, free-form metadata, tensor index) followed by the tensors as
/// raw 64-bit little-endian floats. Round-trips bit-exactly.
struct CheckpointHeader {
  std::string version;
  std::string module;
  std::string config_hash;  // 16 hex digits
  uint64_t seed = 0;
  std::map<std::string, std::string> meta;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

Checkpoint load_checkpoint(const std::string& path);

/// Hard error on config-hash mismatch unless force is set.
void check_config_hash(const CheckpointHeader& header, const std::string& expected_hash,
                       bool force);

/// Copy checkpoint tensors into a model's parameter store; names and shapes
/// must match exactly.
void load_into_params(nn::ParamStore& params, const Checkpoint& ckpt);

std::vector<std::pair<std::string, Tensor>> snapshot_params(const nn::ParamStore& params);

}  // namespace zsc
