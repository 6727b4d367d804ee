// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfdiff/adam.hpp"
#include "cfdiff/camae.hpp"
#include "cfdiff/tensor.hpp"

namespace cfdiff::ckpt {

/// Names under this prefix hold optimizer state, not model weights.
inline constexpr const char* kAdamPrefix = "adam.";

struct NamedTensor {
  std::string name;
  nd::Tensorf value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Binary layout (little-endian): "CFCK", u16 version, u64 digest of
/// config_text, config_text, meta_text, u32 tensor count, then per tensor
/// name, u64 rows, u64 cols, f32 payload. Strings are u32 length + bytes.
struct Checkpoint {
  std::string config_text;
  std::string meta_text;  // key = value lines (dimensions, progress)
  std::vector<NamedTensor> tensors;

  const nd::Tensorf* find(const std::string& name) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string meta_value(const std::string& meta_text, const std::string& key);

void store_params(Checkpoint& ck, const camae::CamAeParameters<float>& params);
camae::CamAeParameters<float> restore_params(const Checkpoint& ck);

void store_adam(Checkpoint& ck, const camae::CamAeParameters<float>& params, const nd::AdamState<float>& state);
/// Reconstructs the moments for `params` (same order); config comes from the caller.
nd::AdamState<float> restore_adam(const Checkpoint& ck, const camae::CamAeParameters<float>& params,
                                  nd::AdamConfig config);
bool has_adam(const Checkpoint& ck);

}  // namespace cfdiff::ckpt
