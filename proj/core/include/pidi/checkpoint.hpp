#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pidi/blocks.hpp"
#include "pidi/serialize.hpp"

namespace pidi::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "PIDN", u32 version, u32 task (0 edge, 1 classify), spec string, u32 entry
/// count, then (name, tensor record) per entry.
struct Checkpoint {
  nn::NetworkSpec spec;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

/// Captures every parameter and buffer of a network.
Checkpoint make_checkpoint(const nn::NetworkSpec& spec, const std::vector<nn::ParamRef<float>>& params);

/// Copies tensors into params by name. Missing names, extra names and shape
/// mismatches raise FormatError.
void load_parameters(const Checkpoint& checkpoint, const std::vector<nn::ParamRef<float>>& params);

}  // namespace pidi::io
