// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vtlab/optim.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab {

// Versioned binary parameter container ("VTL1"); byte layout documented in
// docs/checkpoint_format.md. Payloads are little-endian f32.

struct CheckpointEntry {
  std::vector<size_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string family;  // model-family tag
  int64_t step = 0;
  std::vector<std::string> order;  // entry names in file order
  std::map<std::string, CheckpointEntry> entries;
  std::optional<AdamState> adam;  // moments aligned with `order`
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const std::string& family, int64_t step,
                     const NamedParams& params, const AdamState* adam = nullptr);

Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint entries into name-matched tensors. With strict=true every
// destination tensor must be present in the checkpoint; extra checkpoint
// entries are always ignored. Returns the names actually loaded.
std::vector<std::string> load_into(const Checkpoint& ckpt, NamedParams& params, bool strict);

}  // namespace vtlab
