#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "edunet/config.hpp"
#include "edunet/optim.hpp"
#include "edunet/param_store.hpp"
#include "edunet/rng.hpp"

namespace edunet {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunSettings settings;
  ParamStore store;  ///< parameters and norm buffers
  AdamState adam;
  PlateauScheduler scheduler;
  double lr = 0.0;
  int epoch = 0;
  Rng::State rng{};

  /// Deep copy (tensors are not shared).
  Checkpoint clone() const;
};

/// Freshly initialized model and optimizer for `settings` (params from fork "init" of the seed).
Checkpoint init_checkpoint(const RunSettings& settings);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): "EDUN", u32 version, u32-length JSON metadata, tensor table of
/// parameters and buffers, tensor table of optimizer moments. A tensor table is a u32 count,
/// then per tensor a u32-length name, u8 rank, u64 dims and an f32 payload.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace edunet
