// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "uniqseg/membank.hpp"
#include "uniqseg/model.hpp"

namespace uniqseg::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

/// Everything needed to resume training exactly: parameters, optimizer
/// moments, memory bank contents and counters/generator state.
template <typename T>
struct CheckpointData {
  model::ModelParams<T> params;

  bool has_optimizer = false;
  model::ModelParams<T> opt_m;  // SGD momentum / Adam first moment
  model::ModelParams<T> opt_v;  // Adam second moment

  bool has_memory = false;
  std::size_t memory_capacity = 0;
  std::vector<T> memory_embeddings;  // FIFO order, size * dim
  std::vector<membank::Provenance> memory_provenance;
  std::int64_t memory_inserted = 0;

  std::int64_t step = 0;
  int epoch = 0;
  std::uint64_t rng_state = 0;
  std::uint64_t rng_stream = 0;
};

/// Single binary file: magic + version + JSON header (config, counters,
/// array directory) + raw little-endian array payload.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointData<T>& data);

template <typename T>
CheckpointData<T> load_checkpoint(const std::filesystem::path& path);

/// Convenience wrappers for parameter-only checkpoints.
template <typename T>
void save_model(const std::filesystem::path& path, const model::ModelParams<T>& params);

template <typename T>
model::ModelParams<T> load_model(const std::filesystem::path& path);

}  // namespace uniqseg::ckpt
