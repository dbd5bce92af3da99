#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "simseg/network.hpp"

namespace simseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct OptimizerState {
  std::int64_t step = 0;
  NamedTensors first_moment;
  NamedTensors second_moment;
};

struct CheckpointMeta {
  std::string stage;  // "pretrain", "finetune" or "scratch"
  int epoch = 0;
  double best_val_iou = 0.0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  NetworkConfig config;
  NamedTensors parameters;
  NamedTensors buffers;
  OptimizerState optimizer;
  CheckpointMeta meta;
};

Checkpoint make_checkpoint(SegNetwork& net, const CheckpointMeta& meta,
                           const OptimizerState& optimizer = {});
// Network with the stored parameters and buffers; CheckpointError when they do
// not match the architecture the stored config builds.
SegNetwork restore_network(const Checkpoint& ckpt);
// Copies the stored values into an existing network of the same architecture.
void load_into(SegNetwork& net, const Checkpoint& ckpt);

// File layout: "SIMSEGCK", uint32 version, uint64 header length, JSON header
// (config, metadata, tensor table), then little-endian float64 blobs.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace simseg
