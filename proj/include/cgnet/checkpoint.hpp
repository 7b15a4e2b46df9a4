#pragma once

#include "cgnet/network.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cgnet {

/// Everything besides the parameter store needed to continue a run.
struct TrainState {
  int iter = 0;                 // iterations completed
  std::uint64_t adam_t = 0;
  std::uint64_t seed = 1;
  std::array<float, 3> means{0.f, 0.f, 0.f};
};

struct CheckpointRecord {
  std::string name;
  Dims dims;
  std::vector<float> values;
};

/// Decoded file contents, records in file order.
struct Checkpoint {
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
  const CheckpointRecord& require(const std::string& name) const;
};

// Layout (all little-endian):
//   "CGN1" | u32 version=1 | u32 count
//   count x { u16 name_len | name | u8 dtype (0=f32) | u8 rank | rank x u32 dims | payload }
//   u64 FNV-1a-64 of every preceding byte
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError for bad magic/version/dtype/rank, truncation or dims that
/// overrun the file; ChecksumError when the structure parses but the footer differs.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

/// Parameters, buffers and ADAM moments of the model plus reserved "__"
/// records for the network config and training state.
Checkpoint make_checkpoint(const CGNet<float>& model, const TrainState& state);
NetworkConfig checkpoint_config(const Checkpoint& ckpt);
TrainState checkpoint_state(const Checkpoint& ckpt);
/// Copies values and moments into model. Every store entry must be present with
/// matching dims and no unknown non-reserved record may remain.
void load_into(CGNet<float>& model, const Checkpoint& ckpt);
CGNet<float> restore_model(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const CGNet<float>& model, const TrainState& state);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace cgnet
