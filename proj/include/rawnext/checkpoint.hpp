#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rawnext/model.hpp"
#include "rawnext/training.hpp"

namespace rawnext {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

/// Binary container:
///   "RNXT" u32 version | str config | u64 epoch u64 step f64 running_loss |
///   str rng_state | u64 count | count x (str name, u32 rank, u64 dims[rank], f32 values[])
/// Strings are u64 length + bytes; integers little-endian.
struct Checkpoint {
  std::string config_text;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;  // optimiser step count
  double running_loss = 0;
  std::string rng_state;
  std::map<std::string, StoredTensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters as "param/<name>", buffers as "buffer/<name>".
void store_model(Checkpoint& checkpoint, const ParameterSet<float>& params);
/// Copies stored values into the set; every name and shape must match.
void restore_model(const Checkpoint& checkpoint, ParameterSet<float>& params);

/// Head parameters, optimiser moments ("opt.m/", "opt.v/", "opt.vmax/"),
/// epoch, step and RNG state.
void store_trainer(Checkpoint& checkpoint, Trainer& trainer);
void restore_trainer(const Checkpoint& checkpoint, Trainer& trainer);

}  // namespace rawnext
