#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pgsu/nn.hpp"
#include "pgsu/tensor.hpp"

namespace pgsu {

// On-disk layout (all integers unsigned little-endian, payload IEEE-754
// binary64 little-endian):
//   "PGSU" | u32 version | u64 entry count
//   per entry: u64 name length | name bytes | u64 rank | u64 dims[rank] |
//              f64 values[prod(dims)] (row-major)
//   u64 step | u64 config hash
inline constexpr char kCheckpointMagic[4] = {'P', 'G', 'S', 'U'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;

  const CheckpointEntry* find(const std::string& name) const;
  std::size_t parameter_count() const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws Error(data) naming the byte offset of the first malformed field.
Checkpoint read_checkpoint(std::istream& is);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint snapshot(const ParameterStore& store, std::uint64_t step, std::uint64_t config_hash);

/// Copies checkpoint values into every store parameter whose name starts
/// with one of `prefixes` (all parameters when empty). Missing names and
/// shape mismatches are collected and reported together as Error(data).
/// Checkpoint entries outside the selected prefixes are ignored.
void load_parameters(ParameterStore& store, const Checkpoint& ckpt,
                     const std::vector<std::string>& prefixes = {});

/// Adam moments stored as a checkpoint ("adam.m.<param>", "adam.v.<param>").
Checkpoint snapshot_optimizer(const ParameterStore& store, const OptimizerState& state);
void load_optimizer(const ParameterStore& store, OptimizerState& state, const Checkpoint& ckpt);

}  // namespace pgsu
