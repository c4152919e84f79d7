#pragma once

#include "sbwm/numkit/params.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

// Binary parameter checkpoint, version 1. All integers and values are
// little-endian:
//
//   magic      8 bytes  "SBWMCKPT"
//   version    u32
//   count      u32
//   count x entry:
//     name_len u32, name bytes (UTF-8)
//     rank     u32, dims u64 x rank
//     values   f64 x product(dims)

namespace sbwm::nk {

inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> values;

    bool operator==(const CheckpointEntry&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

std::vector<CheckpointEntry> snapshot(const ParameterSet& params);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Loads values into `params`; names, order and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, ParameterSet& params);
void restore(const std::vector<CheckpointEntry>& entries, ParameterSet& params);

} // namespace sbwm::nk
