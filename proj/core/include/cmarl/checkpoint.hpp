#pragma once

#include <cmarl/diffcore.hpp>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmarl::diff {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flat binary file of named tensors: magic "CMTN", u32 version, u64 count,
/// then per tensor u32 name length, name bytes, u32 rank, u64 extents,
/// raw little-endian 64-bit values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& items);

std::map<std::string, Tensor> load_tensors(const std::string& path);

}  // namespace cmarl::diff
