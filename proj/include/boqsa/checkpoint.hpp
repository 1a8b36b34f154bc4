#pragma once

// Binary checkpoint container.
//
//   "BQSA" | u32 version | u64 step | u32 len, config echo bytes |
//   u32 tensor count | per tensor: u32 len, name | u8 dtype (0 = f32,
//   1 = f64) | u32 rank | u64 dims[rank] | payload
//
// All integers and payloads are little-endian; payloads are row-major.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "boqsa/nn.hpp"

namespace boqsa {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct CheckpointTensor {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<std::uint8_t> payload;  // little-endian element bytes

    template <typename T>
    static CheckpointTensor from(const std::string& name, const Tensor<T>& tensor);
    /// Values converted to T; bit-exact when T matches dtype.
    template <typename T>
    std::vector<T> values() const;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t version = kVersion;
    std::uint64_t step = 0;
    std::string config_echo;
    std::vector<CheckpointTensor> tensors;

    const CheckpointTensor* find(const std::string& name) const;
    const CheckpointTensor& get(const std::string& name) const;  // throws IoError
};

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends named tensors (in order) to a checkpoint, prefixing each name.
template <typename T>
void store_tensors(Checkpoint& checkpoint, const NamedTensors<T>& tensors, const std::string& prefix = "");
/// Overwrites the values of `tensors` from the checkpoint entries of the same
/// (prefixed) name. Missing names and shape mismatches throw ConfigError.
template <typename T>
void restore_tensors(const Checkpoint& checkpoint, NamedTensors<T>& tensors, const std::string& prefix = "");

}  // namespace boqsa
