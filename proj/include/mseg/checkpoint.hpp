#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mseg/autograd.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

/// Binary container of named tensors.
///
/// Layout (all integers little-endian):
///   "MSEG" | u32 version (=1) | u32 tensor count |
///   per tensor: u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64),
///               u8 ndim, ndim × u64 dims, raw little-endian values
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint checkpoint_from(const ParameterStore& params);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws BadMagicError, UnsupportedVersionError or TruncatedFileError.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mseg
