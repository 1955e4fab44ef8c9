#pragma once

#include <string>

#include "tensor.hpp"

namespace dafe {

// Raw tensor file: magic "DAFT", u32 LE version, u32 LE rank, u32 LE dims,
// then row-major data as little-endian 64-bit floats.

inline constexpr std::uint32_t kDaftVersion = 1;

void write_daft(const std::string& path, const Tensor& t);
Tensor read_daft(const std::string& path);

}  // namespace dafe
