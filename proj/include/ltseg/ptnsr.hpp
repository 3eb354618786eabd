#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ltseg/tensor.hpp"

namespace ltseg::ptnsr {

// PTNSR v1 container:
//   "PTNS" | version u8 = 1 | dtype u8 | ndim u8 | ndim x u32 LE dims | payload LE, row-major
inline constexpr char kMagic[4] = {'P', 'T', 'N', 'S'};
inline constexpr std::uint8_t kVersion = 1;

enum class DType : std::uint8_t { F64 = 1, U8 = 2 };

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype);
Tensor decode(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

// U8 storage requires every value to be an integer in [0, 255].
void save(const Tensor& t, const std::filesystem::path& path, DType dtype = DType::F64);
Tensor load(const std::filesystem::path& path);

}  // namespace ltseg::ptnsr
