#pragma once

#include <filesystem>

#include "aalr/tensor.hpp"

namespace aalr {

// DTEN tensor file, little-endian:
//   magic "DTEN" (4 bytes), version u8 = 1, dtype u8 = 1 (f32), ndim u8,
//   ndim x u32 dims, product(dims) x f32 payload.
DenseTensor tensor_read(const std::filesystem::path& path);
void tensor_write(const DenseTensor& t, const std::filesystem::path& path);

// Binary PGM ("P5"), maxval must be 255. Value 255 is the neutral label.
LabelMap labelmap_read_pgm(const std::filesystem::path& path);
void labelmap_write_pgm(const LabelMap& map, const std::filesystem::path& path);

}  // namespace aalr
