#pragma once

#include <filesystem>

#include "demorph/tensor.hpp"

namespace demorph {

// Array file layout, all integers little-endian:
//   bytes 0..7   magic "DMARRAY1"
//   u32          dtype (1 = float32)
//   u32          rank (always 4: n, c, h, w)
//   i64[rank]    dimensions
//   f32[numel]   values, row-major
inline constexpr char kArrayMagic[8] = {'D', 'M', 'A', 'R', 'R', 'A', 'Y', '1'};

void write_array(const std::filesystem::path& path, const Tensor<float>& tensor);

// Throws IntegrityError on a missing file, bad header or a size that disagrees with the header.
Tensor<float> read_array(const std::filesystem::path& path);

// Shape from the header alone.
Shape read_array_shape(const std::filesystem::path& path);

}  // namespace demorph
