#pragma once

#include <filesystem>

#include "demorph/tensor.hpp"

namespace demorph {

// 8-bit RGB PNG <-> [0,1] image. Saving rounds half-up; loading divides by 255.
Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);

std::uint8_t quantize(float v);

}  // namespace demorph
