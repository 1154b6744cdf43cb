#pragma once

#include <filesystem>

#include "p3d/tensor.h"

namespace p3d {

/// Binary PGM ("P5", maxval 255); pixel values in [0,1] are stored as round(255 * v).
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Returns an [H,W] tensor with values v/255. Throws IoError naming the file
/// when it is missing or truncated.
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace p3d
