#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "tbe/ops.hpp"
#include "tbe/tensor.hpp"

namespace tbe {

// Images are Tensor[C,H,W] with values in [0,1]. Binary PGM (P5) holds one
// channel, PPM (P6) three; only 8-bit files are supported.

Tensor read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Tensor& image);

/// Quantise to 8 bits exactly as write_pnm would (round half up, clamp).
Tensor quantize8(const Tensor& image);

Tensor flip_horizontal(const Tensor& image);

/// Bilinear resample of `image` under a similarity about the image centre:
/// output(p) = input(centre + (p - centre - shift) / scale), replicate borders.
Tensor warp_similarity(const Tensor& image, double shift_x, double shift_y, double scale,
                       double rotation_rad = 0.0);

/// Sets every pixel inside `rect` to `fill` in all channels.
Tensor occlude(const Tensor& image, const CropRect& rect, float fill);

/// Stacks [C,H,W] images into [N,C,H,W].
Tensor stack_images(std::span<const Tensor> images);

}  // namespace tbe
