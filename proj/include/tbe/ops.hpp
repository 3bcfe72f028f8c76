#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tbe/tensor.hpp"

namespace tbe {

enum class Padding { valid, same_zero, replicate };

Padding parse_padding(const std::string& name);
const char* padding_name(Padding pad);

/// Padding added on each side of an axis for a kernel of size `kernel`.
std::size_t padding_amount(std::size_t kernel, Padding pad);

/// floor((in + 2p - kernel) / stride) + 1; throws if the kernel does not fit.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, Padding pad);

/// input [N,C,H,W], weights [K,C,kh,kw], bias [K] -> [N,K,H',W'].
/// Reductions run in double; every sample is processed independently so a
/// row's result never depends on what else is in the batch.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
              Padding pad);

/// Max pooling over window x window patches, floor output size. Ties route
/// the gradient to the first maximum in row-major order.
Tensor maxpool(const Tensor& input, std::size_t window, std::size_t stride);

/// Max pooling to a fixed output grid. Bin i covers
/// [floor(i*H/out), ceil((i+1)*H/out)), so bins may overlap when out > H.
Tensor adaptive_maxpool(const Tensor& input, std::size_t out_h, std::size_t out_w);

Tensor relu(const Tensor& input);

/// input [N,Din], weights [Din,Dout], bias [Dout] -> [N,Dout].
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
std::vector<Tensor> split(const Tensor& input, std::size_t axis, std::span<const std::size_t> sizes);

/// Fractional rectangle (x, y, w, h) in [0,1] image coordinates.
struct FracBox {
    double x = 0.0;
    double y = 0.0;
    double w = 1.0;
    double h = 1.0;
};

/// Integer rectangle on a feature map.
struct CropRect {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t w = 0;
    std::size_t h = 0;
    bool operator==(const CropRect&) const = default;
};

/// Scales `box` to a map_h x map_w grid: round-half-up of every coordinate,
/// size clamped to >= 1 and to the map extent.
CropRect crop_rect(const FracBox& box, std::size_t map_h, std::size_t map_w);

/// Copies rect out of every [C,H,W] plane; backward scatters into the rect only.
Tensor crop_feature_map(const Tensor& input, const CropRect& rect);
Tensor crop_feature_map(const Tensor& input, const FracBox& box);

/// Row-wise unit normalisation of [N,D]. Rows with norm <= 1e-12 throw.
Tensor l2_normalize(const Tensor& input);

/// Mean over axis 0: [N,...] -> [1,...].
Tensor mean_rows(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& input, float factor);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& input, float p, std::mt19937_64& rng);

/// [N, ...] -> [N, prod(...)].
Tensor flatten(const Tensor& input);

}  // namespace tbe
