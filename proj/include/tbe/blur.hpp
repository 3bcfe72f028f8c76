#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tbe/manifest.hpp"
#include "tbe/tensor.hpp"

namespace tbe {

enum class BlurKind { motion, defocus, defocus_then_motion };

/// One artificial degradation. Motion fields are used by `motion` and
/// `defocus_then_motion`, defocus fields by `defocus` and
/// `defocus_then_motion`.
struct BlurSpec {
    BlurKind kind = BlurKind::motion;
    int length = 0;       // motion extent L in pixels (odd)
    double theta = 0.0;   // motion direction, radians, 0 = horizontal
    double sigma = 0.0;   // Gaussian magnitude
    int support = 0;      // Gaussian window size R

    std::string name() const;
    bool operator==(const BlurSpec&) const = default;
};

/// Square, odd-sized, non-negative kernel with unit sum. Stored in double so
/// that a constant image passes through a blur bit-for-bit.
struct Kernel {
    std::size_t size = 1;
    std::vector<double> weights{1.0};

    /// Weight at offset (di, dj) from the centre, row offset first.
    double at(std::ptrdiff_t di, std::ptrdiff_t dj) const;
    double sum() const;
    static Kernel identity() { return {}; }
};

/// Uniform weights on the rasterised segment of length L through the centre
/// at angle theta (counter-clockwise from the +x axis, image rows grow
/// downward). Keeps lattice points within radius L/2, then renormalises.
Kernel make_motion_kernel(int length, double theta);

/// Gaussian on |i|,|j| <= R/2, scaled to unit sum.
Kernel make_defocus_kernel(double sigma, int support);

/// Full 2-D convolution of two kernels (size s1 + s2 - 1), renormalised.
/// Applying the result once equals applying `first` then `second`.
Kernel compose_kernels(const Kernel& first, const Kernel& second);

Kernel kernel_for(const BlurSpec& spec);

/// The 38 configurations: 12 motion (L in {7,9,11} x theta in
/// {0, pi/4, pi/2, 3pi/4}), 2 defocus (R = 9, sigma in {1.5, 3.0}) and 24
/// defocus-then-motion combinations, in that order.
const std::vector<BlurSpec>& all_blur_specs();

BlurSpec sample_blur_spec(std::mt19937_64& rng);

/// Per-channel 2-D correlation with replicate borders; output matches the
/// input size. Throws if the kernel is not smaller than the image.
Tensor apply_blur(const Tensor& image, const Kernel& kernel);

struct TwoStreamResult {
    Manifest manifest;
    std::vector<std::string> errors;  // one entry per record that failed
};

/// Emits every `still` record followed by a blurred twin tagged `sim_video`
/// with the same subject. Blurred images are written as 8-bit PNM under
/// `<out_manifest dir>/sim_video/`. Record i draws its blur from a stream
/// derived from (seed, i), so the output does not depend on processing
/// order. Non-still records pass through unchanged.
TwoStreamResult build_two_stream(const Manifest& input, const std::filesystem::path& out_manifest,
                                 std::uint64_t seed);

}  // namespace tbe
