#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "tbe/manifest.hpp"
#include "tbe/tensor.hpp"

namespace tbe {

struct CorpusOptions {
    std::size_t n_subjects = 50;
    std::size_t train_stills = 1;     // split "train"
    std::size_t gallery_stills = 0;   // split "gallery"
    std::size_t videos = 1;           // first is "gallery" when there are several, rest "probe"
    std::size_t frames_per_video = 8;
    std::size_t size = 64;
    bool blur_videos = true;          // one random blur configuration per video
};

/// Procedural identity: a smooth face layout plus fine eye and mouth
/// textures. Rendering is analytic, so geometric jitter does not resample.
struct Identity {
    double skin = 0.5;
    double face_rx = 22.0, face_ry = 28.0;
    double eye_dx = 11.0, eye_y = 25.0, eye_r = 3.5;
    double brow = 0.0;
    double mouth_y = 47.0, mouth_w = 10.0, mouth_h = 2.5;
    double nose_len = 8.0;
    struct Blob { double x, y, sigma, amp; };
    std::vector<Blob> blobs;
    struct Grating { double fx, fy, phase, amp; };
    std::vector<Grating> eye_texture;
    std::vector<Grating> mouth_texture;
};

Identity make_identity(std::uint64_t seed, std::size_t subject);

struct Pose {
    double shift_x = 0.0, shift_y = 0.0, scale = 1.0, rotation = 0.0;
    double gain = 1.0, offset = 0.0;
    double texture_jitter = 0.0;  // phase jitter of the fine textures, radians
};

/// Renders a [1,size,size] image of `id` under `pose`, then adds Gaussian
/// noise drawn from `rng`.
Tensor render_face(const Identity& id, const Pose& pose, std::size_t size, double noise_sigma,
                   std::mt19937_64& rng);

/// Writes stills/ and videos/ PGM files plus manifest.jsonl under out_dir and
/// returns the manifest. Deterministic in (options, seed).
Manifest generate_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir,
                         std::uint64_t seed);

}  // namespace tbe
