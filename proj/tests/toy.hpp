#pragma once

// Small fixtures shared by the model, trainer and eval tests.

#include <random>
#include <string>

#include "tbe/dataset.hpp"
#include "tbe/model_config.hpp"

namespace toy {

inline const char* kTinyYaml = R"(
preset: tiny
input: {height: 16, width: 16, channels: 1}
embed_dim: 4
trunk:
  - {name: c1, type: conv, kernel: 3, out: 4, stage: low}
  - {name: p1, type: maxpool, window: 2, stride: 2, stage: low}
  - {name: c2, type: conv, kernel: 3, out: 4, stage: middle}
  - {name: c3, type: conv, kernel: 3, out: 4, stage: high}
  - {name: p2, type: adaptive_pool, out_size: 2, stage: high}
branches:
  - name: top
    box: [0.0, 0.0, 1.0, 0.5]
    taps: [c1, c2]
    layers:
      - {name: b1, type: conv, kernel: 3, out: 3}
      - {name: bp, type: adaptive_pool, out_size: 2}
)";

inline tbe::ModelConfig tiny() { return tbe::parse_model_config(kTinyYaml); }

/// `subjects` identities, each a fixed random 16x16 pattern; every record is
/// the pattern plus small noise. sim_video twins are added when `per_sim` > 0.
inline tbe::Dataset patterns(std::size_t subjects, std::size_t per_still, std::size_t per_sim,
                             std::uint64_t seed, float noise = 0.05f) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::normal_distribution<float> g(0.0f, noise);
    tbe::Dataset d;
    for (std::size_t s = 0; s < subjects; ++s) {
        const std::string id = "s" + std::to_string(100 + s);
        d.subjects.push_back(id);
        std::vector<float> base(256);
        for (float& v : base) v = u(rng);
        for (std::size_t k = 0; k < per_still + per_sim; ++k) {
            std::vector<float> px = base;
            for (float& v : px) v = std::clamp(v + g(rng), 0.0f, 1.0f);
            tbe::ManifestRecord r;
            r.path = id + "_" + std::to_string(k) + ".pgm";
            r.subject_id = id;
            r.stream = k < per_still ? tbe::Stream::still : tbe::Stream::sim_video;
            d.records.push_back(r);
            d.images.emplace_back(tbe::Shape{1, 16, 16}, std::move(px));
            d.labels.push_back(static_cast<int>(s));
        }
    }
    return d;
}

}  // namespace toy
