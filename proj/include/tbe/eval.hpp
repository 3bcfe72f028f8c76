#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tbe/manifest.hpp"
#include "tbe/model.hpp"

namespace tbe {

struct Frame {
    Tensor image;  // [C,H,W]
    int frame_idx = 0;
};

struct VideoRep {
    std::string video_id;
    std::string subject_id;
    std::vector<double> vector;  // average of frame and mirrored-frame embeddings
    std::size_t n_frames = 0;
};

/// Embeds every frame and its horizontal mirror and averages all of them
/// with equal weight. Frames are summed in frame_idx order, so the result
/// does not depend on the order they are passed in.
VideoRep video_representation(const Model& model, std::vector<Frame> frames, std::string video_id = {},
                              std::string subject_id = {});

/// Cosine of the angle between two vectors, clamped to [-1, 1].
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct RocPoint {
    double threshold = 0.0;  // accept when score >= threshold
    double far = 0.0;
    double vr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> points;  // starts at (0,0), FAR non-decreasing
    std::map<double, double> vr_at_far;
};

/// Sweeps every unique score as a threshold. VR@FAR is the highest
/// verification rate among thresholds whose FAR does not exceed the target.
RocResult roc_and_vr(std::span<const double> scores, const std::vector<bool>& same,
                     std::span<const double> target_fars);

/// Fraction of probes whose most similar gallery entry shares their subject.
/// Ties go to the lowest gallery index.
double rank1_identify(std::span<const VideoRep> gallery, std::span<const VideoRep> probes);

enum class Protocol { v2v, s2v, v2s, id };

Protocol parse_protocol(const std::string& name);
const char* protocol_name(Protocol p);  // "V2V-verify", "S2V-id", ...

struct ScoredPair {
    std::string a, b;
    double score = 0.0;
    bool same = false;
};

struct EvalReport {
    Protocol protocol = Protocol::v2v;
    std::vector<ScoredPair> scores;
    RocResult roc;
    std::optional<double> rank1;

    double vr_at(double far) const { return roc.vr_at_far.at(far); }
};

struct EvalOptions {
    std::vector<double> target_fars{0.001, 0.01, 0.1};
    // Blank a square of this fraction of the image area in every video
    // frame, at a position fixed per video (0 disables).
    double occlusion_area = 0.0;
    std::uint64_t seed = 0;
};

/// S2V: gallery stills vs probe videos. V2S: the same pairs with the roles
/// swapped. id: gallery videos vs probe videos. v2v: every pair of videos.
/// Stills count as single-frame videos. Records from the "train" split are
/// ignored.
EvalReport run_protocol(Protocol protocol, const Manifest& manifest, const Model& model,
                        const EvalOptions& options = {});

std::string report_json(const EvalReport& report);
std::string roc_tsv(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& json_path);

}  // namespace tbe
