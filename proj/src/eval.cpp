#include "tbe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tbe/errors.hpp"
#include "tbe/image.hpp"
#include "tbe/rng.hpp"

namespace tbe {

VideoRep video_representation(const Model& model, std::vector<Frame> frames, std::string video_id,
                              std::string subject_id) {
    if (frames.empty()) {
        throw ParameterError("video representation needs at least one frame");
    }
    std::stable_sort(frames.begin(), frames.end(),
                     [](const Frame& a, const Frame& b) { return a.frame_idx < b.frame_idx; });
    NoGradGuard no_grad;
    VideoRep rep;
    rep.video_id = std::move(video_id);
    rep.subject_id = std::move(subject_id);
    rep.n_frames = frames.size();
    rep.vector.assign(model.config().embed_dim, 0.0);
    constexpr std::size_t kChunk = 32;
    for (std::size_t lo = 0; lo < frames.size(); lo += kChunk) {
        const std::size_t hi = std::min(frames.size(), lo + kChunk);
        std::vector<Tensor> images;
        for (std::size_t i = lo; i < hi; ++i) {
            images.push_back(frames[i].image);
            images.push_back(flip_horizontal(frames[i].image));
        }
        const Tensor e = model.forward_embed(stack_images(images));
        const auto d = e.data();
        const std::size_t dim = rep.vector.size();
        for (std::size_t r = 0; r < images.size(); ++r) {
            for (std::size_t k = 0; k < dim; ++k) rep.vector[k] += d[r * dim + k];
        }
    }
    for (double& v : rep.vector) v /= static_cast<double>(2 * frames.size());
    return rep;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("cosine of vectors with different lengths");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw SimilarityError("cosine similarity of a zero vector");
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

RocResult roc_and_vr(std::span<const double> scores, const std::vector<bool>& same,
                     std::span<const double> target_fars) {
    if (scores.size() != same.size()) {
        throw DimensionError("scores and labels differ in length");
    }
    const auto pos = static_cast<std::size_t>(std::count(same.begin(), same.end(), true));
    const std::size_t neg = same.size() - pos;
    if (pos == 0 || neg == 0) {
        throw MetricError("ROC needs at least one positive and one negative pair");
    }
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocResult r;
    r.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) {
            (same[order[i]] ? tp : fp) += 1;
            ++i;
        }
        r.points.push_back({t, static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
    }
    for (double target : target_fars) {
        double best = 0.0;
        for (const auto& p : r.points) {
            if (p.far <= target) best = std::max(best, p.vr);
        }
        r.vr_at_far[target] = best;
    }
    return r;
}

double rank1_identify(std::span<const VideoRep> gallery, std::span<const VideoRep> probes) {
    if (gallery.empty()) {
        throw ParameterError("rank-1 identification needs a non-empty gallery");
    }
    if (probes.empty()) {
        throw ParameterError("rank-1 identification needs at least one probe");
    }
    std::set<std::string> ids;
    for (const auto& g : gallery) {
        if (!ids.insert(g.video_id).second) {
            throw ParameterError("duplicate gallery id '" + g.video_id + "'");
        }
    }
    std::size_t correct = 0;
    for (const auto& p : probes) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            const double s = cosine_similarity(p.vector, gallery[g].vector);
            if (s > best_score) {
                best_score = s;
                best = g;
            }
        }
        if (gallery[best].subject_id == p.subject_id) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probes.size());
}

Protocol parse_protocol(const std::string& name) {
    if (name == "v2v") return Protocol::v2v;
    if (name == "s2v") return Protocol::s2v;
    if (name == "v2s") return Protocol::v2s;
    if (name == "id") return Protocol::id;
    throw ParameterError("unknown protocol '" + name + "' (v2v, s2v, v2s, id)");
}

const char* protocol_name(Protocol p) {
    switch (p) {
        case Protocol::v2v: return "V2V-verify";
        case Protocol::s2v: return "S2V-id";
        case Protocol::v2s: return "V2S-id";
        case Protocol::id: return "V2V-id";
    }
    return "?";
}

namespace {

struct Group {
    std::string id;
    std::string subject;
    std::string split;
    bool still = false;
    std::vector<const ManifestRecord*> records;
};

// Videos keyed by video_id, stills by path, in sorted key order.
std::vector<Group> group_records(const Manifest& manifest, bool need_split) {
    std::map<std::string, Group> groups;
    for (const auto& r : manifest.records) {
        if (r.split && *r.split == "train") continue;
        if (need_split && !r.split) {
            throw ManifestError("record " + r.path + " has no split; protocol needs gallery/probe splits");
        }
        const bool still = r.stream == Stream::still || !r.video_id;
        const std::string key = still ? "still:" + r.path : "video:" + *r.video_id;
        Group& g = groups[key];
        if (g.records.empty()) {
            g.id = still ? r.path : *r.video_id;
            g.subject = r.subject_id;
            g.split = r.split.value_or("");
            g.still = still;
        } else if (g.subject != r.subject_id) {
            throw ManifestError("video " + g.id + " mixes subjects");
        }
        g.records.push_back(&r);
    }
    std::vector<Group> out;
    for (auto& [k, g] : groups) out.push_back(std::move(g));
    return out;
}

VideoRep represent(const Model& model, const Manifest& manifest, const Group& g, const EvalOptions& opt) {
    std::vector<Frame> frames;
    std::optional<CropRect> rect;
    for (const ManifestRecord* r : g.records) {
        Tensor img = read_pnm(manifest.resolve(*r));
        if (opt.occlusion_area > 0.0 && !g.still) {
            if (!rect) {
                const std::size_t h = img.dim(1), w = img.dim(2);
                const double side = std::sqrt(opt.occlusion_area);
                const auto rh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(side * h)));
                const auto rw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(side * w)));
                auto rng = make_rng(opt.seed, "occlusion/" + g.id);
                std::uniform_int_distribution<std::size_t> py(0, h - rh), px(0, w - rw);
                const std::size_t y = py(rng);
                const std::size_t x = px(rng);
                rect = CropRect{x, y, rw, rh};
            }
            img = occlude(img, *rect, 0.0f);
        }
        frames.push_back({std::move(img), r->frame_idx.value_or(0)});
    }
    return video_representation(model, std::move(frames), g.id, g.subject);
}

void score_all(EvalReport& report, std::span<const VideoRep> a, std::span<const VideoRep> b, bool triangle) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = triangle ? i + 1 : 0; j < b.size(); ++j) {
            report.scores.push_back({a[i].video_id, b[j].video_id, cosine_similarity(a[i].vector, b[j].vector),
                                     a[i].subject_id == b[j].subject_id});
        }
    }
}

}  // namespace

EvalReport run_protocol(Protocol protocol, const Manifest& manifest, const Model& model,
                        const EvalOptions& options) {
    EvalReport report;
    report.protocol = protocol;
    const auto groups = group_records(manifest, protocol != Protocol::v2v);
    std::vector<VideoRep> gallery, probes;
    for (const auto& g : groups) {
        bool is_gallery = false, is_probe = false;
        switch (protocol) {
            case Protocol::v2v: is_gallery = !g.still; break;
            case Protocol::s2v:
            case Protocol::v2s:
                is_gallery = g.still && g.split == "gallery";
                is_probe = !g.still && g.split == "probe";
                break;
            case Protocol::id:
                is_gallery = !g.still && g.split == "gallery";
                is_probe = !g.still && g.split == "probe";
                break;
        }
        if (is_gallery) gallery.push_back(represent(model, manifest, g, options));
        if (is_probe) probes.push_back(represent(model, manifest, g, options));
    }
    if (protocol == Protocol::v2s) std::swap(gallery, probes);
    if (protocol == Protocol::v2v) {
        if (gallery.size() < 2) {
            throw ManifestError("V2V verification needs at least two videos");
        }
        score_all(report, gallery, gallery, true);
    } else {
        if (gallery.empty() || probes.empty()) {
            throw ManifestError(std::string(protocol_name(protocol)) + " needs gallery and probe records");
        }
        score_all(report, probes, gallery, false);
        report.rank1 = rank1_identify(gallery, probes);
    }
    std::vector<double> scores;
    std::vector<bool> same;
    for (const auto& s : report.scores) {
        scores.push_back(s.score);
        same.push_back(s.same);
    }
    report.roc = roc_and_vr(scores, same, options.target_fars);
    return report;
}

std::string report_json(const EvalReport& report) {
    using json = nlohmann::ordered_json;
    json j;
    j["protocol"] = protocol_name(report.protocol);
    j["n_pairs"] = report.scores.size();
    j["rank1"] = report.rank1 ? json(*report.rank1) : json(nullptr);
    json vr = json::object();
    for (const auto& [far, v] : report.roc.vr_at_far) {
        std::ostringstream key;
        key << far;
        vr[key.str()] = v;
    }
    j["vr_at_far"] = vr;
    json roc = json::array();
    for (const auto& p : report.roc.points) {
        roc.push_back({{"threshold", std::isfinite(p.threshold) ? json(p.threshold) : json(nullptr)},
                       {"far", p.far},
                       {"vr", p.vr}});
    }
    j["roc"] = roc;
    json scores = json::array();
    for (const auto& s : report.scores) {
        scores.push_back({{"a", s.a}, {"b", s.b}, {"score", s.score}, {"same", s.same}});
    }
    j["scores"] = scores;
    return j.dump(1) + "\n";
}

std::string roc_tsv(const EvalReport& report) {
    std::ostringstream os;
    os.precision(17);
    os << "far\tvr\n";
    for (const auto& p : report.roc.points) os << p.far << '\t' << p.vr << '\n';
    return os.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& json_path) {
    auto write = [](const std::filesystem::path& p, const std::string& text) {
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::binary);
        if (!out) throw IoError("cannot write " + p.string());
        out << text;
        if (!out) throw IoError("failed writing " + p.string());
    };
    write(json_path, report_json(report));
    auto tsv = json_path;
    tsv.replace_extension(".roc.tsv");
    write(tsv, roc_tsv(report));
}

}  // namespace tbe
