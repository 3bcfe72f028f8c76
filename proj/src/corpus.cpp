#include "tbe/corpus.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "tbe/blur.hpp"
#include "tbe/errors.hpp"
#include "tbe/image.hpp"
#include "tbe/rng.hpp"

namespace tbe {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<Identity::Grating> gratings(std::mt19937_64& rng, int count) {
    std::vector<Identity::Grating> out;
    for (int i = 0; i < count; ++i) {
        const double f = uniform(rng, 0.18, 0.33);
        const double angle = uniform(rng, 0.0, std::numbers::pi);
        out.push_back({f * std::cos(angle), f * std::sin(angle), uniform(rng, 0.0, kTwoPi),
                       uniform(rng, 0.05, 0.09)});
    }
    return out;
}

double gauss(double d2, double sigma) { return std::exp(-d2 / (2.0 * sigma * sigma)); }

// Intensity of the canonical 64x64 face at (x, y).
double face_value(const Identity& id, double x, double y, double jitter) {
    const double cx = 31.5;
    const double bg = 0.2 + 0.05 * y / 64.0;
    const double e = std::pow((x - cx) / id.face_rx, 2) + std::pow((y - 34.0) / id.face_ry, 2);
    const double mask = 1.0 / (1.0 + std::exp(-(1.0 - e) * 8.0));

    double v = id.skin;
    for (const auto& b : id.blobs) {
        v += b.amp * gauss((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y), b.sigma);
    }
    for (double side : {-1.0, 1.0}) {
        const double ex = cx + side * id.eye_dx;
        const double dx = (x - ex) / (1.6 * id.eye_r), dy = (y - id.eye_y) / id.eye_r;
        v -= 0.3 * std::exp(-2.0 * (dx * dx + dy * dy));
        const double by = y - (id.eye_y - 6.0);
        if (std::abs(x - ex) < 5.0) v -= (0.1 + id.brow) * gauss(by * by, 1.2);
    }
    if (y > id.eye_y + 3.0 && y < id.eye_y + 3.0 + id.nose_len) {
        v -= 0.08 * gauss((x - cx) * (x - cx), 1.0);
    }
    {
        const double dx = (x - cx) / (id.mouth_w / 2.0), dy = (y - id.mouth_y) / id.mouth_h;
        v -= 0.25 * std::exp(-(dx * dx + dy * dy));
    }
    const double eye_window = gauss((y - id.eye_y) * (y - id.eye_y), 4.5);
    for (const auto& g : id.eye_texture) {
        v += eye_window * g.amp * std::cos(kTwoPi * (g.fx * x + g.fy * y) + g.phase + jitter);
    }
    const double mouth_window = gauss((y - id.mouth_y) * (y - id.mouth_y), 3.5) * gauss((x - cx) * (x - cx), 9.0);
    for (const auto& g : id.mouth_texture) {
        v += mouth_window * g.amp * std::cos(kTwoPi * (g.fx * x + g.fy * y) + g.phase + jitter);
    }
    return mask * v + (1.0 - mask) * bg;
}

std::string subject_name(std::size_t s) {
    std::ostringstream os;
    os << 's' << std::setw(4) << std::setfill('0') << s;
    return os.str();
}

}  // namespace

Identity make_identity(std::uint64_t seed, std::size_t subject) {
    auto rng = make_rng(seed, "corpus/identity", {subject});
    Identity id;
    id.skin = uniform(rng, 0.45, 0.65);
    id.face_rx = uniform(rng, 20.0, 24.0);
    id.face_ry = uniform(rng, 26.0, 30.0);
    id.eye_dx = uniform(rng, 9.0, 13.0);
    id.eye_y = uniform(rng, 22.0, 27.0);
    id.eye_r = uniform(rng, 2.5, 4.5);
    id.brow = uniform(rng, -0.05, 0.1);
    id.mouth_y = uniform(rng, 44.0, 50.0);
    id.mouth_w = uniform(rng, 8.0, 14.0);
    id.mouth_h = uniform(rng, 1.8, 3.2);
    id.nose_len = uniform(rng, 6.0, 10.0);
    for (int i = 0; i < 3; ++i) {
        id.blobs.push_back({uniform(rng, 18.0, 46.0), uniform(rng, 18.0, 52.0), uniform(rng, 5.0, 9.0),
                            uniform(rng, -0.12, 0.12)});
    }
    id.eye_texture = gratings(rng, 3);
    id.mouth_texture = gratings(rng, 3);
    return id;
}

Tensor render_face(const Identity& id, const Pose& pose, std::size_t size, double noise_sigma,
                   std::mt19937_64& rng) {
    Tensor img(Shape{1, size, size});
    auto px = img.mutable_data();
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    const double unit = 64.0 / static_cast<double>(size);
    const double cr = std::cos(pose.rotation), sr = std::sin(pose.rotation);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t col = 0; col < size; ++col) {
            // Inverse similarity: output pixel -> canonical face coordinates.
            const double dx = (static_cast<double>(col) - c - pose.shift_x) / pose.scale;
            const double dy = (static_cast<double>(r) - c - pose.shift_y) / pose.scale;
            const double x = (cr * dx + sr * dy) * unit + 31.5;
            const double y = (-sr * dx + cr * dy) * unit + 31.5;
            double v = face_value(id, x, y, pose.texture_jitter) * pose.gain + pose.offset;
            if (noise_sigma > 0.0) v += noise(rng);
            px[r * size + col] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return img;
}

Manifest generate_corpus(const CorpusOptions& options, const std::filesystem::path& out_dir,
                         std::uint64_t seed) {
    namespace fs = std::filesystem;
    if (options.n_subjects == 0) {
        throw ParameterError("n_subjects must be positive");
    }
    if (options.frames_per_video == 0 && options.videos > 0) {
        throw ParameterError("frames_per_video must be positive");
    }
    if (options.size < 16) {
        throw ParameterError("image size must be at least 16");
    }
    fs::create_directories(out_dir / "stills");
    fs::create_directories(out_dir / "videos");
    Manifest manifest;
    manifest.base_dir = out_dir;
    constexpr double kNoise = 0.03;

    for (std::size_t s = 0; s < options.n_subjects; ++s) {
        const Identity id = make_identity(seed, s);
        const std::string subject = subject_name(s);
        const std::size_t n_stills = options.train_stills + options.gallery_stills;
        for (std::size_t k = 0; k < n_stills; ++k) {
            auto rng = make_rng(seed, "corpus/still", {s, k});
            Pose pose{uniform(rng, -2.5, 2.5), uniform(rng, -2.5, 2.5), uniform(rng, 0.94, 1.06),
                      uniform(rng, -0.08, 0.08), uniform(rng, 0.85, 1.15), uniform(rng, -0.05, 0.05),
                      uniform(rng, -0.6, 0.6)};
            const Tensor img = render_face(id, pose, options.size, kNoise, rng);
            const std::string rel = "stills/" + subject + "_" + std::to_string(k) + ".pgm";
            write_pnm(out_dir / rel, img);
            ManifestRecord rec;
            rec.path = rel;
            rec.subject_id = subject;
            rec.stream = Stream::still;
            rec.split = k < options.train_stills ? "train" : "gallery";
            manifest.records.push_back(std::move(rec));
        }
        for (std::size_t v = 0; v < options.videos; ++v) {
            auto vrng = make_rng(seed, "corpus/video", {s, v});
            const Pose base{uniform(vrng, -2.5, 2.5), uniform(vrng, -2.5, 2.5), uniform(vrng, 0.95, 1.05),
                            uniform(vrng, -0.08, 0.08), uniform(vrng, 0.85, 1.15), uniform(vrng, -0.05, 0.05),
                            uniform(vrng, -0.6, 0.6)};
            std::optional<BlurSpec> blur;
            if (options.blur_videos) {
                auto brng = make_rng(seed, "corpus/video-blur", {s, v});
                blur = sample_blur_spec(brng);
            }
            const std::string video = subject + "_v" + std::to_string(v);
            for (std::size_t f = 0; f < options.frames_per_video; ++f) {
                auto rng = make_rng(seed, "corpus/frame", {s, v, f});
                Pose pose = base;
                pose.shift_x += uniform(rng, -0.7, 0.7);
                pose.shift_y += uniform(rng, -0.7, 0.7);
                pose.rotation += uniform(rng, -0.02, 0.02);
                pose.texture_jitter += uniform(rng, -0.2, 0.2);
                Tensor img = render_face(id, pose, options.size, kNoise, rng);
                if (blur) img = apply_blur(img, kernel_for(*blur));
                std::ostringstream name;
                name << "videos/" << video << "_f" << std::setw(2) << std::setfill('0') << f << ".pgm";
                write_pnm(out_dir / name.str(), img);
                ManifestRecord rec;
                rec.path = name.str();
                rec.subject_id = subject;
                rec.video_id = video;
                rec.frame_idx = static_cast<int>(f);
                rec.stream = Stream::real_video;
                rec.split = (options.videos > 1 && v == 0) ? "gallery" : "probe";
                if (blur) rec.blur = blur->name();
                manifest.records.push_back(std::move(rec));
            }
        }
    }
    write_manifest(out_dir / "manifest.jsonl", manifest);
    return manifest;
}

}  // namespace tbe
