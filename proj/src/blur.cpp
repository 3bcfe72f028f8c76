#include "tbe/blur.hpp"

#include <cmath>
#include <numbers>
#include <iomanip>
#include <sstream>

#include "tbe/errors.hpp"
#include "tbe/image.hpp"
#include "tbe/rng.hpp"

namespace tbe {

namespace {

Kernel normalised(std::size_t size, std::vector<double> w) {
    double s = 0.0;
    for (double v : w) s += v;
    for (double& v : w) v /= s;
    return Kernel{size, std::move(w)};
}

const char* theta_label(double theta) {
    constexpr double pi = std::numbers::pi;
    if (std::abs(theta) < 1e-9) return "0";
    if (std::abs(theta - pi / 4) < 1e-9) return "pi/4";
    if (std::abs(theta - pi / 2) < 1e-9) return "pi/2";
    if (std::abs(theta - 3 * pi / 4) < 1e-9) return "3pi/4";
    return nullptr;
}

}  // namespace

std::string BlurSpec::name() const {
    std::ostringstream os;
    auto motion = [&] {
        os << "motion(L=" << length << ",theta=";
        if (const char* t = theta_label(theta)) os << t; else os << theta;
        os << ')';
    };
    auto defocus = [&] { os << "defocus(sigma=" << sigma << ",R=" << support << ')'; };
    switch (kind) {
        case BlurKind::motion: motion(); break;
        case BlurKind::defocus: defocus(); break;
        case BlurKind::defocus_then_motion: defocus(); os << '+'; motion(); break;
    }
    return os.str();
}

double Kernel::at(std::ptrdiff_t di, std::ptrdiff_t dj) const {
    const auto half = static_cast<std::ptrdiff_t>(size / 2);
    if (std::abs(di) > half || std::abs(dj) > half) return 0.0;
    return weights[static_cast<std::size_t>((di + half) * static_cast<std::ptrdiff_t>(size) + dj + half)];
}

double Kernel::sum() const {
    double s = 0.0;
    for (double v : weights) s += v;
    return s;
}

Kernel make_motion_kernel(int length, double theta) {
    if (length < 3 || length % 2 == 0) {
        throw ParameterError("motion length must be odd and >= 3, got " + std::to_string(length));
    }
    if (!(theta >= 0.0 && theta < std::numbers::pi)) {
        throw ParameterError("motion angle must lie in [0, pi)");
    }
    const auto size = static_cast<std::size_t>(length);
    const auto half = static_cast<std::ptrdiff_t>(length / 2);
    const double radius = length / 2.0;
    const double c = std::cos(theta), s = std::sin(theta);
    std::vector<double> w(size * size, 0.0);
    auto mark = [&](std::ptrdiff_t i, std::ptrdiff_t j) {
        if (std::hypot(static_cast<double>(i), static_cast<double>(j)) <= radius &&
            std::abs(i) <= half && std::abs(j) <= half) {
            w[static_cast<std::size_t>((i + half) * length + (j + half))] = 1.0;
        }
    };
    // Step along the dominant axis and take the nearest lattice point on the
    // line i = -j tan(theta) (row i, column j).
    if (std::abs(c) >= std::abs(s)) {
        for (std::ptrdiff_t j = -half; j <= half; ++j) {
            const double i = -static_cast<double>(j) * s / c;
            mark(static_cast<std::ptrdiff_t>(std::lround(i)), j);
        }
    } else {
        for (std::ptrdiff_t i = -half; i <= half; ++i) {
            const double j = -static_cast<double>(i) * c / s;
            mark(i, static_cast<std::ptrdiff_t>(std::lround(j)));
        }
    }
    return normalised(size, std::move(w));
}

Kernel make_defocus_kernel(double sigma, int support) {
    if (!(sigma > 0.0)) {
        throw ParameterError("defocus sigma must be positive");
    }
    if (support < 1) {
        throw ParameterError("defocus support must be >= 1");
    }
    const std::ptrdiff_t half = support / 2;
    const auto size = static_cast<std::size_t>(2 * half + 1);
    std::vector<double> w(size * size);
    for (std::ptrdiff_t i = -half; i <= half; ++i) {
        for (std::ptrdiff_t j = -half; j <= half; ++j) {
            w[static_cast<std::size_t>((i + half) * static_cast<std::ptrdiff_t>(size) + j + half)] =
                std::exp(-static_cast<double>(i * i + j * j) / (2.0 * sigma * sigma));
        }
    }
    return normalised(size, std::move(w));
}

Kernel compose_kernels(const Kernel& first, const Kernel& second) {
    const std::size_t size = first.size + second.size - 1;
    std::vector<double> w(size * size, 0.0);
    for (std::size_t a = 0; a < first.size; ++a) {
        for (std::size_t b = 0; b < first.size; ++b) {
            const double fa = first.weights[a * first.size + b];
            if (fa == 0.0) continue;
            for (std::size_t c = 0; c < second.size; ++c) {
                for (std::size_t d = 0; d < second.size; ++d) {
                    w[(a + c) * size + (b + d)] += fa * second.weights[c * second.size + d];
                }
            }
        }
    }
    return normalised(size, std::move(w));
}

Kernel kernel_for(const BlurSpec& spec) {
    switch (spec.kind) {
        case BlurKind::motion: return make_motion_kernel(spec.length, spec.theta);
        case BlurKind::defocus: return make_defocus_kernel(spec.sigma, spec.support);
        case BlurKind::defocus_then_motion:
            return compose_kernels(make_defocus_kernel(spec.sigma, spec.support),
                                   make_motion_kernel(spec.length, spec.theta));
    }
    throw ParameterError("unknown blur kind");
}

const std::vector<BlurSpec>& all_blur_specs() {
    static const std::vector<BlurSpec> specs = [] {
        constexpr double pi = std::numbers::pi;
        const int lengths[] = {7, 9, 11};
        const double thetas[] = {0.0, pi / 4, pi / 2, 3 * pi / 4};
        const double sigmas[] = {1.5, 3.0};
        constexpr int support = 9;
        std::vector<BlurSpec> out;
        for (int L : lengths)
            for (double t : thetas) out.push_back({BlurKind::motion, L, t, 0.0, 0});
        for (double s : sigmas) out.push_back({BlurKind::defocus, 0, 0.0, s, support});
        for (double s : sigmas)
            for (int L : lengths)
                for (double t : thetas) out.push_back({BlurKind::defocus_then_motion, L, t, s, support});
        return out;
    }();
    return specs;
}

BlurSpec sample_blur_spec(std::mt19937_64& rng) {
    const auto& specs = all_blur_specs();
    std::uniform_int_distribution<std::size_t> pick(0, specs.size() - 1);
    return specs[pick(rng)];
}

Tensor apply_blur(const Tensor& image, const Kernel& kernel) {
    if (image.rank() != 3) {
        throw DimensionError("apply_blur expects [C,H,W], got " + shape_string(image.shape()));
    }
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (kernel.size >= h || kernel.size >= w) {
        throw DimensionError("blur kernel " + std::to_string(kernel.size) +
                             " is not smaller than image " + shape_string(image.shape()));
    }
    const auto half = static_cast<std::ptrdiff_t>(kernel.size / 2);
    const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
    Tensor out(image.shape());
    auto dst = out.mutable_data();
    const auto src = image.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* plane = src.data() + ch * h * w;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
            for (std::ptrdiff_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (std::ptrdiff_t i = -half; i <= half; ++i) {
                    const std::ptrdiff_t yy = std::clamp<std::ptrdiff_t>(y + i, 0, H - 1);
                    const double* krow = kernel.weights.data() + (i + half) * static_cast<std::ptrdiff_t>(kernel.size);
                    for (std::ptrdiff_t j = -half; j <= half; ++j) {
                        const double kw = krow[j + half];
                        if (kw == 0.0) continue;
                        const std::ptrdiff_t xx = std::clamp<std::ptrdiff_t>(x + j, 0, W - 1);
                        acc += kw * plane[yy * W + xx];
                    }
                }
                dst[ch * h * w + static_cast<std::size_t>(y * W + x)] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

TwoStreamResult build_two_stream(const Manifest& input, const std::filesystem::path& out_manifest,
                                 std::uint64_t seed) {
    namespace fs = std::filesystem;
    const fs::path out_dir = fs::absolute(out_manifest).parent_path();
    const fs::path image_dir = out_dir / "sim_video";
    fs::create_directories(image_dir);
    TwoStreamResult result;
    result.manifest.base_dir = out_dir;
    auto relative_to_out = [&](const fs::path& p) {
        return fs::relative(fs::absolute(p), out_dir).generic_string();
    };
    std::size_t still_index = 0;
    for (std::size_t i = 0; i < input.records.size(); ++i) {
        const ManifestRecord& rec = input.records[i];
        ManifestRecord copy = rec;
        copy.path = relative_to_out(input.resolve(rec));
        result.manifest.records.push_back(copy);
        if (rec.stream != Stream::still) {
            continue;
        }
        auto rng = make_rng(seed, "blur", {still_index++});
        const BlurSpec spec = sample_blur_spec(rng);
        try {
            const Tensor still = read_pnm(input.resolve(rec));
            const Tensor blurred = apply_blur(still, kernel_for(spec));
            std::ostringstream name;
            name << std::setw(6) << std::setfill('0') << i << '_'
                 << fs::path(rec.path).stem().string() << (still.dim(0) == 1 ? ".pgm" : ".ppm");
            const fs::path dst = image_dir / name.str();
            write_pnm(dst, blurred);
            ManifestRecord twin;
            twin.path = relative_to_out(dst);
            twin.subject_id = rec.subject_id;
            twin.stream = Stream::sim_video;
            twin.split = rec.split;
            twin.blur = spec.name();
            result.manifest.records.push_back(std::move(twin));
        } catch (const Error& e) {
            result.errors.push_back(rec.path + ": " + e.what());
        }
    }
    return result;
}

}  // namespace tbe
