#include "tbe/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tbe/errors.hpp"

namespace tbe {

namespace {

void expect_image(const Tensor& image) {
    if (image.rank() != 3) {
        throw DimensionError("images must be [C,H,W], got " + shape_string(image.shape()));
    }
}

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int ch = 0;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

std::size_t parse_dim(const std::string& tok, const std::filesystem::path& path) {
    try {
        std::size_t used = 0;
        const long v = std::stol(tok, &used);
        if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw IoError("bad header value '" + tok + "' in " + path.string());
    }
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open image " + path.string());
    }
    const std::string magic = next_token(in);
    std::size_t channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw IoError("unsupported image format '" + magic + "' in " + path.string());
    }
    const std::size_t w = parse_dim(next_token(in), path);
    const std::size_t h = parse_dim(next_token(in), path);
    const std::size_t maxval = parse_dim(next_token(in), path);
    if (maxval > 255) {
        throw IoError("only 8-bit images are supported: " + path.string());
    }
    std::vector<unsigned char> raw(w * h * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) {
        throw IoError("truncated pixel data in " + path.string());
    }
    Tensor image(Shape{channels, h, w});
    auto dst = image.mutable_data();
    const float inv = 1.0f / static_cast<float>(maxval);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                dst[(c * h + y) * w + x] = static_cast<float>(raw[(y * w + x) * channels + c]) * inv;
            }
        }
    }
    return image;
}

namespace {

unsigned char to_byte(float v) {
    const float clamped = std::clamp(v, 0.0f, 1.0f);
    return static_cast<unsigned char>(std::floor(clamped * 255.0f + 0.5f));
}

}  // namespace

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
    expect_image(image);
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (c != 1 && c != 3) {
        throw DimensionError("PNM output needs 1 or 3 channels");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write image " + path.string());
    }
    out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> raw(w * h * c);
    const auto src = image.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                raw[(y * w + x) * c + ch] = to_byte(src[(ch * h + y) * w + x]);
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) {
        throw IoError("failed writing image " + path.string());
    }
}

Tensor quantize8(const Tensor& image) {
    Tensor out(image.shape());
    auto dst = out.mutable_data();
    const auto src = image.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = static_cast<float>(to_byte(src[i])) * (1.0f / 255.0f);
    }
    return out;
}

Tensor flip_horizontal(const Tensor& image) {
    expect_image(image);
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    auto dst = out.mutable_data();
    const auto src = image.data();
    for (std::size_t row = 0; row < c * h; ++row) {
        for (std::size_t x = 0; x < w; ++x) {
            dst[row * w + x] = src[row * w + (w - 1 - x)];
        }
    }
    return out;
}

Tensor warp_similarity(const Tensor& image, double shift_x, double shift_y, double scale,
                       double rotation_rad) {
    expect_image(image);
    if (!(scale > 0.0)) {
        throw ParameterError("warp scale must be positive");
    }
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cs = std::cos(rotation_rad), sn = std::sin(rotation_rad);
    Tensor out(image.shape());
    auto dst = out.mutable_data();
    const auto src = image.data();
    auto at = [&](std::size_t ch, std::ptrdiff_t y, std::ptrdiff_t x) {
        y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
        x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
        return static_cast<double>(src[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)]);
    };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            // inverse map: undo shift, then rotation and scale about the centre
            const double dx = (static_cast<double>(x) - cx - shift_x) / scale;
            const double dy = (static_cast<double>(y) - cy - shift_y) / scale;
            const double sx = cx + cs * dx + sn * dy;
            const double sy = cy - sn * dx + cs * dy;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const double ax = sx - fx, ay = sy - fy;
            const auto ix = static_cast<std::ptrdiff_t>(fx), iy = static_cast<std::ptrdiff_t>(fy);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v = (1 - ay) * ((1 - ax) * at(ch, iy, ix) + ax * at(ch, iy, ix + 1)) +
                                 ay * ((1 - ax) * at(ch, iy + 1, ix) + ax * at(ch, iy + 1, ix + 1));
                dst[(ch * h + y) * w + x] = static_cast<float>(v);
            }
        }
    }
    return out;
}

Tensor occlude(const Tensor& image, const CropRect& rect, float fill) {
    expect_image(image);
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (rect.x + rect.w > w || rect.y + rect.h > h) {
        throw DimensionError("occlusion rectangle exceeds image");
    }
    Tensor out = image.clone();
    auto dst = out.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = rect.y; y < rect.y + rect.h; ++y) {
            std::fill_n(dst.data() + (ch * h + y) * w + rect.x, rect.w, fill);
        }
    }
    return out;
}

Tensor stack_images(std::span<const Tensor> images) {
    if (images.empty()) {
        throw DimensionError("cannot stack zero images");
    }
    const Shape& ref = images[0].shape();
    Shape shape{images.size()};
    shape.insert(shape.end(), ref.begin(), ref.end());
    Tensor out(shape);
    auto dst = out.mutable_data();
    std::size_t offset = 0;
    for (const Tensor& img : images) {
        if (img.shape() != ref) {
            throw DimensionError("stack_images shape mismatch");
        }
        std::copy(img.data().begin(), img.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += img.numel();
    }
    return out;
}

}  // namespace tbe
