#include "tbe/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "tbe/errors.hpp"

namespace tbe {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    if (!grad_enabled()) {
        return false;
    }
    for (const Tensor* t : ts) {
        if (t->defined() && t->requires_grad()) {
            return true;
        }
    }
    return false;
}

template <class Fn>
void record(Tensor& out, OpKind kind, std::vector<Tensor> inputs, Fn&& fn) {
    auto node = std::make_shared<OpNode>();
    node->kind = kind;
    node->inputs = std::move(inputs);
    node->backward = std::forward<Fn>(fn);
    out.attach_node(std::move(node));
}

void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (!t.defined() || t.rank() != rank) {
        throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) +
                             ", got " + shape_string(t.shape()));
    }
}

struct ConvGeom {
    std::size_t n, c, h, w, k, kh, kw, stride, pad, oh, ow;
    bool replicate;
    std::size_t patch() const { return c * kh * kw; }
    std::size_t out_pixels() const { return oh * ow; }
};

// cols[(ci*kh + i)*kw + j][oy*ow + ox] = x[ci][oy*s + i - p][ox*s + j - p]
void im2col(const float* x, const ConvGeom& g, double* cols) {
    const auto H = static_cast<std::ptrdiff_t>(g.h);
    const auto W = static_cast<std::ptrdiff_t>(g.w);
    const auto P = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        const float* plane = x + ci * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = cols + ((ci * g.kh + i) * g.kw + j) * g.out_pixels();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - P;
                    bool y_in = y >= 0 && y < H;
                    if (g.replicate) {
                        y = std::clamp<std::ptrdiff_t>(y, 0, H - 1);
                        y_in = true;
                    }
                    double* dst = row + oy * g.ow;
                    if (!y_in) {
                        std::fill(dst, dst + g.ow, 0.0);
                        continue;
                    }
                    const float* src = plane + y * W;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) - P;
                        if (g.replicate) {
                            dst[ox] = src[std::clamp<std::ptrdiff_t>(xx, 0, W - 1)];
                        } else {
                            dst[ox] = (xx >= 0 && xx < W) ? src[xx] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, const ConvGeom& g, double* dx) {
    const auto H = static_cast<std::ptrdiff_t>(g.h);
    const auto W = static_cast<std::ptrdiff_t>(g.w);
    const auto P = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        double* plane = dx + ci * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = cols + ((ci * g.kh + i) * g.kw + j) * g.out_pixels();
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - P;
                    if (g.replicate) {
                        y = std::clamp<std::ptrdiff_t>(y, 0, H - 1);
                    } else if (y < 0 || y >= H) {
                        continue;
                    }
                    const double* src = row + oy * g.ow;
                    double* dst = plane + y * W;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) - P;
                        if (g.replicate) {
                            dst[std::clamp<std::ptrdiff_t>(xx, 0, W - 1)] += src[ox];
                        } else if (xx >= 0 && xx < W) {
                            dst[xx] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

void accumulate(std::vector<float>& dst, const double* src, std::size_t n, std::size_t offset = 0) {
    for (std::size_t i = 0; i < n; ++i) {
        dst[offset + i] += static_cast<float>(src[i]);
    }
}

}  // namespace

Padding parse_padding(const std::string& name) {
    if (name == "valid") return Padding::valid;
    if (name == "same" || name == "same-zero" || name == "same_zero") return Padding::same_zero;
    if (name == "replicate") return Padding::replicate;
    throw ParameterError("unknown padding mode '" + name + "'");
}

const char* padding_name(Padding pad) {
    switch (pad) {
        case Padding::valid: return "valid";
        case Padding::same_zero: return "same";
        case Padding::replicate: return "replicate";
    }
    return "?";
}

std::size_t padding_amount(std::size_t kernel, Padding pad) {
    return pad == Padding::valid ? 0 : (kernel - 1) / 2;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, Padding pad) {
    if (stride == 0) {
        throw ParameterError("stride must be >= 1");
    }
    if (kernel == 0) {
        throw ParameterError("kernel size must be >= 1");
    }
    const std::size_t padded = in + 2 * padding_amount(kernel, pad);
    if (kernel > padded) {
        throw DimensionError("kernel " + std::to_string(kernel) + " larger than padded input " +
                             std::to_string(padded));
    }
    return (padded - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
              Padding pad) {
    expect_rank(input, 4, "conv2d input");
    expect_rank(weights, 4, "conv2d weights");
    expect_rank(bias, 1, "conv2d bias");
    if (stride == 0) {
        throw ParameterError("conv2d stride must be >= 1");
    }
    ConvGeom g{};
    g.n = input.dim(0);
    g.c = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.k = weights.dim(0);
    g.kh = weights.dim(2);
    g.kw = weights.dim(3);
    if (weights.dim(1) != g.c) {
        throw DimensionError("conv2d weights expect " + std::to_string(weights.dim(1)) +
                             " input channels, input has " + std::to_string(g.c));
    }
    if (bias.dim(0) != g.k) {
        throw DimensionError("conv2d bias length " + std::to_string(bias.dim(0)) +
                             " != output channels " + std::to_string(g.k));
    }
    g.stride = stride;
    g.pad = padding_amount(std::max(g.kh, g.kw), pad);
    if (g.kh != g.kw && pad != Padding::valid) {
        throw ParameterError("padded conv2d requires square kernels");
    }
    g.replicate = pad == Padding::replicate;
    g.oh = conv_output_size(g.h, g.kh, stride, pad);
    g.ow = conv_output_size(g.w, g.kw, stride, pad);

    Tensor out(Shape{g.n, g.k, g.oh, g.ow});
    const std::vector<double> wd = to_double(weights.data());
    const ConstMapMat wmat(wd.data(), static_cast<Eigen::Index>(g.k),
                           static_cast<Eigen::Index>(g.patch()));
    std::vector<double> cols(g.patch() * g.out_pixels());
    RowMat y(g.k, g.out_pixels());
    const auto x = input.data();
    auto o = out.mutable_data();
    const auto b = bias.data();
    for (std::size_t n = 0; n < g.n; ++n) {
        im2col(x.data() + n * g.c * g.h * g.w, g, cols.data());
        const ConstMapMat cmat(cols.data(), static_cast<Eigen::Index>(g.patch()),
                               static_cast<Eigen::Index>(g.out_pixels()));
        y.noalias() = wmat * cmat;
        float* dst = o.data() + n * g.k * g.out_pixels();
        for (std::size_t k = 0; k < g.k; ++k) {
            const double bk = b[k];
            for (std::size_t p = 0; p < g.out_pixels(); ++p) {
                dst[k * g.out_pixels() + p] = static_cast<float>(y(k, p) + bk);
            }
        }
    }

    if (any_requires_grad({&input, &weights, &bias})) {
        record(out, OpKind::conv2d, {input, weights, bias},
               [input, weights, bias, g](std::span<const float> gout) {
                   const std::vector<double> wd = to_double(weights.data());
                   const ConstMapMat wmat(wd.data(), static_cast<Eigen::Index>(g.k),
                                          static_cast<Eigen::Index>(g.patch()));
                   const bool need_x = input.requires_grad();
                   const bool need_w = weights.requires_grad();
                   const bool need_b = bias.requires_grad();
                   RowMat dw = RowMat::Zero(g.k, g.patch());
                   std::vector<double> db(g.k, 0.0);
                   std::vector<double> cols(g.patch() * g.out_pixels());
                   std::vector<double> dcols(g.patch() * g.out_pixels());
                   std::vector<double> dx(g.c * g.h * g.w);
                   RowMat gy(g.k, g.out_pixels());
                   const auto x = input.data();
                   for (std::size_t n = 0; n < g.n; ++n) {
                       const float* gsrc = gout.data() + n * g.k * g.out_pixels();
                       for (std::size_t k = 0; k < g.k; ++k) {
                           for (std::size_t p = 0; p < g.out_pixels(); ++p) {
                               gy(k, p) = gsrc[k * g.out_pixels() + p];
                           }
                       }
                       if (need_b) {
                           for (std::size_t k = 0; k < g.k; ++k) {
                               db[k] += gy.row(k).sum();
                           }
                       }
                       if (need_w) {
                           im2col(x.data() + n * g.c * g.h * g.w, g, cols.data());
                           const ConstMapMat cmat(cols.data(), static_cast<Eigen::Index>(g.patch()),
                                                  static_cast<Eigen::Index>(g.out_pixels()));
                           dw.noalias() += gy * cmat.transpose();
                       }
                       if (need_x) {
                           MapMat dmat(dcols.data(), static_cast<Eigen::Index>(g.patch()),
                                       static_cast<Eigen::Index>(g.out_pixels()));
                           dmat.noalias() = wmat.transpose() * gy;
                           std::fill(dx.begin(), dx.end(), 0.0);
                           col2im(dcols.data(), g, dx.data());
                           accumulate(input.grad_buffer(), dx.data(), dx.size(),
                                      n * g.c * g.h * g.w);
                       }
                   }
                   if (need_w) {
                       accumulate(weights.grad_buffer(), dw.data(), g.k * g.patch());
                   }
                   if (need_b) {
                       accumulate(bias.grad_buffer(), db.data(), g.k);
                   }
               });
    }
    return out;
}

namespace {

// Shared by fixed and adaptive pooling: each output cell owns a window and
// remembers the flat input index of its maximum.
Tensor pool_with_windows(const Tensor& input, std::size_t oh, std::size_t ow,
                         const std::vector<std::pair<std::size_t, std::size_t>>& rows,
                         const std::vector<std::pair<std::size_t, std::size_t>>& colsr) {
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor out(Shape{n, c, oh, ow});
    std::vector<std::size_t> argmax(out.numel());
    const auto x = input.data();
    auto o = out.mutable_data();
    std::size_t idx = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++idx) {
                float best = -std::numeric_limits<float>::infinity();
                std::size_t best_at = base + rows[oy].first * w + colsr[ox].first;
                for (std::size_t y = rows[oy].first; y < rows[oy].second; ++y) {
                    for (std::size_t xx = colsr[ox].first; xx < colsr[ox].second; ++xx) {
                        const float v = x[base + y * w + xx];
                        if (v > best) {
                            best = v;
                            best_at = base + y * w + xx;
                        }
                    }
                }
                o[idx] = best;
                argmax[idx] = best_at;
            }
        }
    }
    if (input.requires_grad()) {
        record(out, OpKind::maxpool, {input},
               [input, argmax = std::move(argmax)](std::span<const float> g) {
                   auto& dst = input.grad_buffer();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                       dst[argmax[i]] += g[i];
                   }
               });
    }
    return out;
}

}  // namespace

Tensor maxpool(const Tensor& input, std::size_t window, std::size_t stride) {
    expect_rank(input, 4, "maxpool input");
    if (window == 0 || stride == 0) {
        throw ParameterError("maxpool window and stride must be >= 1");
    }
    const std::size_t h = input.dim(2), w = input.dim(3);
    if (window > h || window > w) {
        throw DimensionError("maxpool window " + std::to_string(window) + " larger than input " +
                             shape_string(input.shape()));
    }
    const std::size_t oh = (h - window) / stride + 1;
    const std::size_t ow = (w - window) / stride + 1;
    std::vector<std::pair<std::size_t, std::size_t>> rows(oh), cols(ow);
    for (std::size_t i = 0; i < oh; ++i) rows[i] = {i * stride, i * stride + window};
    for (std::size_t i = 0; i < ow; ++i) cols[i] = {i * stride, i * stride + window};
    return pool_with_windows(input, oh, ow, rows, cols);
}

Tensor adaptive_maxpool(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    expect_rank(input, 4, "adaptive_maxpool input");
    if (out_h == 0 || out_w == 0) {
        throw ParameterError("adaptive_maxpool output must be >= 1");
    }
    const std::size_t h = input.dim(2), w = input.dim(3);
    auto bins = [](std::size_t in, std::size_t out) {
        std::vector<std::pair<std::size_t, std::size_t>> r(out);
        for (std::size_t i = 0; i < out; ++i) {
            r[i] = {i * in / out, ((i + 1) * in + out - 1) / out};
        }
        return r;
    };
    return pool_with_windows(input, out_h, out_w, bins(h, out_h), bins(w, out_w));
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    const auto x = input.data();
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        o[i] = x[i] > 0.0f ? x[i] : 0.0f;
    }
    if (input.requires_grad()) {
        record(out, OpKind::relu, {input}, [input](std::span<const float> g) {
            auto& dst = input.grad_buffer();
            const auto x = input.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > 0.0f) dst[i] += g[i];
            }
        });
    }
    return out;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    expect_rank(input, 2, "dense input");
    expect_rank(weights, 2, "dense weights");
    expect_rank(bias, 1, "dense bias");
    const std::size_t n = input.dim(0), din = input.dim(1), dout = weights.dim(1);
    if (weights.dim(0) != din) {
        throw DimensionError("dense inner dimension mismatch: input " + shape_string(input.shape()) +
                             " vs weights " + shape_string(weights.shape()));
    }
    if (bias.dim(0) != dout) {
        throw DimensionError("dense bias length mismatch");
    }
    Tensor out(Shape{n, dout});
    const auto x = input.data();
    const auto wv = weights.data();
    const auto b = bias.data();
    auto o = out.mutable_data();
    std::vector<double> acc(dout);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < dout; ++j) acc[j] = b[j];
        for (std::size_t i = 0; i < din; ++i) {
            const double xi = x[r * din + i];
            const float* wrow = wv.data() + i * dout;
            for (std::size_t j = 0; j < dout; ++j) acc[j] += xi * wrow[j];
        }
        for (std::size_t j = 0; j < dout; ++j) o[r * dout + j] = static_cast<float>(acc[j]);
    }
    if (any_requires_grad({&input, &weights, &bias})) {
        record(out, OpKind::dense, {input, weights, bias},
               [input, weights, bias, n, din, dout](std::span<const float> g) {
                   const auto x = input.data();
                   const auto wv = weights.data();
                   if (input.requires_grad()) {
                       auto& dx = input.grad_buffer();
                       for (std::size_t r = 0; r < n; ++r) {
                           for (std::size_t i = 0; i < din; ++i) {
                               double s = 0.0;
                               const float* wrow = wv.data() + i * dout;
                               const float* grow = g.data() + r * dout;
                               for (std::size_t j = 0; j < dout; ++j) s += double(wrow[j]) * grow[j];
                               dx[r * din + i] += static_cast<float>(s);
                           }
                       }
                   }
                   if (weights.requires_grad()) {
                       std::vector<double> dw(din * dout, 0.0);
                       for (std::size_t r = 0; r < n; ++r) {
                           const float* grow = g.data() + r * dout;
                           for (std::size_t i = 0; i < din; ++i) {
                               const double xi = x[r * din + i];
                               if (xi == 0.0) continue;
                               double* drow = dw.data() + i * dout;
                               for (std::size_t j = 0; j < dout; ++j) drow[j] += xi * grow[j];
                           }
                       }
                       accumulate(weights.grad_buffer(), dw.data(), dw.size());
                   }
                   if (bias.requires_grad()) {
                       std::vector<double> db(dout, 0.0);
                       for (std::size_t r = 0; r < n; ++r) {
                           for (std::size_t j = 0; j < dout; ++j) db[j] += g[r * dout + j];
                       }
                       accumulate(bias.grad_buffer(), db.data(), dout);
                   }
               });
    }
    return out;
}

namespace {

// outer = prod(shape[:axis]), inner = prod(shape[axis+1:])
std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, inner};
}

}  // namespace

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) {
        throw DimensionError("concat of zero tensors");
    }
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) {
        throw DimensionError("concat axis out of range");
    }
    Shape out_shape = ref;
    out_shape[axis] = 0;
    bool need_grad = false;
    for (const Tensor& p : parts) {
        if (p.rank() != ref.size()) {
            throw DimensionError("concat rank mismatch");
        }
        for (std::size_t i = 0; i < ref.size(); ++i) {
            if (i != axis && p.dim(i) != ref[i]) {
                throw DimensionError("concat shape mismatch: " + shape_string(p.shape()) + " vs " +
                                     shape_string(ref));
            }
        }
        out_shape[axis] += p.dim(axis);
        need_grad = need_grad || p.requires_grad();
    }
    const auto [outer, inner] = outer_inner(ref, axis);
    Tensor out(out_shape);
    auto o = out.mutable_data();
    const std::size_t out_row = out_shape[axis] * inner;
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const Tensor& p : parts) {
        offsets.push_back(offset);
        const std::size_t row = p.dim(axis) * inner;
        const auto src = p.data();
        for (std::size_t r = 0; r < outer; ++r) {
            std::copy_n(src.data() + r * row, row, o.data() + r * out_row + offset);
        }
        offset += row;
    }
    if (need_grad) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        record(out, OpKind::concat, inputs,
               [inputs, offsets, outer = outer, inner = inner, out_row, axis](std::span<const float> g) {
                   for (std::size_t k = 0; k < inputs.size(); ++k) {
                       if (!inputs[k].requires_grad()) continue;
                       auto& dst = inputs[k].grad_buffer();
                       const std::size_t row = inputs[k].dim(axis) * inner;
                       for (std::size_t r = 0; r < outer; ++r) {
                           const float* src = g.data() + r * out_row + offsets[k];
                           for (std::size_t i = 0; i < row; ++i) dst[r * row + i] += src[i];
                       }
                   }
               });
    }
    return out;
}

std::vector<Tensor> split(const Tensor& input, std::size_t axis, std::span<const std::size_t> sizes) {
    if (axis >= input.rank()) {
        throw DimensionError("split axis out of range");
    }
    std::size_t total = 0;
    for (std::size_t s : sizes) total += s;
    if (total != input.dim(axis)) {
        throw DimensionError("split sizes do not sum to dimension " + std::to_string(input.dim(axis)));
    }
    const auto [outer, inner] = outer_inner(input.shape(), axis);
    const std::size_t in_row = input.dim(axis) * inner;
    std::vector<Tensor> result;
    std::size_t offset = 0;
    for (std::size_t s : sizes) {
        Shape shape = input.shape();
        shape[axis] = s;
        Tensor part(shape);
        const std::size_t row = s * inner;
        auto dst = part.mutable_data();
        const auto src = input.data();
        for (std::size_t r = 0; r < outer; ++r) {
            std::copy_n(src.data() + r * in_row + offset, row, dst.data() + r * row);
        }
        if (input.requires_grad()) {
            record(part, OpKind::slice, {input},
                   [input, offset, row, in_row, outer = outer](std::span<const float> g) {
                       auto& d = input.grad_buffer();
                       for (std::size_t r = 0; r < outer; ++r) {
                           for (std::size_t i = 0; i < row; ++i) d[r * in_row + offset + i] += g[r * row + i];
                       }
                   });
        }
        result.push_back(std::move(part));
        offset += row;
    }
    return result;
}

CropRect crop_rect(const FracBox& box, std::size_t map_h, std::size_t map_w) {
    if (box.x < 0.0 || box.y < 0.0 || box.w <= 0.0 || box.h <= 0.0 || box.x + box.w > 1.0 + 1e-9 ||
        box.y + box.h > 1.0 + 1e-9) {
        throw ParameterError("crop box must lie within [0,1]^2 with positive size");
    }
    auto round_half_up = [](double v) { return static_cast<std::size_t>(std::floor(v + 0.5)); };
    CropRect r;
    r.x = round_half_up(box.x * static_cast<double>(map_w));
    r.y = round_half_up(box.y * static_cast<double>(map_h));
    if (r.x >= map_w || r.y >= map_h) {
        throw DegenerateCropError("crop box starts outside a " + std::to_string(map_h) + "x" +
                                  std::to_string(map_w) + " map");
    }
    r.w = std::max<std::size_t>(1, round_half_up(box.w * static_cast<double>(map_w)));
    r.h = std::max<std::size_t>(1, round_half_up(box.h * static_cast<double>(map_h)));
    r.w = std::min(r.w, map_w - r.x);
    r.h = std::min(r.h, map_h - r.y);
    return r;
}

Tensor crop_feature_map(const Tensor& input, const CropRect& rect) {
    expect_rank(input, 4, "crop input");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (rect.w == 0 || rect.h == 0) {
        throw DegenerateCropError("empty crop rectangle");
    }
    if (rect.x + rect.w > w || rect.y + rect.h > h) {
        throw DimensionError("crop rectangle exceeds feature map " + shape_string(input.shape()));
    }
    Tensor out(Shape{n, c, rect.h, rect.w});
    const auto x = input.data();
    auto o = out.mutable_data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t y = 0; y < rect.h; ++y) {
            std::copy_n(x.data() + plane * h * w + (rect.y + y) * w + rect.x, rect.w,
                        o.data() + (plane * rect.h + y) * rect.w);
        }
    }
    if (input.requires_grad()) {
        record(out, OpKind::crop, {input}, [input, rect, n, c, h, w](std::span<const float> g) {
            auto& dst = input.grad_buffer();
            for (std::size_t plane = 0; plane < n * c; ++plane) {
                for (std::size_t y = 0; y < rect.h; ++y) {
                    const float* src = g.data() + (plane * rect.h + y) * rect.w;
                    float* d = dst.data() + plane * h * w + (rect.y + y) * w + rect.x;
                    for (std::size_t xx = 0; xx < rect.w; ++xx) d[xx] += src[xx];
                }
            }
        });
    }
    return out;
}

Tensor crop_feature_map(const Tensor& input, const FracBox& box) {
    expect_rank(input, 4, "crop input");
    return crop_feature_map(input, crop_rect(box, input.dim(2), input.dim(3)));
}

Tensor l2_normalize(const Tensor& input) {
    expect_rank(input, 2, "l2_normalize input");
    const std::size_t n = input.dim(0), d = input.dim(1);
    Tensor out(input.shape());
    std::vector<double> norms(n);
    const auto x = input.data();
    auto o = out.mutable_data();
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += double(x[r * d + j]) * x[r * d + j];
        const double norm = std::sqrt(s);
        if (!(norm > 1e-12)) {
            throw NormalizationError("row " + std::to_string(r) + " has near-zero norm");
        }
        norms[r] = norm;
        for (std::size_t j = 0; j < d; ++j) o[r * d + j] = static_cast<float>(x[r * d + j] / norm);
    }
    if (input.requires_grad()) {
        record(out, OpKind::l2norm, {input}, [input, norms, n, d](std::span<const float> g) {
            // dx = (g - y (y.g)) / |x| with y recomputed in double
            auto& dst = input.grad_buffer();
            const auto x = input.data();
            for (std::size_t r = 0; r < n; ++r) {
                double yg = 0.0;
                for (std::size_t j = 0; j < d; ++j) yg += x[r * d + j] / norms[r] * g[r * d + j];
                for (std::size_t j = 0; j < d; ++j) {
                    const double y = x[r * d + j] / norms[r];
                    dst[r * d + j] += static_cast<float>((g[r * d + j] - y * yg) / norms[r]);
                }
            }
        });
    }
    return out;
}

Tensor mean_rows(const Tensor& input) {
    const std::size_t n = input.dim(0);
    const std::size_t row = input.numel() / n;
    Shape shape = input.shape();
    shape[0] = 1;
    Tensor out(shape);
    auto o = out.mutable_data();
    const auto x = input.data();
    for (std::size_t j = 0; j < row; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < n; ++r) s += x[r * row + j];
        o[j] = static_cast<float>(s / static_cast<double>(n));
    }
    if (input.requires_grad()) {
        record(out, OpKind::mean, {input}, [input, n, row](std::span<const float> g) {
            auto& dst = input.grad_buffer();
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t j = 0; j < row; ++j) dst[r * row + j] += g[j] / static_cast<float>(n);
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add shape mismatch: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    Tensor out(a.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.at(i) + b.at(i);
    if (any_requires_grad({&a, &b})) {
        record(out, OpKind::add, {a, b}, [a, b](std::span<const float> g) {
            for (const Tensor* t : {&a, &b}) {
                if (!t->requires_grad()) continue;
                auto& dst = t->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& input, float factor) {
    Tensor out(input.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = input.at(i) * factor;
    if (input.requires_grad()) {
        record(out, OpKind::scale, {input}, [input, factor](std::span<const float> g) {
            auto& dst = input.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor dropout(const Tensor& input, float p, std::mt19937_64& rng) {
    if (p < 0.0f || p >= 1.0f) {
        throw ParameterError("dropout probability must be in [0,1)");
    }
    if (p == 0.0f) {
        return input;
    }
    const float keep_scale = 1.0f / (1.0f - p);
    std::bernoulli_distribution keep(1.0 - p);
    std::vector<float> mask(input.numel());
    for (float& m : mask) m = keep(rng) ? keep_scale : 0.0f;
    Tensor out(input.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = input.at(i) * mask[i];
    if (input.requires_grad()) {
        record(out, OpKind::dropout, {input}, [input, mask = std::move(mask)](std::span<const float> g) {
            auto& dst = input.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * mask[i];
        });
    }
    return out;
}

Tensor flatten(const Tensor& input) {
    const std::size_t n = input.dim(0);
    return input.reshaped(Shape{n, input.numel() / n});
}

}  // namespace tbe
