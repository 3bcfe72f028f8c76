#include "tbe/costs.hpp"

#include <algorithm>

namespace tbe {

namespace {

double layer_mult_adds(const LayerSpec& l, const Shape& in, const Shape& out) {
    const double hw_in = static_cast<double>(in[1] * in[2]);
    const double hw_out = static_cast<double>(out[1] * out[2]);
    const double c = static_cast<double>(in[0]);
    switch (l.type) {
        case LayerType::conv: {
            const double k2 = static_cast<double>(l.kernel * l.kernel);
            const double k = static_cast<double>(l.out_channels);
            if (l.reduce > 0) {
                const double r = static_cast<double>(l.reduce);
                return hw_in * c * r + hw_out * k * r * k2;
            }
            return hw_out * k * c * k2;
        }
        case LayerType::inception: {
            const auto& w = l.widths;
            const double per_pixel = c * static_cast<double>(w[0] + w[1] + w[3] + w[5]) +
                                     9.0 * static_cast<double>(w[1] * w[2]) +
                                     25.0 * static_cast<double>(w[3] * w[4]);
            return hw_out * per_pixel;
        }
        case LayerType::maxpool:
        case LayerType::adaptive_pool:
            return 0.0;
    }
    return 0.0;
}

void account(VariantCost& cost, const LayerSpec& l, const Shape& in, const Shape& out) {
    cost.mult_adds += layer_mult_adds(l, in, out);
    cost.peak_activation_floats = std::max(cost.peak_activation_floats, shape_numel(in) + shape_numel(out));
}

// Runs `layers` from `in`, recording every output by name.
Shape run(VariantCost& cost, const std::vector<LayerSpec>& layers, Shape in, Padding pad,
          std::map<std::string, Shape>* outputs = nullptr) {
    for (const auto& l : layers) {
        Shape out;
        switch (l.type) {
            case LayerType::conv:
                out = {l.out_channels, conv_output_size(in[1], l.kernel, l.stride, pad),
                       conv_output_size(in[2], l.kernel, l.stride, pad)};
                break;
            case LayerType::maxpool:
                out = {in[0], conv_output_size(in[1], l.kernel, l.stride, Padding::valid),
                       conv_output_size(in[2], l.kernel, l.stride, Padding::valid)};
                break;
            case LayerType::adaptive_pool:
                out = {in[0], l.out_size, l.out_size};
                break;
            case LayerType::inception: {
                const auto& w = l.widths;
                out = {w[0] + w[2] + w[4] + w[5], in[1], in[2]};
                break;
            }
        }
        account(cost, l, in, out);
        if (outputs) (*outputs)[l.name] = out;
        in = std::move(out);
    }
    return in;
}

void add_dense(VariantCost& cost, std::size_t din, std::size_t dout) {
    cost.mult_adds += static_cast<double>(din) * static_cast<double>(dout);
    cost.peak_activation_floats = std::max(cost.peak_activation_floats, din + dout);
}

}  // namespace

CostReport count_costs(const ModelConfig& config) {
    const ShapeMap shapes = infer_shapes(config);
    const Shape input{config.input_c, config.input_h, config.input_w};
    CostReport report;

    VariantCost trunk;
    run(trunk, config.trunk, input, config.padding);
    report.trunk = trunk;
    add_dense(report.trunk, shapes.at("trunk_features")[0], config.embed_dim);

    report.full = trunk;
    report.no_sharing = trunk;
    for (const auto& b : config.branches) {
        run(report.full, b.layers, shapes.at("branch." + b.name + ".input"), config.padding);

        // Without sharing the branch computes its own low/middle features
        // from the input patch, up to its last tap.
        const CropRect patch = crop_rect(b.box, config.input_h, config.input_w);
        std::vector<LayerSpec> prefix;
        for (const auto& l : config.trunk) {
            prefix.push_back(l);
            if (l.name == b.taps.back()) break;
        }
        std::map<std::string, Shape> outs;
        run(report.no_sharing, prefix, Shape{config.input_c, patch.h, patch.w}, config.padding, &outs);
        const Shape& last = outs.at(b.taps.back());
        std::size_t channels = 0;
        for (const auto& t : b.taps) channels += outs.at(t)[0];
        run(report.no_sharing, b.layers, Shape{channels, last[1], last[2]}, config.padding);
    }
    add_dense(report.full, shapes.at("fusion_input")[0], config.embed_dim);
    add_dense(report.no_sharing, shapes.at("fusion_input")[0], config.embed_dim);
    return report;
}

}  // namespace tbe
