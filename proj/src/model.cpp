#include "tbe/model.hpp"

#include <cmath>
#include <set>

#include "tbe/errors.hpp"
#include "tbe/ops.hpp"
#include "tbe/rng.hpp"

namespace tbe {

Model::Model(ModelConfig config, std::size_t num_classes, std::uint64_t seed)
    : config_(std::move(config)), num_classes_(num_classes) {
    config_.validate();
    if (!config_.trainable()) {
        throw ConfigError("preset '" + config_.preset +
                          "' contains shape-only nodes and cannot be instantiated");
    }
    shapes_ = infer_shapes(config_);

    auto add_conv = [&](const std::string& prefix, const LayerSpec& l, std::size_t in_c) {
        const std::size_t fan_in = in_c * l.kernel * l.kernel;
        add_param(prefix + ".w", {l.out_channels, in_c, l.kernel, l.kernel}, fan_in, 2.0, seed);
        add_param(prefix + ".b", {l.out_channels}, 0, 0.0, seed);
    };
    auto add_dense = [&](const std::string& prefix, std::size_t din, std::size_t dout, double gain) {
        add_param(prefix + ".w", {din, dout}, din, gain, seed);
        add_param(prefix + ".b", {dout}, 0, 0.0, seed);
    };

    std::size_t c = config_.input_c;
    for (const auto& l : config_.trunk) {
        if (l.type == LayerType::conv) add_conv("trunk." + l.name, l, c);
        c = shapes_.at(l.name)[0];
    }
    for (const auto& b : config_.branches) {
        c = shapes_.at("branch." + b.name + ".input")[0];
        for (const auto& l : b.layers) {
            if (l.type == LayerType::conv) add_conv("branch." + b.name + "." + l.name, l, c);
            c = shapes_.at(l.name)[0];
        }
    }
    const std::size_t trunk_dim = shapes_.at("trunk_features")[0];
    const std::size_t embed = config_.embed_dim;
    add_dense("trunk_head", trunk_dim, embed, 1.0);
    add_dense("fusion", shapes_.at("fusion_input")[0], embed, 1.0);
    for (const auto& b : config_.branches) {
        add_dense("branch_head." + b.name, shapes_.at("branch." + b.name + ".features")[0],
                  config_.branch_head_dim, 1.0);
    }
    if (num_classes_ > 0) {
        add_dense("classifier.trunk", embed, num_classes_, 1.0);
        add_dense("classifier.fusion", embed, num_classes_, 1.0);
        for (const auto& b : config_.branches) {
            add_dense("classifier.branch." + b.name, config_.branch_head_dim, num_classes_, 1.0);
        }
    }
}

void Model::add_param(const std::string& name, Shape shape, std::size_t fan_in, double gain,
                      std::uint64_t seed) {
    Tensor t(std::move(shape));
    if (fan_in > 0) {
        // Each parameter draws from its own stream so adding a layer never
        // changes the initial values of the others.
        auto rng = make_rng(seed, "init/" + name);
        std::normal_distribution<double> normal(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
        for (float& v : t.mutable_data()) v = static_cast<float>(normal(rng));
    }
    t.set_requires_grad(true);
    params_.emplace(name, std::move(t));
}

const Tensor& Model::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
        throw ConfigError("model has no parameter '" + name + "'");
    }
    return it->second;
}

Tensor Model::run_layer(const std::string& prefix, const LayerSpec& layer, const Tensor& x) const {
    switch (layer.type) {
        case LayerType::conv:
            return relu(conv2d(x, param(prefix + ".w"), param(prefix + ".b"), layer.stride, config_.padding));
        case LayerType::maxpool:
            return maxpool(x, layer.kernel, layer.stride);
        case LayerType::adaptive_pool:
            return adaptive_maxpool(x, layer.out_size, layer.out_size);
        case LayerType::inception:
            break;
    }
    throw ConfigError("layer '" + layer.name + "' is shape-only");
}

Model::Features Model::features(const Tensor& batch, bool with_branches) const {
    if (batch.rank() != 4 || batch.dim(1) != config_.input_c || batch.dim(2) != config_.input_h ||
        batch.dim(3) != config_.input_w) {
        throw DimensionError("model expects [N," + std::to_string(config_.input_c) + "," +
                             std::to_string(config_.input_h) + "," + std::to_string(config_.input_w) +
                             "], got " + shape_string(batch.shape()));
    }
    std::map<std::string, Tensor> taps;
    std::set<std::string> wanted;
    if (with_branches) {
        for (const auto& b : config_.branches) wanted.insert(b.taps.begin(), b.taps.end());
    }

    Features out;
    // pixels arrive in [0,1]; centring them keeps the first ReLUs from saturating
    Tensor x = batch.clone();
    for (float& v : x.mutable_data()) v -= 0.5f;
    for (const auto& l : config_.trunk) {
        x = run_layer("trunk." + l.name, l, x);
        if (wanted.count(l.name)) taps[l.name] = x;
    }
    out.trunk = flatten(x);
    if (!with_branches) {
        return out;
    }

    for (const auto& b : config_.branches) {
        const auto rects = branch_tap_rects(config_, b, shapes_);
        const std::size_t last_h = shapes_.at(b.taps.back())[1];
        std::vector<Tensor> parts;
        for (std::size_t t = 0; t < b.taps.size(); ++t) {
            Tensor crop = crop_feature_map(taps.at(b.taps[t]), rects[t]);
            const std::size_t f = shapes_.at(b.taps[t])[1] / last_h;
            parts.push_back(f > 1 ? maxpool(crop, f, f) : crop);
        }
        Tensor y = parts.size() == 1 ? parts[0] : concat(parts, 1);
        for (const auto& l : b.layers) {
            y = run_layer("branch." + b.name + "." + l.name, l, y);
        }
        out.branches.push_back(flatten(y));
    }
    return out;
}

Tensor Model::fusion_input(const Features& f) const {
    if (f.branches.empty()) return f.trunk;
    std::vector<Tensor> parts{f.trunk};
    parts.insert(parts.end(), f.branches.begin(), f.branches.end());
    return concat(parts, 1);
}

Tensor Model::head(const std::string& prefix, const Tensor& x) const {
    return dense(x, param(prefix + ".w"), param(prefix + ".b"));
}

Tensor Model::forward_embed(const Tensor& batch) const {
    return head("fusion", fusion_input(features(batch)));
}

void Model::set_trainable(const std::string& prefix, bool on) {
    for (auto& [name, t] : params_) {
        if (name.compare(0, prefix.size(), prefix) == 0) {
            t.set_requires_grad(on);
            t.clear_grad();
        }
    }
}

void Model::warm_start_fusion() {
    const Tensor& th = param("trunk_head.w");
    Tensor& fw = params_.at("fusion.w");
    const std::size_t rows = th.dim(0), cols = th.dim(1);
    auto dst = fw.mutable_data();
    std::fill(dst.begin(), dst.end(), 0.0f);
    std::copy(th.data().begin(), th.data().begin() + static_cast<std::ptrdiff_t>(rows * cols), dst.begin());
    const auto tb = param("trunk_head.b").data();
    auto fb = params_.at("fusion.b").mutable_data();
    std::copy(tb.begin(), tb.end(), fb.begin());
}

void Model::warm_start_fusion_classifier() {
    for (const char* part : {".w", ".b"}) {
        const auto src = param(std::string("classifier.trunk") + part).data();
        auto dst = params_.at(std::string("classifier.fusion") + part).mutable_data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

NamedTensors Model::state() const {
    NamedTensors out;
    for (const auto& [name, t] : params_) out.emplace(name, t.detach());
    return out;
}

void Model::load_state(const NamedTensors& state) {
    for (const auto& [name, t] : params_) {
        auto it = state.find(name);
        if (it == state.end()) {
            throw IoError("checkpoint lacks parameter '" + name + "'");
        }
        if (it->second.shape() != t.shape()) {
            throw IoError("checkpoint parameter '" + name + "' has shape " +
                          shape_string(it->second.shape()) + ", model expects " + shape_string(t.shape()));
        }
    }
    for (auto& [name, t] : params_) {
        const auto src = state.at(name).data();
        std::copy(src.begin(), src.end(), t.mutable_data().begin());
    }
}

}  // namespace tbe
