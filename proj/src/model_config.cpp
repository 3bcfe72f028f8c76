#include "tbe/model_config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "tbe/errors.hpp"

namespace tbe {

const char* layer_type_name(LayerType type) {
    switch (type) {
        case LayerType::conv: return "conv";
        case LayerType::maxpool: return "maxpool";
        case LayerType::adaptive_pool: return "adaptive_pool";
        case LayerType::inception: return "inception";
    }
    return "?";
}

const char* stage_tag_name(StageTag tag) {
    switch (tag) {
        case StageTag::low: return "low";
        case StageTag::middle: return "middle";
        case StageTag::high: return "high";
    }
    return "?";
}

namespace {

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
    if (!node.IsMap()) {
        throw ConfigError(where + ": expected a mapping");
    }
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
T required(const YAML::Node& node, const std::string& key, const std::string& where) {
    if (!node[key]) {
        throw ConfigError(where + ": missing key '" + key + "'");
    }
    try {
        return node[key].as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(where + ": bad value for '" + key + "'");
    }
}

template <typename T>
T optional(const YAML::Node& node, const std::string& key, T fallback, const std::string& where) {
    return node[key] ? required<T>(node, key, where) : fallback;
}

StageTag parse_stage(const std::string& s, const std::string& where) {
    if (s == "low") return StageTag::low;
    if (s == "middle") return StageTag::middle;
    if (s == "high") return StageTag::high;
    throw ConfigError(where + ": stage must be low, middle or high, got '" + s + "'");
}

LayerSpec parse_layer(const YAML::Node& node, bool in_trunk, const std::string& where) {
    if (!node.IsMap()) {
        throw ConfigError(where + ": expected a mapping");
    }
    LayerSpec spec;
    spec.name = required<std::string>(node, "name", where);
    const std::string at = where + " '" + spec.name + "'";
    const auto type = required<std::string>(node, "type", at);
    std::set<std::string> keys{"name", "type"};
    if (in_trunk) {
        keys.insert("stage");
        spec.stage = parse_stage(required<std::string>(node, "stage", at), at);
    } else {
        spec.stage = StageTag::high;
    }
    if (type == "conv") {
        spec.type = LayerType::conv;
        keys.insert({"kernel", "stride", "out", "reduce"});
        spec.kernel = required<std::size_t>(node, "kernel", at);
        spec.stride = optional<std::size_t>(node, "stride", 1, at);
        spec.out_channels = required<std::size_t>(node, "out", at);
        spec.reduce = optional<std::size_t>(node, "reduce", 0, at);
    } else if (type == "maxpool") {
        spec.type = LayerType::maxpool;
        keys.insert({"window", "stride"});
        spec.kernel = required<std::size_t>(node, "window", at);
        spec.stride = optional<std::size_t>(node, "stride", spec.kernel, at);
    } else if (type == "adaptive_pool") {
        spec.type = LayerType::adaptive_pool;
        keys.insert("out_size");
        spec.out_size = required<std::size_t>(node, "out_size", at);
    } else if (type == "inception") {
        spec.type = LayerType::inception;
        keys.insert("widths");
        const auto w = required<std::vector<std::size_t>>(node, "widths", at);
        if (w.size() != 6) {
            throw ConfigError(at + ": inception widths need 6 entries");
        }
        std::copy(w.begin(), w.end(), spec.widths.begin());
    } else {
        throw ConfigError(at + ": unknown layer type '" + type + "'");
    }
    check_keys(node, keys, at);
    if ((spec.type == LayerType::conv || spec.type == LayerType::maxpool) &&
        (spec.kernel == 0 || spec.stride == 0)) {
        throw ConfigError(at + ": kernel and stride must be positive");
    }
    if (spec.type == LayerType::conv && spec.out_channels == 0) {
        throw ConfigError(at + ": out must be positive");
    }
    if (spec.type == LayerType::adaptive_pool && spec.out_size == 0) {
        throw ConfigError(at + ": out_size must be positive");
    }
    return spec;
}

Shape layer_output(const LayerSpec& layer, const Shape& in, Padding pad) {
    const std::size_t c = in[0], h = in[1], w = in[2];
    switch (layer.type) {
        case LayerType::conv:
            return {layer.out_channels, conv_output_size(h, layer.kernel, layer.stride, pad),
                    conv_output_size(w, layer.kernel, layer.stride, pad)};
        case LayerType::maxpool:
            return {c, conv_output_size(h, layer.kernel, layer.stride, Padding::valid),
                    conv_output_size(w, layer.kernel, layer.stride, Padding::valid)};
        case LayerType::adaptive_pool:
            return {c, layer.out_size, layer.out_size};
        case LayerType::inception: {
            const auto& v = layer.widths;
            return {v[0] + v[2] + v[4] + v[5], h, w};
        }
    }
    return in;
}

Shape checked_output(const LayerSpec& layer, const Shape& in, Padding pad) {
    try {
        return layer_output(layer, in, pad);
    } catch (const Error& e) {
        throw GraphError("layer '" + layer.name + "' cannot take input " + shape_string(in) + ": " +
                         e.what());
    }
}

}  // namespace

std::vector<CropRect> branch_tap_rects(const ModelConfig& config, const BranchSpec& branch,
                                       const ShapeMap& shapes) {
    (void)config;
    std::vector<CropRect> rects(branch.taps.size());
    const Shape& last = shapes.at(branch.taps.back());
    const CropRect base = crop_rect(branch.box, last[1], last[2]);
    for (std::size_t t = 0; t < branch.taps.size(); ++t) {
        const Shape& s = shapes.at(branch.taps[t]);
        const std::size_t f = s[1] / last[1];
        rects[t] = {base.x * f, base.y * f, base.w * f, base.h * f};
    }
    return rects;
}

ShapeMap infer_shapes(const ModelConfig& config) {
    ShapeMap shapes;
    Shape cur{config.input_c, config.input_h, config.input_w};
    if (config.input_c == 0 || config.input_h == 0 || config.input_w == 0) {
        throw GraphError("input size must be positive");
    }
    shapes["input"] = cur;
    for (const auto& layer : config.trunk) {
        cur = checked_output(layer, cur, config.padding);
        shapes[layer.name] = cur;
    }
    std::size_t fusion = shape_numel(cur);
    shapes["trunk_features"] = {fusion};
    for (const auto& branch : config.branches) {
        const std::string prefix = "branch." + branch.name;
        const Shape& last = shapes.at(branch.taps.back());
        std::size_t channels = 0;
        for (const auto& tap : branch.taps) {
            const Shape& s = shapes.at(tap);
            if (s[1] % last[1] != 0 || s[2] % last[2] != 0 || s[1] / last[1] != s[2] / last[2]) {
                throw GraphError("branch '" + branch.name + "': tap '" + tap + "' " + shape_string(s) +
                                 " is not an integer multiple of tap '" + branch.taps.back() + "' " +
                                 shape_string(last));
            }
            channels += s[0];
        }
        CropRect rect;
        try {
            rect = crop_rect(branch.box, last[1], last[2]);
        } catch (const Error& e) {
            throw GraphError("branch '" + branch.name + "': " + e.what());
        }
        Shape b{channels, rect.h, rect.w};
        shapes[prefix + ".input"] = b;
        for (const auto& layer : branch.layers) {
            b = checked_output(layer, b, config.padding);
            shapes[layer.name] = b;
        }
        shapes[prefix + ".features"] = {shape_numel(b)};
        fusion += shape_numel(b);
    }
    shapes["fusion_input"] = {fusion};
    shapes["embedding"] = {config.embed_dim};
    return shapes;
}

void ModelConfig::validate() const {
    if (trunk.empty()) {
        throw GraphError("trunk has no layers");
    }
    if (embed_dim == 0) {
        throw GraphError("embed_dim must be positive");
    }
    if (!(dropout >= 0.0f && dropout < 1.0f)) {
        throw GraphError("dropout must lie in [0, 1)");
    }
    std::set<std::string> names{"input"};
    std::map<std::string, std::size_t> trunk_index;
    StageTag prev = StageTag::low;
    for (std::size_t i = 0; i < trunk.size(); ++i) {
        const auto& l = trunk[i];
        if (!names.insert(l.name).second) {
            throw GraphError("duplicate layer name '" + l.name + "'");
        }
        if (l.stage < prev) {
            throw GraphError("layer '" + l.name + "' tagged " + stage_tag_name(l.stage) + " after a " +
                             stage_tag_name(prev) + " layer");
        }
        prev = l.stage;
        trunk_index[l.name] = i;
    }
    std::set<std::string> branch_names;
    for (const auto& b : branches) {
        if (!branch_names.insert(b.name).second) {
            throw GraphError("duplicate branch name '" + b.name + "'");
        }
        if (b.taps.empty()) {
            throw GraphError("branch '" + b.name + "' has no taps");
        }
        std::size_t last = 0;
        for (std::size_t t = 0; t < b.taps.size(); ++t) {
            auto it = trunk_index.find(b.taps[t]);
            if (it == trunk_index.end()) {
                throw GraphError("branch '" + b.name + "' taps unknown layer '" + b.taps[t] + "'");
            }
            if (trunk[it->second].stage == StageTag::high) {
                throw GraphError("branch '" + b.name + "' taps high-level layer '" + b.taps[t] +
                                 "'; only low and middle layers are shared");
            }
            if (t > 0 && it->second <= last) {
                throw GraphError("branch '" + b.name + "' taps must follow trunk order");
            }
            last = it->second;
        }
        if (b.layers.empty()) {
            throw GraphError("branch '" + b.name + "' has no layers");
        }
        for (const auto& l : b.layers) {
            if (!names.insert(l.name).second) {
                throw GraphError("duplicate layer name '" + l.name + "'");
            }
        }
    }
    (void)infer_shapes(*this);
}

bool ModelConfig::trainable() const {
    auto plain = [](const LayerSpec& l) { return l.type != LayerType::inception && l.reduce == 0; };
    for (const auto& l : trunk)
        if (!plain(l)) return false;
    for (const auto& b : branches)
        for (const auto& l : b.layers)
            if (!plain(l)) return false;
    return true;
}

ModelConfig parse_model_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("model config is not valid YAML: ") + e.what());
    }
    const std::string where = "model config";
    check_keys(root, {"preset", "input", "padding", "trunk", "branches", "embed_dim", "branch_head_dim",
                      "dropout"},
               where);
    ModelConfig cfg;
    cfg.preset = optional<std::string>(root, "preset", "custom", where);
    const auto input = root["input"];
    if (!input) {
        throw ConfigError(where + ": missing key 'input'");
    }
    check_keys(input, {"height", "width", "channels"}, "input");
    cfg.input_h = required<std::size_t>(input, "height", "input");
    cfg.input_w = required<std::size_t>(input, "width", "input");
    cfg.input_c = required<std::size_t>(input, "channels", "input");
    try {
        cfg.padding = parse_padding(optional<std::string>(root, "padding", "same_zero", where));
    } catch (const Error& e) {
        throw ConfigError(where + ": " + e.what());
    }
    cfg.embed_dim = required<std::size_t>(root, "embed_dim", where);
    cfg.branch_head_dim = optional<std::size_t>(root, "branch_head_dim", 256, where);
    cfg.dropout = optional<float>(root, "dropout", 0.0f, where);
    const auto trunk = root["trunk"];
    if (!trunk || !trunk.IsSequence()) {
        throw ConfigError(where + ": 'trunk' must be a list of layers");
    }
    for (const auto& l : trunk) {
        cfg.trunk.push_back(parse_layer(l, true, "trunk layer"));
    }
    if (const auto branches = root["branches"]) {
        if (!branches.IsSequence()) {
            throw ConfigError(where + ": 'branches' must be a list");
        }
        for (const auto& b : branches) {
            check_keys(b, {"name", "box", "taps", "layers"}, "branch");
            BranchSpec spec;
            spec.name = required<std::string>(b, "name", "branch");
            const std::string at = "branch '" + spec.name + "'";
            const auto box = required<std::vector<double>>(b, "box", at);
            if (box.size() != 4) {
                throw ConfigError(at + ": box needs [x, y, w, h]");
            }
            spec.box = {box[0], box[1], box[2], box[3]};
            spec.taps = required<std::vector<std::string>>(b, "taps", at);
            const auto layers = b["layers"];
            if (!layers || !layers.IsSequence()) {
                throw ConfigError(at + ": 'layers' must be a list");
            }
            for (const auto& l : layers) {
                spec.layers.push_back(parse_layer(l, false, at + " layer"));
            }
            cfg.branches.push_back(std::move(spec));
        }
    }
    cfg.validate();
    return cfg;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open model config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_model_config(ss.str());
}

std::filesystem::path preset_dir() {
    if (const char* env = std::getenv("TBE_PRESET_DIR")) {
        return env;
    }
    return TBE_PRESET_DIR;
}

ModelConfig load_preset(const std::string& name) {
    const auto path = preset_dir() / (name + ".yaml");
    if (!std::filesystem::exists(path)) {
        throw ConfigError("unknown preset '" + name + "' (looked for " + path.string() + ")");
    }
    return load_model_config(path);
}

ModelConfig trunk_only(ModelConfig config) {
    config.branches.clear();
    return config;
}

}  // namespace tbe
