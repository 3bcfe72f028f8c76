#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tbe/ops.hpp"
#include "tbe/tensor.hpp"

namespace tbe {

enum class LayerType { conv, maxpool, adaptive_pool, inception };

enum class StageTag { low, middle, high };

const char* layer_type_name(LayerType type);
const char* stage_tag_name(StageTag tag);

struct LayerSpec {
    std::string name;
    LayerType type = LayerType::conv;
    StageTag stage = StageTag::low;
    // conv
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t out_channels = 0;
    std::size_t reduce = 0;  // 1x1 reduction ahead of the conv (cost model only)
    // maxpool uses kernel/stride as window/stride; adaptive_pool uses out_size
    std::size_t out_size = 0;
    // inception: 1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool projection
    std::array<std::size_t, 6> widths{};
};

struct BranchSpec {
    std::string name;
    FracBox box;
    // Trunk layers whose outputs are cropped, earliest first. The crop
    // rectangle is computed on the last (coarsest) tap; earlier taps use the
    // same rectangle scaled up and are max pooled back down before concat.
    std::vector<std::string> taps;
    std::vector<LayerSpec> layers;
};

/// Declarative trunk-branch topology. Trunk layers run in order; each branch
/// reads crops of trunk tap outputs and runs its own layers. Trunk and
/// branch outputs are flattened, concatenated and mapped to embed_dim.
struct ModelConfig {
    std::string preset;
    std::size_t input_h = 0;
    std::size_t input_w = 0;
    std::size_t input_c = 0;
    Padding padding = Padding::same_zero;
    std::vector<LayerSpec> trunk;
    std::vector<BranchSpec> branches;
    std::size_t embed_dim = 0;
    std::size_t branch_head_dim = 256;
    float dropout = 0.0f;

    /// Throws GraphError for structural problems (stage order, unknown or
    /// high-level taps, duplicate names) and shape inference failures.
    void validate() const;
    bool trainable() const;  // false when the graph holds shape-only nodes
};

/// Output shapes [C,H,W] (or [D] for vectors) keyed by layer name. Extra
/// keys: "input", "trunk_features", "branch.<b>.input",
/// "branch.<b>.features", "fusion_input", "embedding".
using ShapeMap = std::map<std::string, Shape>;

ShapeMap infer_shapes(const ModelConfig& config);

/// Crop rectangle of `branch` on each of its taps, in tap order.
std::vector<CropRect> branch_tap_rects(const ModelConfig& config, const BranchSpec& branch,
                                       const ShapeMap& shapes);

ModelConfig parse_model_config(const std::string& yaml_text);
ModelConfig load_model_config(const std::filesystem::path& path);

/// Loads presets/<name>.yaml from the shipped preset directory.
ModelConfig load_preset(const std::string& name);
std::filesystem::path preset_dir();

/// Same config with every branch removed.
ModelConfig trunk_only(ModelConfig config);

}  // namespace tbe
