#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tbe/checkpoint.hpp"
#include "tbe/model_config.hpp"
#include "tbe/optim.hpp"
#include "tbe/tensor.hpp"

namespace tbe {

/// Trainable trunk-branch network built from a ModelConfig.
///
/// Parameter names:
///   trunk.<layer>.{w,b}            trunk convolutions (shared + high trunk)
///   branch.<b>.<layer>.{w,b}       branch convolutions
///   trunk_head.{w,b}               trunk features -> embed_dim (stage A)
///   branch_head.<b>.{w,b}          branch features -> branch_head_dim (stage B)
///   fusion.{w,b}                   all features -> embed_dim (final embedding)
///   classifier.trunk / classifier.fusion / classifier.branch.<b>
/// Classifiers exist only when num_classes > 0.
class Model {
  public:
    Model(ModelConfig config, std::size_t num_classes, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const ShapeMap& shapes() const { return shapes_; }
    std::size_t num_classes() const { return num_classes_; }

    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }
    const Tensor& param(const std::string& name) const;

    /// Flattened [N,D] trunk features and one [N,D_b] block per branch.
    struct Features {
        Tensor trunk;
        std::vector<Tensor> branches;
    };
    Features features(const Tensor& batch, bool with_branches = true) const;

    /// concat(trunk, branches...) for the fusion layer.
    Tensor fusion_input(const Features& f) const;

    /// Affine head `prefix.w`, `prefix.b` applied to [N,D].
    Tensor head(const std::string& prefix, const Tensor& x) const;

    /// Final un-normalised embedding [N, embed_dim] (no dropout).
    Tensor forward_embed(const Tensor& batch) const;

    /// Enables or disables gradients for every parameter starting with
    /// `prefix`.
    void set_trainable(const std::string& prefix, bool on);

    /// Copies trunk_head into the trunk rows of fusion and zeroes the
    /// branch rows, so the fused embedding starts equal to the trunk one.
    void warm_start_fusion();
    /// Copies classifier.trunk into classifier.fusion.
    void warm_start_fusion_classifier();

    NamedTensors state() const;
    /// Throws IoError if names or shapes differ from this model.
    void load_state(const NamedTensors& state);

  private:
    void add_param(const std::string& name, Shape shape, std::size_t fan_in, double gain,
                   std::uint64_t seed);
    Tensor run_layer(const std::string& prefix, const LayerSpec& layer, const Tensor& x) const;

    ModelConfig config_;
    ShapeMap shapes_;
    std::size_t num_classes_;
    ParamMap params_;
};

}  // namespace tbe
