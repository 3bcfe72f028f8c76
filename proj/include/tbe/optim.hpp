#pragma once

#include <map>
#include <string>
#include <vector>

#include "tbe/tensor.hpp"

namespace tbe {

using ParamMap = std::map<std::string, Tensor>;

/// SGD with classical momentum:
///   v <- momentum * v - lr * g
///   p <- p + v
/// Velocity buffers are keyed by parameter name and persist across steps.
/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping; max_norm <= 0 leaves gradients alone.
double clip_grad_norm(ParamMap& params, double max_norm);

class Sgd {
  public:
    Sgd(float lr, float momentum);

    float lr() const { return lr_; }
    void set_lr(float lr);
    float momentum() const { return momentum_; }

    /// Updates every parameter in `params` that has a gradient.
    void step(ParamMap& params);
    /// Single-tensor form used by tests and tools.
    void step(const std::string& name, std::span<float> param, std::span<const float> grad);

    const std::map<std::string, std::vector<float>>& velocity() const { return velocity_; }
    std::map<std::string, std::vector<float>>& velocity() { return velocity_; }

  private:
    float lr_;
    float momentum_;
    std::map<std::string, std::vector<float>> velocity_;
};

}  // namespace tbe
