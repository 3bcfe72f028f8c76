#pragma once

#include <cstdint>

#include "tbe/model_config.hpp"

namespace tbe {

struct VariantCost {
    double mult_adds = 0.0;
    std::size_t peak_activation_floats = 0;  // largest input + output of any single layer
};

struct CostReport {
    VariantCost trunk;       // trunk layers + trunk head
    VariantCost full;        // shared low/middle layers, branches crop tap outputs
    VariantCost no_sharing;  // each branch re-runs low/middle layers on its own patch

    double ratio() const { return full.mult_adds / trunk.mult_adds; }
    double no_sharing_ratio() const { return no_sharing.mult_adds / trunk.mult_adds; }
};

/// Static per-image cost model. Convolutions count H'W'K(C k^2) mult-adds
/// (plus the 1x1 reduction when declared), inception nodes count their six
/// convolutions, dense layers Din*Dout; pooling and cropping are free.
CostReport count_costs(const ModelConfig& config);

}  // namespace tbe
