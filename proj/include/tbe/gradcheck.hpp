#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tbe {

struct GradcheckResult {
    std::string op;
    double max_rel_error = 0.0;  // max over seeds of |analytic - numeric|_inf / |numeric|_inf
    std::size_t seeds = 0;
    bool pass = false;
};

/// Central finite-difference checks for every differentiable op and loss,
/// each over `seeds` random instances.
std::vector<GradcheckResult> run_gradcheck(std::size_t seeds = 5, double tolerance = 1e-3,
                                           std::uint64_t base_seed = 2024);

}  // namespace tbe
