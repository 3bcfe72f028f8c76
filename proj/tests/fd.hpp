#pragma once

// Independent finite-difference oracle for the unit tests. Works on plain
// double vectors so it shares no code with the library's gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tbe/tensor.hpp"

namespace fd {

inline std::vector<double> central(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                   double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double max_rel(const std::vector<double>& a, const std::vector<double>& n) {
    double d = 0.0, s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d = std::max(d, std::abs(a[i] - n[i]));
        s = std::max(s, std::abs(n[i]));
    }
    return d / std::max(s, 1e-12);
}

inline tbe::Tensor random(tbe::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    tbe::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (float& v : t.mutable_data()) v = static_cast<float>(u(rng));
    return t;
}

inline std::vector<double> to_vec(std::span<const float> v) { return {v.begin(), v.end()}; }

inline tbe::Tensor from_vec(const tbe::Shape& shape, const std::vector<double>& v) {
    std::vector<float> f(v.begin(), v.end());
    return tbe::Tensor(shape, f);
}

}  // namespace fd
