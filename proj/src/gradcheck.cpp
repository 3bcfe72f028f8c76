#include "tbe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "tbe/losses.hpp"
#include "tbe/mining.hpp"
#include "tbe/ops.hpp"
#include "tbe/rng.hpp"

namespace tbe {

namespace {

double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max(scale, std::abs(numeric[i]));
    }
    return diff / std::max(scale, 1e-8);
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (float& v : t.mutable_data()) v = static_cast<float>(u(rng));
    return t;
}

// Checks d(sum_i w_i y_i)/d input for each of `inputs`, where y = fn(inputs).
double check_tensor_op(std::vector<Tensor> inputs, const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                       std::mt19937_64& rng, double h) {
    for (auto& t : inputs) t.set_requires_grad(true);
    const Tensor y = fn(inputs);
    std::vector<float> w(y.numel());
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (float& v : w) v = static_cast<float>(u(rng));
    y.backward(w);
    auto probe = [&]() {
        NoGradGuard no_grad;
        const Tensor out = fn(inputs);
        double s = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(w[i]) * out.data()[i];
        return s;
    };
    double worst = 0.0;
    for (auto& t : inputs) {
        std::vector<double> analytic(t.grad().begin(), t.grad().end()), numeric(t.numel());
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const float x0 = t.data()[i];
            const float xp = static_cast<float>(x0 + h), xm = static_cast<float>(x0 - h);
            t.mutable_data()[i] = xp;
            const double fp = probe();
            t.mutable_data()[i] = xm;
            const double fm = probe();
            t.mutable_data()[i] = x0;
            numeric[i] = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
        }
        worst = std::max(worst, rel_error(analytic, numeric));
    }
    return worst;
}

double check_matrix_loss(Matrix x, const std::function<LossResult(const Matrix&)>& fn, double h) {
    const LossResult r = fn(x);
    std::vector<double> analytic(r.grad.data(), r.grad.data() + r.grad.size()), numeric(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double x0 = x.data()[i];
        x.data()[i] = x0 + h;
        const double fp = fn(x).loss;
        x.data()[i] = x0 - h;
        const double fm = fn(x).loss;
        x.data()[i] = x0;
        numeric[static_cast<std::size_t>(i)] = (fp - fm) / (2.0 * h);
    }
    return rel_error(analytic, numeric);
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

Matrix unit_rows(Matrix m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
    return m;
}

// Distinct values spaced well above the probe step so no max changes hands.
Tensor distinct_tensor(Shape shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::vector<float> v(t.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(0.05 * static_cast<double>(i) - 1.0);
    std::shuffle(v.begin(), v.end(), rng);
    std::copy(v.begin(), v.end(), t.mutable_data().begin());
    return t;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(std::size_t seeds, double tolerance, std::uint64_t base_seed) {
    using Inputs = std::vector<Tensor>;
    using Case = std::function<double(std::mt19937_64&)>;
    constexpr double kStep = 1e-3;
    std::vector<std::pair<std::string, Case>> cases;

    cases.push_back({"conv2d", [](std::mt19937_64& rng) {
                         const double a = check_tensor_op(
                             {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
                             [](const Inputs& in) { return conv2d(in[0], in[1], in[2], 1, Padding::same_zero); }, rng,
                             kStep);
                         const double b = check_tensor_op(
                             {random_tensor({2, 2, 6, 5}, rng), random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng)},
                             [](const Inputs& in) { return conv2d(in[0], in[1], in[2], 2, Padding::replicate); }, rng,
                             kStep);
                         return std::max(a, b);
                     }});
    cases.push_back({"maxpool", [](std::mt19937_64& rng) {
                         return check_tensor_op({distinct_tensor({1, 2, 4, 4}, rng)},
                                                [](const Inputs& in) { return maxpool(in[0], 2, 2); }, rng, kStep);
                     }});
    cases.push_back({"adaptive_maxpool", [](std::mt19937_64& rng) {
                         return check_tensor_op({distinct_tensor({1, 2, 5, 4}, rng)},
                                                [](const Inputs& in) { return adaptive_maxpool(in[0], 3, 3); }, rng,
                                                kStep);
                     }});
    cases.push_back({"relu", [](std::mt19937_64& rng) {
                         return check_tensor_op({distinct_tensor({2, 9}, rng)},
                                                [](const Inputs& in) { return relu(in[0]); }, rng, kStep);
                     }});
    cases.push_back({"dense", [](std::mt19937_64& rng) {
                         return check_tensor_op(
                             {random_tensor({2, 4}, rng), random_tensor({4, 3}, rng), random_tensor({3}, rng)},
                             [](const Inputs& in) { return dense(in[0], in[1], in[2]); }, rng, kStep);
                     }});
    cases.push_back({"crop_concat", [](std::mt19937_64& rng) {
                         return check_tensor_op(
                             {distinct_tensor({1, 2, 6, 6}, rng), random_tensor({1, 3, 3, 3}, rng)},
                             [](const Inputs& in) {
                                 const Tensor c = maxpool(crop_feature_map(in[0], CropRect{0, 2, 6, 4}), 2, 2);
                                 const Tensor parts[] = {c, crop_feature_map(in[1], CropRect{0, 1, 3, 2})};
                                 return concat(parts, 1);
                             },
                             rng, kStep);
                     }});
    cases.push_back({"l2_normalize", [](std::mt19937_64& rng) {
                         return check_tensor_op({random_tensor({1, 8}, rng, 0.2, 1.0)},
                                                [](const Inputs& in) { return l2_normalize(in[0]); }, rng, kStep);
                     }});
    cases.push_back({"softmax_ce", [](std::mt19937_64& rng) {
                         const std::vector<int> labels{0, 4, 2};
                         return check_matrix_loss(random_matrix(3, 5, rng),
                                                  [&](const Matrix& m) { return softmax_ce(m, labels); }, 1e-5);
                     }});
    cases.push_back({"triplet_loss", [](std::mt19937_64& rng) {
                         const std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2};
                         const Matrix x = unit_rows(random_matrix(8, 6, rng));
                         TripletSet set;
                         set.beta = 0.5;
                         for (std::size_t a = 0; a < labels.size(); ++a)
                             for (std::size_t p = 0; p < labels.size(); ++p)
                                 for (std::size_t n = 0; n < labels.size(); ++n)
                                     if (a != p && labels[a] == labels[p] && labels[n] != labels[a])
                                         set.triples.push_back({a, p, n});
                         return check_matrix_loss(x, [&](const Matrix& m) { return triplet_loss(m, labels, set); }, 1e-5);
                     }});
    cases.push_back({"mdr_tl", [](std::mt19937_64& rng) {
                         // Shared offset keeps the two means close, so both violate alpha.
                         const std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 1};
                         Matrix x = random_matrix(8, 6, rng) * 0.4;
                         x.rowwise() += Eigen::RowVectorXd::Ones(6);
                         x = unit_rows(x);
                         auto mine = make_rng(7, "gradcheck");
                         const TripletSet set = mine_negatives(x, labels, 0.2, MiningStrategy::hard, mine);
                         MdrOptions opt;
                         const double a = check_matrix_loss(
                             x, [&](const Matrix& m) { return static_cast<LossResult>(mdr_tl(m, labels, set, opt)); },
                             1e-5);
                         const std::vector<int> labels4{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
                         Matrix y = random_matrix(12, 6, rng) * 0.5;
                         y.rowwise() += Eigen::RowVectorXd::Ones(6);
                         y = unit_rows(y);
                         const TripletSet set4 = mine_negatives(y, labels4, 0.2, MiningStrategy::hard, mine);
                         const double b = check_matrix_loss(
                             y, [&](const Matrix& m) { return static_cast<LossResult>(mdr_tl(m, labels4, set4, opt)); },
                             1e-5);
                         return std::max(a, b);
                     }});
    cases.push_back({"pairwise_contrastive", [](std::mt19937_64& rng) {
                         const Matrix x = unit_rows(random_matrix(6, 5, rng));
                         const std::vector<LabeledPair> pairs{{0, 1, true}, {2, 3, true}, {0, 2, false},
                                                              {1, 4, false}, {3, 5, false}, {4, 5, true}};
                         return check_matrix_loss(
                             x, [&](const Matrix& m) { return pairwise_contrastive(m, pairs, 3.0); }, 1e-5);
                     }});

    std::vector<GradcheckResult> out;
    for (const auto& [name, fn] : cases) {
        GradcheckResult r{name, 0.0, seeds, true};
        for (std::size_t s = 0; s < seeds; ++s) {
            auto rng = make_rng(base_seed, "gradcheck/" + name, {s});
            r.max_rel_error = std::max(r.max_rel_error, fn(rng));
        }
        r.pass = r.max_rel_error <= tolerance;
        out.push_back(r);
    }
    return out;
}

}  // namespace tbe
