#include "tbe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tbe/errors.hpp"

namespace tbe {

Matrix to_matrix(const Tensor& t) {
    if (t.rank() != 2) {
        throw DimensionError("expected [N,D], got " + shape_string(t.shape()));
    }
    Matrix m(t.dim(0), t.dim(1));
    const auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) m.data()[i] = d[i];
    return m;
}

Tensor as_loss(const Tensor& input, const LossResult& result) {
    if (!std::isfinite(result.loss)) {
        throw NonFiniteError("loss is not finite");
    }
    Tensor out = Tensor::scalar(static_cast<float>(result.loss));
    if (input.requires_grad()) {
        auto node = std::make_shared<OpNode>();
        node->kind = OpKind::loss;
        node->inputs = {input};
        std::vector<double> g(result.grad.data(), result.grad.data() + result.grad.size());
        node->backward = [input, g = std::move(g)](std::span<const float> og) {
            auto& dst = input.grad_buffer();
            const double s = og[0];
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += static_cast<float>(s * g[i]);
        };
        out.attach_node(std::move(node));
    }
    return out;
}

LossResult softmax_ce(const Matrix& logits, std::span<const int> labels) {
    const auto b = static_cast<std::size_t>(logits.rows());
    const auto k = static_cast<std::size_t>(logits.cols());
    if (labels.size() != b) {
        throw DimensionError("softmax_ce: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(b) + " rows");
    }
    LossResult r;
    r.grad = Matrix::Zero(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw ParameterError("label " + std::to_string(labels[i]) + " out of range for " +
                                 std::to_string(k) + " classes");
        }
        const auto row = logits.row(static_cast<Eigen::Index>(i));
        const double m = row.maxCoeff();
        const double lse = m + std::log((row.array() - m).exp().sum());
        r.loss += lse - row(labels[i]);
        r.grad.row(static_cast<Eigen::Index>(i)) = (row.array() - lse).exp();
        r.grad(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
    }
    r.loss /= static_cast<double>(b);
    r.grad /= static_cast<double>(b);
    return r;
}

LossResult triplet_loss(const Matrix& emb, std::span<const int> labels, const TripletSet& set) {
    LossResult r;
    r.grad = Matrix::Zero(emb.rows(), emb.cols());
    const auto rows = static_cast<std::size_t>(emb.rows());
    std::vector<const Triplet*> active;
    for (const auto& t : set.triples) {
        if (t.a >= rows || t.p >= rows || t.n >= rows) {
            throw ParameterError("triplet index out of range");
        }
        if (labels[t.a] != labels[t.p] || labels[t.a] == labels[t.n] || t.a == t.p) {
            throw ParameterError("triplet labels inconsistent with batch");
        }
        const auto fa = emb.row(static_cast<Eigen::Index>(t.a));
        const double dap = (fa - emb.row(static_cast<Eigen::Index>(t.p))).squaredNorm();
        const double dan = (fa - emb.row(static_cast<Eigen::Index>(t.n))).squaredNorm();
        const double h = dap - dan + set.beta;
        if (h > 0.0) {
            r.loss += h;
            active.push_back(&t);
        }
    }
    r.violators = active.size();
    if (active.empty()) {
        r.no_violators = true;
        return r;
    }
    const double inv_n = 1.0 / static_cast<double>(active.size());
    r.loss *= 0.5 * inv_n;
    for (const Triplet* t : active) {
        const auto a = static_cast<Eigen::Index>(t->a), p = static_cast<Eigen::Index>(t->p),
                   n = static_cast<Eigen::Index>(t->n);
        const auto fa = emb.row(a), fp = emb.row(p), fn = emb.row(n);
        r.grad.row(a) += (fn - fp) * inv_n;
        r.grad.row(p) += (fp - fa) * inv_n;
        r.grad.row(n) += (fa - fn) * inv_n;
    }
    return r;
}

MeanReps mean_reps(const Matrix& emb, std::span<const int> labels) {
    if (labels.size() != static_cast<std::size_t>(emb.rows())) {
        throw DimensionError("mean_reps: label count does not match rows");
    }
    MeanReps m;
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
    const auto c = static_cast<Eigen::Index>(groups.size());
    m.mu = Matrix::Zero(c, emb.cols());
    m.mu_hat = Matrix::Zero(c, emb.cols());
    Eigen::Index k = 0;
    for (auto& [label, idx] : groups) {
        for (std::size_t i : idx) m.mu.row(k) += emb.row(static_cast<Eigen::Index>(i));
        m.mu.row(k) /= static_cast<double>(idx.size());
        const double n = m.mu.row(k).norm();
        if (n < 1e-12) {
            throw DegenerateMeanError("mean representation of subject " + std::to_string(label) +
                                      " has near-zero norm");
        }
        m.norm.push_back(n);
        m.mu_hat.row(k) = m.mu.row(k) / n;
        m.subjects.push_back(label);
        m.members.push_back(std::move(idx));
        ++k;
    }
    if (c >= 2) {
        for (Eigen::Index i = 0; i < c; ++i) {
            double best = 0.0;
            std::size_t arg = 0;
            bool first = true;
            for (Eigen::Index j = 0; j < c; ++j) {
                if (j == i) continue;
                const double d = (m.mu_hat.row(i) - m.mu_hat.row(j)).squaredNorm();
                if (first || d < best) {
                    best = d;
                    arg = static_cast<std::size_t>(j);
                    first = false;
                }
            }
            m.nearest.push_back(arg);
            m.nearest_dist2.push_back(best);
        }
    }
    return m;
}

MdrResult mean_distance_term(const Matrix& emb, std::span<const int> labels, const MdrOptions& options) {
    MdrResult r;
    r.grad = Matrix::Zero(emb.rows(), emb.cols());
    const MeanReps m = mean_reps(emb, labels);
    const std::size_t c = m.subjects.size();
    if (c < 2) return r;

    std::vector<bool> violates(c);
    for (std::size_t i = 0; i < c; ++i) {
        const double h = options.alpha - m.nearest_dist2[i];
        violates[i] = h > 0.0;
        if (violates[i]) {
            r.mean_part += h;
            ++r.mean_violators;
        }
    }
    if (r.mean_violators == 0) return r;
    const double p = static_cast<double>(r.mean_violators);
    r.mean_part /= 2.0 * p;
    r.loss = r.mean_part;

    // dL/d mu_hat_c = -(1/P) sum_j w_cj (mu_hat_c - mu_hat_j), where w_cj
    // counts the hinge terms that contain the pair (c, j).
    Matrix g_hat = Matrix::Zero(static_cast<Eigen::Index>(c), emb.cols());
    for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = 0; b < c; ++b) {
            if (a == b) continue;
            const int from_a = violates[a] && m.nearest[a] == b;
            const int from_b = violates[b] && m.nearest[b] == a;
            const int w = options.literal_weights ? (from_a || from_b) : from_a + from_b;
            if (w == 0) continue;
            g_hat.row(static_cast<Eigen::Index>(a)) -=
                (static_cast<double>(w) / p) *
                (m.mu_hat.row(static_cast<Eigen::Index>(a)) - m.mu_hat.row(static_cast<Eigen::Index>(b)));
        }
    }
    for (std::size_t a = 0; a < c; ++a) {
        const auto ai = static_cast<Eigen::Index>(a);
        Eigen::RowVectorXd g = g_hat.row(ai);
        if (options.exact_jacobian) {
            g -= g.dot(m.mu_hat.row(ai)) * m.mu_hat.row(ai);
        }
        g /= static_cast<double>(m.members[a].size()) * m.norm[a];
        for (std::size_t i : m.members[a]) r.grad.row(static_cast<Eigen::Index>(i)) += g;
    }
    return r;
}

MdrResult mdr_tl(const Matrix& emb, std::span<const int> labels, const TripletSet& set,
                 const MdrOptions& options) {
    const LossResult t = triplet_loss(emb, labels, set);
    MdrResult r = mean_distance_term(emb, labels, options);
    r.triplet_part = t.loss;
    r.violators = t.violators;
    r.no_violators = t.no_violators;
    r.loss = t.loss + r.mean_part;
    r.grad += t.grad;
    return r;
}

LossResult pairwise_contrastive(const Matrix& emb, std::span<const LabeledPair> pairs, double margin) {
    LossResult r;
    r.grad = Matrix::Zero(emb.rows(), emb.cols());
    if (pairs.empty()) {
        r.no_violators = true;
        return r;
    }
    const double inv = 1.0 / static_cast<double>(pairs.size());
    for (const auto& pr : pairs) {
        const auto i = static_cast<Eigen::Index>(pr.i), j = static_cast<Eigen::Index>(pr.j);
        if (pr.i >= static_cast<std::size_t>(emb.rows()) || pr.j >= static_cast<std::size_t>(emb.rows())) {
            throw ParameterError("pair index out of range");
        }
        const Eigen::RowVectorXd diff = emb.row(i) - emb.row(j);
        const double d2 = diff.squaredNorm();
        if (pr.same) {
            r.loss += d2 * inv;
            r.grad.row(i) += 2.0 * inv * diff;
            r.grad.row(j) -= 2.0 * inv * diff;
        } else if (margin - d2 > 0.0) {
            r.loss += (margin - d2) * inv;
            r.grad.row(i) -= 2.0 * inv * diff;
            r.grad.row(j) += 2.0 * inv * diff;
            ++r.violators;
        }
    }
    return r;
}

}  // namespace tbe
