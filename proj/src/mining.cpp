#include "tbe/mining.hpp"

#include <set>

#include "tbe/errors.hpp"

namespace tbe {

MiningStrategy parse_mining(const std::string& name) {
    if (name == "semi_hard") return MiningStrategy::semi_hard;
    if (name == "hard") return MiningStrategy::hard;
    if (name == "hardest") return MiningStrategy::hardest;
    throw ParameterError("unknown mining strategy '" + name + "' (semi_hard, hard, hardest)");
}

const char* mining_name(MiningStrategy s) {
    switch (s) {
        case MiningStrategy::semi_hard: return "semi_hard";
        case MiningStrategy::hard: return "hard";
        case MiningStrategy::hardest: return "hardest";
    }
    return "?";
}

Matrix unit_sq_distances(const Matrix& emb) {
    Matrix g = emb * emb.transpose();
    return (2.0 - 2.0 * g.array()).matrix();
}

std::vector<std::size_t> negative_pool(const Matrix& dist2, std::span<const int> labels, std::size_t a,
                                       std::size_t p, double beta, MiningStrategy strategy) {
    const double dap = dist2(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(p));
    std::vector<std::size_t> pool;
    bool have_best = false;
    double best = 0.0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] == labels[a]) continue;
        const double dan = dist2(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(n));
        switch (strategy) {
            case MiningStrategy::semi_hard:
                if (dap < dan && dan < dap + beta) pool.push_back(n);
                break;
            case MiningStrategy::hard:
                if (dan < dap + beta) pool.push_back(n);
                break;
            case MiningStrategy::hardest:
                if (!have_best || dan < best) {
                    best = dan;
                    pool.assign(1, n);
                    have_best = true;
                }
                break;
        }
    }
    return pool;
}

TripletSet mine_negatives(const Matrix& emb, std::span<const int> labels, double beta,
                          MiningStrategy strategy, std::mt19937_64& rng) {
    if (labels.size() != static_cast<std::size_t>(emb.rows())) {
        throw DimensionError("mine_negatives: label count does not match rows");
    }
    if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
        throw MiningError("negative mining needs at least two subjects in the batch");
    }
    const Matrix dist2 = unit_sq_distances(emb);
    TripletSet set;
    set.beta = beta;
    for (std::size_t a = 0; a < labels.size(); ++a) {
        for (std::size_t p = 0; p < labels.size(); ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            const auto pool = negative_pool(dist2, labels, a, p, beta, strategy);
            if (pool.empty()) continue;
            std::size_t n = pool[0];
            if (pool.size() > 1) {
                std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
                n = pool[pick(rng)];
            }
            set.triples.push_back({a, p, n});
        }
    }
    return set;
}

}  // namespace tbe
