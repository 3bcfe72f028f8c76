#include <gtest/gtest.h>

#include <random>

#include "tbe/errors.hpp"
#include "tbe/mining.hpp"

using namespace tbe;

namespace {

Matrix random_unit(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < n; ++i) m.row(i).normalize();
    return m;
}

std::vector<int> six_by_four() {
    std::vector<int> labels;
    for (int s = 0; s < 6; ++s)
        for (int k = 0; k < 4; ++k) labels.push_back(s);
    return labels;
}

}  // namespace

TEST(Mining, UnitDistanceIdentity) {
    std::mt19937_64 rng(1);
    const Matrix f = random_unit(10, 7, rng);
    const Matrix d = unit_sq_distances(f);
    for (Eigen::Index i = 0; i < 10; ++i)
        for (Eigen::Index j = 0; j < 10; ++j) EXPECT_NEAR(d(i, j), (f.row(i) - f.row(j)).squaredNorm(), 1e-12);
}

TEST(Mining, PoolsMatchBruteForce) {
    std::mt19937_64 rng(2);
    const std::vector<int> labels = six_by_four();
    const Matrix f = random_unit(24, 3, rng);
    const Matrix d = unit_sq_distances(f);
    const double beta = 0.2;
    std::size_t nonempty = 0;
    for (std::size_t a = 0; a < 24; ++a)
        for (std::size_t p = 0; p < 24; ++p) {
            if (a == p || labels[a] != labels[p]) continue;
            std::vector<std::size_t> semi, hard;
            std::size_t hardest = 24;
            for (std::size_t n = 0; n < 24; ++n) {
                if (labels[n] == labels[a]) continue;
                const double an = (f.row(static_cast<Eigen::Index>(a)) - f.row(static_cast<Eigen::Index>(n))).squaredNorm();
                const double ap = (f.row(static_cast<Eigen::Index>(a)) - f.row(static_cast<Eigen::Index>(p))).squaredNorm();
                if (ap < an && an < ap + beta) semi.push_back(n);
                if (an < ap + beta) hard.push_back(n);
                if (hardest == 24 ||
                    an < (f.row(static_cast<Eigen::Index>(a)) - f.row(static_cast<Eigen::Index>(hardest))).squaredNorm())
                    hardest = n;
            }
            nonempty += !semi.empty();
            EXPECT_EQ(negative_pool(d, labels, a, p, beta, MiningStrategy::semi_hard), semi);
            EXPECT_EQ(negative_pool(d, labels, a, p, beta, MiningStrategy::hard), hard);
            EXPECT_EQ(negative_pool(d, labels, a, p, beta, MiningStrategy::hardest),
                      (std::vector<std::size_t>{hardest}));
        }
    EXPECT_GT(nonempty, 0u);
}

TEST(Mining, SingletonSemiHardPoolAlwaysChosen) {
    // d_ap = 0.02, the first negative sits at 0.1 (inside the window), the
    // second far outside it.
    Matrix f(4, 2);
    f << 1, 0, std::cos(0.1415), std::sin(0.1415), std::cos(0.3176), std::sin(0.3176), -1, 0;
    const std::vector<int> labels{0, 0, 1, 2};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const TripletSet t = mine_negatives(f, labels, 0.2, MiningStrategy::semi_hard, rng);
        ASSERT_EQ(t.triples.size(), 2u);
        EXPECT_EQ(t.triples[0], (Triplet{0, 1, 2}));
        EXPECT_EQ(t.triples[1], (Triplet{1, 0, 2}));
    }
}

TEST(Mining, TriplesAreValidAndOnePerPositivePair) {
    std::mt19937_64 rng(3);
    const std::vector<int> labels = six_by_four();
    const Matrix f = random_unit(24, 4, rng);
    const TripletSet t = mine_negatives(f, labels, 0.2, MiningStrategy::hardest, rng);
    EXPECT_EQ(t.triples.size(), 6u * 4 * 3);
    EXPECT_EQ(t.beta, 0.2);
    for (const Triplet& x : t.triples) {
        EXPECT_NE(x.a, x.p);
        EXPECT_EQ(labels[x.a], labels[x.p]);
        EXPECT_NE(labels[x.a], labels[x.n]);
    }
}

TEST(Mining, DeterministicUnderSeed) {
    std::mt19937_64 g(4);
    const std::vector<int> labels = six_by_four();
    const Matrix f = random_unit(24, 3, g);
    std::mt19937_64 r1(99), r2(99), r3(100);
    const auto a = mine_negatives(f, labels, 0.4, MiningStrategy::hard, r1).triples;
    const auto b = mine_negatives(f, labels, 0.4, MiningStrategy::hard, r2).triples;
    const auto c = mine_negatives(f, labels, 0.4, MiningStrategy::hard, r3).triples;
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

TEST(Mining, OneSubjectIsAnError) {
    std::mt19937_64 rng(5);
    const std::vector<int> labels{3, 3, 3};
    EXPECT_THROW(mine_negatives(random_unit(3, 2, rng), labels, 0.2, MiningStrategy::semi_hard, rng), MiningError);
    EXPECT_THROW(parse_mining("easiest"), ParameterError);
    EXPECT_EQ(parse_mining("semi_hard"), MiningStrategy::semi_hard);
}
