#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "tbe/losses.hpp"

namespace tbe {

enum class MiningStrategy { semi_hard, hard, hardest };

MiningStrategy parse_mining(const std::string& name);
const char* mining_name(MiningStrategy s);

/// Squared distances between unit rows via |u-v|^2 = 2 - 2 u.v.
Matrix unit_sq_distances(const Matrix& emb);

/// Candidate negatives for the positive pair (a, p), ascending:
///   semi_hard: d_ap < d_an < d_ap + beta
///   hard:      d_an < d_ap + beta
///   hardest:   the single argmin of d_an (lowest index on ties)
std::vector<std::size_t> negative_pool(const Matrix& dist2, std::span<const int> labels, std::size_t a,
                                       std::size_t p, double beta, MiningStrategy strategy);

/// One triple per ordered positive pair (a != p). semi_hard and hard draw
/// uniformly from the pool and skip pairs whose pool is empty. Throws
/// MiningError unless the batch has at least two subjects.
TripletSet mine_negatives(const Matrix& emb, std::span<const int> labels, double beta,
                          MiningStrategy strategy, std::mt19937_64& rng);

}  // namespace tbe
