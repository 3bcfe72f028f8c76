#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <vector>

#include "tbe/tensor.hpp"

namespace tbe {

/// Row-per-sample matrix used by the loss math. Losses are evaluated in
/// double on a copy of the embeddings; `as_loss` feeds the gradient back
/// into the float graph.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_matrix(const Tensor& t);

struct LossResult {
    double loss = 0.0;
    Matrix grad;                // d loss / d input, same shape as the input
    std::size_t violators = 0;  // N for triplet terms
    bool no_violators = false;
};

/// Wraps a precomputed loss as a differentiable scalar of `input`.
Tensor as_loss(const Tensor& input, const LossResult& result);

/// Mean cross-entropy with a stable log-sum-exp; gradient (softmax - onehot)/B.
LossResult softmax_ce(const Matrix& logits, std::span<const int> labels);

struct Triplet {
    std::size_t a = 0;
    std::size_t p = 0;
    std::size_t n = 0;
    bool operator==(const Triplet&) const = default;
};

struct TripletSet {
    std::vector<Triplet> triples;
    double beta = 0.2;
};

/// (1/2N) sum over violating triples of |fa-fp|^2 - |fa-fn|^2 + beta, where
/// N counts violators. Zero (with no_violators set) when nothing violates.
LossResult triplet_loss(const Matrix& emb, std::span<const int> labels, const TripletSet& set);

struct MeanReps {
    std::vector<int> subjects;               // distinct labels, ascending
    std::vector<std::vector<std::size_t>> members;
    Matrix mu;                               // raw means, one row per subject
    std::vector<double> norm;                // |mu_c|
    Matrix mu_hat;                           // unit means
    std::vector<std::size_t> nearest;        // index of nearest other mean (lowest index on ties)
    std::vector<double> nearest_dist2;       // |mu_hat_c - mu_hat_nearest|^2
};

/// Per-subject means of the rows of `emb`. Throws DegenerateMeanError when a
/// mean has norm below 1e-12. With one subject, nearest is left empty.
MeanReps mean_reps(const Matrix& emb, std::span<const int> labels);

struct MdrOptions {
    double alpha = 2.0;
    bool exact_jacobian = true;   // false: d mu_hat / d f ~ I / (N_c |mu_c|)
    bool literal_weights = false; // false: w counts both nearest relations
};

struct MdrResult : LossResult {
    double triplet_part = 0.0;
    double mean_part = 0.0;
    std::size_t mean_violators = 0;  // P
};

/// Triplet loss plus (1/2P) sum_c max(0, alpha - |mu_hat_c - mu_hat_n(c)|^2).
MdrResult mdr_tl(const Matrix& emb, std::span<const int> labels, const TripletSet& set,
                 const MdrOptions& options);

/// Only the mean-distance term and its gradient.
MdrResult mean_distance_term(const Matrix& emb, std::span<const int> labels, const MdrOptions& options);

struct LabeledPair {
    std::size_t i = 0;
    std::size_t j = 0;
    bool same = false;
};

/// Mean over pairs of d^2 (positive) or max(0, margin - d^2) (negative).
LossResult pairwise_contrastive(const Matrix& emb, std::span<const LabeledPair> pairs, double margin);

}  // namespace tbe
