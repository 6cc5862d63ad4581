#ifndef RISKRANK_LOSSES_HPP
#define RISKRANK_LOSSES_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "riskrank/rng.hpp"

namespace riskrank::losses {

enum class LossKind { Triplet, Pairwise, CrossEntropy };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct ScalarLossResult {
    double loss = 0.0;
    std::vector<double> d_scores;
};

struct CrossEntropyResult {
    double loss = 0.0;
    Eigen::MatrixXd d_logits; // n x 3, softmax minus one-hot
    Eigen::MatrixXd probs;    // n x 3
};

// Softmax negative log-likelihood summed over the batch.
CrossEntropyResult cross_entropy(const Eigen::MatrixXd& class_logits, const std::vector<int>& labels);

// Expected value of the three-class distribution: sum_i i * P(y = i).
double expected_risk_score(const Eigen::Vector3d& class_probabilities);

// Binary cross-entropy over every label-distinct unordered pair, with
// P(l ranked above j) = sigmoid(score_l - score_j) evaluated overflow-safe.
ScalarLossResult pairwise_loss(const std::vector<double>& scores, const std::vector<int>& labels);

struct Triplet {
    int anchor = 0;
    int positive = 0;
    int negative = 0;
};

// (1/|T|) * sum [max(0, S_A - S_P + margin) + max(0, S_N - S_A + margin)];
// zero subgradient at exact hinge corners.
ScalarLossResult triplet_loss(const std::vector<double>& scores,
                              const std::vector<Triplet>& triplets, double margin = 0.1);

// Anchors come from label 1, positives from label 2, negatives from label 0.
// Every batch member appears in at least one triplet; roles shorter than the
// triplet count are refilled uniformly at random from the seeded stream.
std::vector<Triplet> sample_triplets(const std::vector<int>& labels, Rng& rng);

} // namespace riskrank::losses

#endif
