#include "riskrank/losses.hpp"

#include <algorithm>
#include <cmath>

#include "riskrank/errors.hpp"

namespace riskrank::losses {

const char* to_string(LossKind kind) {
    switch (kind) {
        case LossKind::Triplet: return "triplet";
        case LossKind::Pairwise: return "pairwise";
        case LossKind::CrossEntropy: return "cross_entropy";
    }
    return "triplet";
}

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "triplet") return LossKind::Triplet;
    if (name == "pairwise") return LossKind::Pairwise;
    if (name == "cross_entropy") return LossKind::CrossEntropy;
    throw Error(ErrorKind::ConfigError, "unknown loss '" + name + "'");
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace

CrossEntropyResult cross_entropy(const Eigen::MatrixXd& class_logits, const std::vector<int>& labels) {
    const auto n = class_logits.rows();
    if (class_logits.cols() != 3 || n != static_cast<Eigen::Index>(labels.size())) {
        throw Error(ErrorKind::InputShapeError, "expected n x 3 logits aligned with labels");
    }
    CrossEntropyResult result;
    result.d_logits.resize(n, 3);
    result.probs.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y > 2) throw Error(ErrorKind::InputShapeError, "label out of range");
        const double mx = class_logits.row(i).maxCoeff();
        Eigen::RowVector3d e = (class_logits.row(i).array() - mx).exp();
        const double z = e.sum();
        result.probs.row(i) = e / z;
        result.loss += -(class_logits(i, y) - mx - std::log(z));
        result.d_logits.row(i) = result.probs.row(i);
        result.d_logits(i, y) -= 1.0;
    }
    return result;
}

double expected_risk_score(const Eigen::Vector3d& p) {
    if (p.minCoeff() < 0.0 || std::abs(p.sum() - 1.0) > 1e-6) {
        throw Error(ErrorKind::InputShapeError, "class probabilities must form a simplex");
    }
    return p(1) + 2.0 * p(2);
}

ScalarLossResult pairwise_loss(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    if (n != labels.size()) throw Error(ErrorKind::InputShapeError, "scores and labels differ in length");

    ScalarLossResult result;
    result.d_scores.assign(n, 0.0);
    bool any_pair = false;
    for (std::size_t l = 0; l < n; ++l) {
        for (std::size_t j = l + 1; j < n; ++j) {
            if (labels[l] == labels[j]) continue; // ties contribute no term
            any_pair = true;
            const double expected = labels[l] > labels[j] ? 1.0 : 0.0;
            const double delta = scores[l] - scores[j];
            // -[E log P + (1-E) log(1-P)] with P = sigmoid(delta).
            result.loss += expected > 0.5 ? softplus(-delta) : softplus(delta);
            const double grad = sigmoid(delta) - expected;
            result.d_scores[l] += grad;
            result.d_scores[j] -= grad;
        }
    }
    if (!any_pair) throw Error(ErrorKind::NoValidPairs, "no label-distinct pair in batch");
    return result;
}

ScalarLossResult triplet_loss(const std::vector<double>& scores, const std::vector<Triplet>& triplets,
                              double margin) {
    if (triplets.empty()) throw Error(ErrorKind::NoValidTriplets, "empty triplet set");
    ScalarLossResult result;
    result.d_scores.assign(scores.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(triplets.size());
    for (const Triplet& t : triplets) {
        const double sa = scores[static_cast<std::size_t>(t.anchor)];
        const double sp = scores[static_cast<std::size_t>(t.positive)];
        const double sn = scores[static_cast<std::size_t>(t.negative)];
        const double lower = sa - sp + margin; // anchor must sit below positive
        const double upper = sn - sa + margin; // and above negative
        if (lower > 0.0) {
            result.loss += inv * lower;
            result.d_scores[static_cast<std::size_t>(t.anchor)] += inv;
            result.d_scores[static_cast<std::size_t>(t.positive)] -= inv;
        }
        if (upper > 0.0) {
            result.loss += inv * upper;
            result.d_scores[static_cast<std::size_t>(t.negative)] += inv;
            result.d_scores[static_cast<std::size_t>(t.anchor)] -= inv;
        }
    }
    return result;
}

std::vector<Triplet> sample_triplets(const std::vector<int>& labels, Rng& rng) {
    std::vector<int> anchors, positives, negatives;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        switch (labels[i]) {
            case 0: negatives.push_back(static_cast<int>(i)); break;
            case 1: anchors.push_back(static_cast<int>(i)); break;
            case 2: positives.push_back(static_cast<int>(i)); break;
            default: throw Error(ErrorKind::InputShapeError, "label out of range");
        }
    }
    if (anchors.empty() || positives.empty() || negatives.empty()) {
        throw Error(ErrorKind::MissingRiskGroup, "batch lacks at least one risk group");
    }

    const std::size_t count = std::max({anchors.size(), positives.size(), negatives.size()});
    auto fill_role = [&rng, count](std::vector<int> role) {
        rng.shuffle(role);
        const std::size_t base = role.size();
        while (role.size() < count) role.push_back(role[rng.uniform_index(base)]);
        return role;
    };
    const std::vector<int> a = fill_role(anchors);
    const std::vector<int> p = fill_role(positives);
    const std::vector<int> n = fill_role(negatives);

    std::vector<Triplet> triplets(count);
    for (std::size_t i = 0; i < count; ++i) triplets[i] = {a[i], p[i], n[i]};
    return triplets;
}

} // namespace riskrank::losses
