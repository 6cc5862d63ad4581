#include "riskrank/trainer.hpp"

#include <algorithm>
#include <array>

#include "riskrank/errors.hpp"

namespace riskrank::trainer {

using config::Aggregator;
using losses::LossKind;

netcore::ScoreKind score_kind_for(LossKind loss) {
    return loss == LossKind::CrossEntropy ? netcore::ScoreKind::ExpectedRisk
                                          : netcore::ScoreKind::RiskLogit;
}

std::vector<std::vector<int>> stratified_batches(const std::vector<int>& labels, int batch_size,
                                                 Rng& rng) {
    if (batch_size < 3) throw Error(ErrorKind::InputShapeError, "batch size must be at least 3");
    std::array<std::vector<int>, 3> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y > 2) throw Error(ErrorKind::InputShapeError, "label out of range");
        members[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
    }
    for (const auto& m : members) {
        if (m.empty()) {
            throw Error(ErrorKind::MissingRiskGroup, "training set lacks one of the risk groups");
        }
    }

    std::vector<int> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    std::vector<std::vector<int>> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }

    for (auto& batch : batches) {
        // Grow short tail batches to three members so all classes can fit.
        while (batch.size() < 3) {
            const int extra = static_cast<int>(rng.uniform_index(labels.size()));
            if (std::find(batch.begin(), batch.end(), extra) == batch.end()) batch.push_back(extra);
        }
        for (int cls = 0; cls < 3; ++cls) {
            const bool present = std::any_of(batch.begin(), batch.end(),
                                             [&](int i) { return labels[static_cast<std::size_t>(i)] == cls; });
            if (present) continue;
            // Swap the last member of the batch's most frequent class for a
            // seeded draw from the missing one.
            std::array<int, 3> counts{};
            for (int i : batch) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
            const int majority = static_cast<int>(
                std::max_element(counts.begin(), counts.end()) - counts.begin());
            const auto& pool = members[static_cast<std::size_t>(cls)];
            const int replacement = pool[rng.uniform_index(pool.size())];
            for (std::size_t i = batch.size(); i-- > 0;) {
                if (labels[static_cast<std::size_t>(batch[i])] == majority) {
                    batch[i] = replacement;
                    break;
                }
            }
        }
    }
    return batches;
}

namespace {

struct BatchLoss {
    double loss = 0.0;
    std::vector<netcore::LogitGrad> grads;
};

BatchLoss batch_loss(const std::vector<double>& scores, const Eigen::MatrixXd& class_logits,
                     const std::vector<int>& labels, LossKind kind, double margin, Rng& rng) {
    BatchLoss out;
    out.grads.resize(scores.size());
    switch (kind) {
        case LossKind::Triplet: {
            const auto triplets = losses::sample_triplets(labels, rng);
            const auto result = losses::triplet_loss(scores, triplets, margin);
            out.loss = result.loss;
            for (std::size_t i = 0; i < scores.size(); ++i) out.grads[i].d_risk = result.d_scores[i];
            break;
        }
        case LossKind::Pairwise: {
            const auto result = losses::pairwise_loss(scores, labels);
            out.loss = result.loss;
            for (std::size_t i = 0; i < scores.size(); ++i) out.grads[i].d_risk = result.d_scores[i];
            break;
        }
        case LossKind::CrossEntropy: {
            const auto result = losses::cross_entropy(class_logits, labels);
            out.loss = result.loss;
            for (std::size_t i = 0; i < scores.size(); ++i) {
                out.grads[i].d_class = result.d_logits.row(static_cast<Eigen::Index>(i)).transpose();
            }
            break;
        }
    }
    return out;
}

} // namespace

TrainResult train_model(const std::vector<corpus::EncodedDocument>& docs,
                        const std::vector<int>& labels, const TrainOptions& options,
                        std::uint64_t seed) {
    if (docs.size() != labels.size()) {
        throw Error(ErrorKind::InputShapeError, "documents and labels must align");
    }
    if (docs.empty()) throw Error(ErrorKind::EmptyCorpus, "no training documents");

    netcore::ModelConfig model_cfg = options.model;
    model_cfg.seed = seed;
    TrainResult result;
    result.state = netcore::init_model(model_cfg);

    Rng rng(seed + 0x9E3779B97F4A7C15ull);
    const bool hierarchical = options.aggregator == Aggregator::Hierarchical;
    const netcore::PoolMode pool_mode =
        options.aggregator == Aggregator::MeanPool ? netcore::PoolMode::Mean : netcore::PoolMode::Max;

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        double epoch_loss = 0.0;
        const auto batches = stratified_batches(labels, options.batch_size, rng);
        for (const auto& batch : batches) {
            std::vector<int> batch_labels;
            batch_labels.reserve(batch.size());
            for (int i : batch) batch_labels.push_back(labels[static_cast<std::size_t>(i)]);

            std::vector<double> scores(batch.size());
            Eigen::MatrixXd class_logits(static_cast<Eigen::Index>(batch.size()), 3);

            if (hierarchical) {
                std::vector<netcore::ForwardTrace> traces;
                traces.reserve(batch.size());
                for (std::size_t b = 0; b < batch.size(); ++b) {
                    traces.push_back(netcore::forward(docs[static_cast<std::size_t>(batch[b])],
                                                      result.state, true));
                    scores[b] = traces.back().risk_logit;
                    class_logits.row(static_cast<Eigen::Index>(b)) = traces.back().class_logits.transpose();
                }
                const BatchLoss bl =
                    batch_loss(scores, class_logits, batch_labels, options.loss, options.margin, rng);
                epoch_loss += bl.loss;
                result.batch_losses.push_back(bl.loss);
                const auto grads = netcore::backward(traces, bl.grads, result.state);
                netcore::sgd_step(result.state, grads, options.encoder_lr, options.head_lr);
            } else {
                std::vector<netcore::PooledTrace> traces;
                traces.reserve(batch.size());
                for (std::size_t b = 0; b < batch.size(); ++b) {
                    traces.push_back(netcore::forward_pooled(docs[static_cast<std::size_t>(batch[b])],
                                                             result.state, pool_mode, true));
                    scores[b] = traces.back().risk_logit;
                    class_logits.row(static_cast<Eigen::Index>(b)) = traces.back().class_logits.transpose();
                }
                const BatchLoss bl =
                    batch_loss(scores, class_logits, batch_labels, options.loss, options.margin, rng);
                epoch_loss += bl.loss;
                result.batch_losses.push_back(bl.loss);
                const auto grads = netcore::backward_pooled(traces, bl.grads, result.state);
                netcore::sgd_step(result.state, grads, options.encoder_lr, options.head_lr);
            }
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches.size()));
    }
    return result;
}

std::vector<double> score_documents(const netcore::ModelState& state,
                                    const std::vector<corpus::EncodedDocument>& docs,
                                    Aggregator aggregator, netcore::ScoreKind kind) {
    std::vector<double> scores;
    scores.reserve(docs.size());
    for (const auto& doc : docs) {
        if (aggregator == Aggregator::Hierarchical) {
            scores.push_back(netcore::document_score(netcore::forward(doc, state), kind));
        } else {
            const auto mode = aggregator == Aggregator::MeanPool ? netcore::PoolMode::Mean
                                                                 : netcore::PoolMode::Max;
            scores.push_back(netcore::document_score(netcore::forward_pooled(doc, state, mode), kind));
        }
    }
    return scores;
}

} // namespace riskrank::trainer
