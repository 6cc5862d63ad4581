#ifndef RISKRANK_TRAINER_HPP
#define RISKRANK_TRAINER_HPP

#include <cstdint>
#include <vector>

#include "riskrank/config.hpp"
#include "riskrank/corpus.hpp"
#include "riskrank/losses.hpp"
#include "riskrank/netcore.hpp"
#include "riskrank/rng.hpp"

namespace riskrank::trainer {

struct TrainOptions {
    netcore::ModelConfig model;
    losses::LossKind loss = losses::LossKind::Triplet;
    config::Aggregator aggregator = config::Aggregator::Hierarchical;
    double margin = 0.1;
    int epochs = 30;
    int batch_size = 8;
    double encoder_lr = 1e-5;
    double head_lr = 6e-5;
};

struct TrainResult {
    netcore::ModelState state;
    std::vector<double> epoch_losses; // mean batch loss per epoch
    std::vector<double> batch_losses; // every batch loss, training order
};

// Stratified batches: documents are shuffled and chunked, then any batch
// missing a class gets one member of its most frequent class swapped for a
// seeded random draw from the missing class, so every batch carries all
// three risk groups.
std::vector<std::vector<int>> stratified_batches(const std::vector<int>& labels, int batch_size,
                                                 Rng& rng);

// Trains one model from scratch; deterministic given (docs, labels, options,
// seed). Labels must contain every class.
TrainResult train_model(const std::vector<corpus::EncodedDocument>& docs,
                        const std::vector<int>& labels, const TrainOptions& options,
                        std::uint64_t seed);

// Scores every document with the trained model; the score kind matching the
// training loss (expected risk for cross-entropy, the risk logit otherwise).
std::vector<double> score_documents(const netcore::ModelState& state,
                                    const std::vector<corpus::EncodedDocument>& docs,
                                    config::Aggregator aggregator, netcore::ScoreKind kind);

netcore::ScoreKind score_kind_for(losses::LossKind loss);

} // namespace riskrank::trainer

#endif
