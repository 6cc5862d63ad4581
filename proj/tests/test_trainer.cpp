#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "riskrank/errors.hpp"
#include "riskrank/metrics.hpp"
#include "riskrank/trainer.hpp"
#include "support/synthetic.hpp"
#include "support/toy_model.hpp"

using namespace riskrank;
using namespace riskrank::trainer;

TEST_CASE("stratified batches always contain all three classes") {
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(0);
    for (int i = 0; i < 80; ++i) labels.push_back(1);
    for (int i = 0; i < 7; ++i) labels.push_back(2);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto batches = stratified_batches(labels, 8, rng);
        std::set<int> seen;
        for (const auto& batch : batches) {
            REQUIRE(batch.size() >= 3);
            std::set<int> classes;
            for (int i : batch) {
                classes.insert(labels[static_cast<std::size_t>(i)]);
                seen.insert(i);
            }
            CHECK(classes == std::set<int>{0, 1, 2});
        }
        // Coverage: nearly every document appears each epoch (a swapped-out
        // member can miss one).
        CHECK(seen.size() >= labels.size() - batches.size());
    }

    Rng rng2(4);
    CHECK_THROWS_AS(stratified_batches({0, 0, 1}, 8, rng2), Error);
}

TEST_CASE("stratified batches are deterministic given the seed") {
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
    Rng a(99), b(99);
    const auto ba = stratified_batches(labels, 5, a);
    const auto bb = stratified_batches(labels, 5, b);
    CHECK(ba == bb);
}

TEST_CASE("training is deterministic and learns the planted task") {
    const auto planted = synthetic::make_planted_corpus(45, 7);

    std::vector<std::string> texts;
    for (const auto& doc : planted.docs) texts.push_back(doc.text);
    const corpus::Vocabulary vocab = corpus::Vocabulary::build(texts, 1);

    std::vector<corpus::EncodedDocument> docs;
    for (const auto& raw : planted.docs) {
        docs.push_back(corpus::encode_document(raw.text, vocab, 12, 18));
    }

    TrainOptions opts;
    opts.model.vocab_size = static_cast<int>(vocab.size());
    opts.model.embed_dim = 16;
    opts.model.attn_dim = 16;
    opts.model.heads = 2;
    opts.model.max_sentences = 12;
    opts.model.max_tokens = 18;
    opts.model.ffn_width = 32;
    opts.loss = losses::LossKind::Triplet;
    opts.epochs = 8;
    opts.batch_size = 6;
    opts.encoder_lr = 0.05;
    opts.head_lr = 0.05;

    const TrainResult a = train_model(docs, planted.labels, opts, 42);
    const TrainResult b = train_model(docs, planted.labels, opts, 42);

    SUBCASE("bit-identical checkpoints for the same seed") {
        const auto ra = netcore::parameter_registry(a.state.params);
        const auto rb = netcore::parameter_registry(b.state.params);
        for (std::size_t t = 0; t < ra.size(); ++t) {
            for (Eigen::Index i = 0; i < ra[t].size(); ++i) {
                CHECK(ra[t].data[i] == rb[t].data[i]);
            }
        }
        CHECK(a.epoch_losses == b.epoch_losses);
    }

    SUBCASE("loss falls and the ranking becomes informative") {
        CHECK(a.epoch_losses.back() < a.epoch_losses.front());
        const auto scores = score_documents(a.state, docs, config::Aggregator::Hierarchical,
                                            netcore::ScoreKind::RiskLogit);
        const auto report = metrics::evaluate(scores, planted.labels);
        CHECK(report.spearman_rho > 50.0);
    }

    SUBCASE("a different seed gives a different model") {
        const TrainResult c = train_model(docs, planted.labels, opts, 43);
        CHECK((c.state.params.head_w.array() != a.state.params.head_w.array()).any());
    }
}

TEST_CASE("pooled aggregators train end to end") {
    const auto planted = synthetic::make_planted_corpus(24, 11);
    std::vector<std::string> texts;
    for (const auto& doc : planted.docs) texts.push_back(doc.text);
    const corpus::Vocabulary vocab = corpus::Vocabulary::build(texts, 1);
    std::vector<corpus::EncodedDocument> docs;
    for (const auto& raw : planted.docs) {
        docs.push_back(corpus::encode_document(raw.text, vocab, 12, 18));
    }

    for (config::Aggregator agg : {config::Aggregator::MeanPool, config::Aggregator::MaxPool}) {
        TrainOptions opts;
        opts.model.vocab_size = static_cast<int>(vocab.size());
        opts.model.embed_dim = 16;
        opts.model.attn_dim = 16;
        opts.model.heads = 2;
        opts.model.max_sentences = 12;
        opts.model.max_tokens = 18;
        opts.model.ffn_width = 32;
        opts.aggregator = agg;
        opts.loss = losses::LossKind::Pairwise;
        opts.epochs = 2;
        opts.batch_size = 6;
        opts.encoder_lr = 0.01;
        opts.head_lr = 0.01;

        const TrainResult result = train_model(docs, planted.labels, opts, 5);
        CHECK(result.epoch_losses.size() == 2);
        const auto scores =
            score_documents(result.state, docs, agg, netcore::ScoreKind::RiskLogit);
        CHECK(scores.size() == docs.size());
    }
}

TEST_CASE("cross-entropy training produces expected-risk scores") {
    const auto planted = synthetic::make_planted_corpus(24, 13);
    std::vector<std::string> texts;
    for (const auto& doc : planted.docs) texts.push_back(doc.text);
    const corpus::Vocabulary vocab = corpus::Vocabulary::build(texts, 1);
    std::vector<corpus::EncodedDocument> docs;
    for (const auto& raw : planted.docs) {
        docs.push_back(corpus::encode_document(raw.text, vocab, 12, 18));
    }

    TrainOptions opts;
    opts.model.vocab_size = static_cast<int>(vocab.size());
    opts.model.embed_dim = 16;
    opts.model.attn_dim = 16;
    opts.model.heads = 2;
    opts.model.max_sentences = 12;
    opts.model.max_tokens = 18;
    opts.model.ffn_width = 32;
    opts.loss = losses::LossKind::CrossEntropy;
    opts.epochs = 2;
    opts.batch_size = 6;
    opts.encoder_lr = 0.02;
    opts.head_lr = 0.02;

    const TrainResult result = train_model(docs, planted.labels, opts, 9);
    CHECK(score_kind_for(losses::LossKind::CrossEntropy) == netcore::ScoreKind::ExpectedRisk);
    const auto scores = score_documents(result.state, docs, config::Aggregator::Hierarchical,
                                        netcore::ScoreKind::ExpectedRisk);
    for (double s : scores) {
        CHECK(s >= 0.0);
        CHECK(s <= 2.0);
    }
}
