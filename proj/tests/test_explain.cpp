#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "riskrank/errors.hpp"
#include "riskrank/explain.hpp"
#include "support/toy_model.hpp"

using namespace riskrank;
using namespace riskrank::explain;
using riskrank::netcore::ForwardTrace;

namespace {

struct Fixture {
    corpus::Vocabulary vocab = toy::vocabulary();
    netcore::ModelState state = netcore::init_model(toy::model_config(vocab));
    std::vector<corpus::EncodedDocument> docs = toy::documents(vocab);
};

} // namespace

TEST_CASE("combined token weights") {
    Fixture fx;
    const auto& doc = fx.docs[0];
    const ForwardTrace trace = netcore::forward(doc, fx.state);
    const TokenWeightGrid grid = combined_token_weights(trace, doc);

    double total = 0.0;
    for (int s = 0; s < doc.max_sentences; ++s) {
        for (int t = 0; t < doc.max_tokens; ++t) {
            if (doc.sentence_on(s) && doc.token_on(s, t)) {
                CHECK(grid.gamma(s, t) ==
                      doctest::Approx(trace.sentence_attention(s) * trace.word_attention(s, t))
                          .epsilon(1e-15));
                total += grid.gamma(s, t);
            } else {
                CHECK(grid.gamma(s, t) == 0.0);
            }
        }
    }
    // Product of simplices summed over sentences.
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    SUBCASE("single-sentence document reduces to word attention") {
        const auto single = corpus::encode_document("alpha beta gamma", fx.vocab, 4, 8);
        const ForwardTrace tr = netcore::forward(single, fx.state);
        const TokenWeightGrid g = combined_token_weights(tr, single);
        for (int t = 0; t < single.max_tokens; ++t) {
            CHECK(g.gamma(0, t) == doctest::Approx(tr.word_attention(0, t)).epsilon(1e-12));
        }
    }
}

TEST_CASE("salient token selection") {
    Fixture fx;

    SUBCASE("distinct weights select exactly the top fraction before filtering") {
        // One sentence with 8 unmasked positions and hand-set distinct weights.
        const auto doc = corpus::encode_document("alpha beta gamma delta epsilon zeta", fx.vocab, 4, 8);
        ForwardTrace trace = netcore::forward(doc, fx.state);
        TokenWeightGrid grid = combined_token_weights(trace, doc);
        for (int t = 0; t < 8; ++t) grid.gamma(0, t) = 0.1 * (t + 1);

        TokenWeightGrid probe = grid;
        const auto selected = select_salient_tokens(probe, doc, fx.vocab, 0.25);
        // (1-K) quantile of 8 distinct values at K=0.25 lies between the 6th
        // and 7th order statistic: exactly 2 positions survive the strict
        // comparison. Position 7 is SEP, filtered from the result, so the
        // selection is the single content position 6.
        REQUIRE(selected.size() == 1);
        CHECK(selected[0].sentence == 0);
        CHECK(selected[0].token == 6);
        CHECK(probe.threshold > 0.6);
        CHECK(probe.threshold < 0.7);
    }

    SUBCASE("uniform weights select nothing under strict inequality") {
        const auto doc = corpus::encode_document("alpha beta gamma", fx.vocab, 4, 8);
        ForwardTrace trace = netcore::forward(doc, fx.state);
        TokenWeightGrid grid = combined_token_weights(trace, doc);
        for (int t = 0; t < 5; ++t) grid.gamma(0, t) = 0.2;
        CHECK(select_salient_tokens(grid, doc, fx.vocab, 0.3).empty());
    }

    SUBCASE("selection is monotone in K for distinct weights") {
        const auto& doc = fx.docs[1];
        const ForwardTrace trace = netcore::forward(doc, fx.state);
        std::set<std::pair<int, int>> previous;
        for (double k : {0.1, 0.3, 0.5, 0.9}) {
            TokenWeightGrid grid = combined_token_weights(trace, doc);
            const auto selected = select_salient_tokens(grid, doc, fx.vocab, k);
            std::set<std::pair<int, int>> current;
            for (const auto& pos : selected) current.emplace(pos.sentence, pos.token);
            for (const auto& pos : previous) CHECK(current.count(pos) == 1);
            previous = std::move(current);
        }
    }
}

TEST_CASE("group word frequencies and distinctive adjustment") {
    Fixture fx;

    SUBCASE("additivity over disjoint partitions") {
        std::vector<ForwardTrace> traces;
        for (const auto& doc : fx.docs) traces.push_back(netcore::forward(doc, fx.state));
        const std::vector<int> groups = {0, 1, 2};
        const auto all = group_word_frequencies(fx.docs, traces, groups, fx.vocab, 0.5);

        // Same documents, one group at a time.
        for (int g = 0; g < 3; ++g) {
            const auto solo = group_word_frequencies({fx.docs[static_cast<std::size_t>(g)]},
                                                     {traces[static_cast<std::size_t>(g)]}, {g},
                                                     fx.vocab, 0.5);
            for (const auto& [token, freq] : solo[static_cast<std::size_t>(g)]) {
                CHECK(all[static_cast<std::size_t>(g)].at(token) == doctest::Approx(freq).epsilon(1e-12));
            }
        }
    }

    SUBCASE("distinctive adjustment subtracts the best other group") {
        std::array<std::map<std::string, double>, 3> raw;
        raw[0] = {{"only", 0.4}, {"shared", 0.9}, {"tied", 0.3}};
        raw[1] = {{"shared", 0.4}, {"tied", 0.3}};
        raw[2] = {{"shared", 0.2}};
        const auto clouds = distinctive_adjust(raw);

        CHECK(clouds[0].adjusted_frequency.at("only") == doctest::Approx(0.4));
        CHECK(clouds[0].adjusted_frequency.at("shared") == doctest::Approx(0.5));
        CHECK(clouds[0].adjusted_frequency.count("tied") == 0); // symmetric cancellation
        CHECK(clouds[1].adjusted_frequency.count("shared") == 0);
        CHECK(clouds[1].adjusted_frequency.count("tied") == 0);
        CHECK(clouds[2].adjusted_frequency.empty());

        // Type invariants: strict positivity and cross-group dominance.
        for (int g = 0; g < 3; ++g) {
            for (const auto& [token, freq] : clouds[static_cast<std::size_t>(g)].adjusted_frequency) {
                CHECK(freq > 0.0);
                double best_other = 0.0;
                for (int h = 0; h < 3; ++h) {
                    if (h == g) continue;
                    auto it = raw[static_cast<std::size_t>(h)].find(token);
                    if (it != raw[static_cast<std::size_t>(h)].end()) {
                        best_other = std::max(best_other, it->second);
                    }
                }
                CHECK(raw[static_cast<std::size_t>(g)].at(token) > best_other);
            }
        }
    }
}

TEST_CASE("top sentence report") {
    Fixture fx;
    const auto& doc = fx.docs[1];
    ForwardTrace trace = netcore::forward(doc, fx.state);

    SUBCASE("truncates to the available sentences") {
        const auto rows = top_sentence_report(trace, doc, fx.vocab, 5);
        CHECK(rows.size() == static_cast<std::size_t>(doc.unmasked_sentence_count()));
    }

    SUBCASE("one-hot attention ranks that sentence first") {
        trace.sentence_attention.setZero();
        trace.sentence_attention(1) = 1.0;
        const auto rows = top_sentence_report(trace, doc, fx.vocab, 5);
        REQUIRE_FALSE(rows.empty());
        CHECK(rows[0].sentence_index == 1);
        CHECK(rows[0].alpha_s == 1.0);
    }

    SUBCASE("equal attention breaks ties by sentence index") {
        trace.sentence_attention.setZero();
        for (int s = 0; s < doc.max_sentences; ++s) {
            if (doc.sentence_on(s)) trace.sentence_attention(s) = 0.5;
        }
        const auto rows = top_sentence_report(trace, doc, fx.vocab, 5);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            CHECK(rows[i].sentence_index > rows[i - 1].sentence_index);
        }
    }
}

TEST_CASE("word ablation") {
    Fixture fx;
    const auto& doc = fx.docs[1];
    const ForwardTrace trace = netcore::forward(doc, fx.state);
    const TokenWeightGrid grid = combined_token_weights(trace, doc);

    SUBCASE("k=0 is the identity") {
        const auto out = ablate_words(doc, grid, 0.0);
        CHECK(out.token_ids == doc.token_ids);
        CHECK(out.token_mask == doc.token_mask);
        CHECK(out.sentence_mask == doc.sentence_mask);
    }

    SUBCASE("k=1 masks every non-special token") {
        const auto out = ablate_words(doc, grid, 1.0);
        for (int s = 0; s < doc.max_sentences; ++s) {
            for (int t = 0; t < doc.max_tokens; ++t) {
                if (!doc.token_on(s, t)) continue;
                const auto id = doc.id_at(s, t);
                if (id == corpus::kClsId || id == corpus::kSepId) {
                    CHECK(out.token_on(s, t));
                } else {
                    CHECK_FALSE(out.token_on(s, t));
                    CHECK(out.id_at(s, t) == corpus::kPadId);
                }
            }
        }
    }

    SUBCASE("exactly ceil(k * count) positions are masked, nondecreasing in k") {
        std::size_t content = 0;
        for (int s = 0; s < doc.max_sentences; ++s) {
            for (int t = 0; t < doc.max_tokens; ++t) {
                if (doc.token_on(s, t) && doc.id_at(s, t) != corpus::kClsId &&
                    doc.id_at(s, t) != corpus::kSepId) {
                    ++content;
                }
            }
        }
        std::size_t previous = 0;
        for (double k : {0.05, 0.1, 0.25, 0.5, 0.75, 1.0}) {
            const auto out = ablate_words(doc, grid, k);
            std::size_t masked = 0;
            for (std::size_t i = 0; i < doc.token_mask.size(); ++i) {
                if (doc.token_mask[i] != 0 && out.token_mask[i] == 0) ++masked;
            }
            CHECK(masked == static_cast<std::size_t>(std::ceil(k * static_cast<double>(content))));
            CHECK(masked >= previous);
            previous = masked;
        }
    }

    SUBCASE("random control masks the same count") {
        Rng rng(9);
        const auto out = ablate_words_random(doc, 0.3, rng);
        std::size_t masked = 0;
        for (std::size_t i = 0; i < doc.token_mask.size(); ++i) {
            if (doc.token_mask[i] != 0 && out.token_mask[i] == 0) ++masked;
        }
        const auto attention = ablate_words(doc, grid, 0.3);
        std::size_t masked_attention = 0;
        for (std::size_t i = 0; i < doc.token_mask.size(); ++i) {
            if (doc.token_mask[i] != 0 && attention.token_mask[i] == 0) ++masked_attention;
        }
        CHECK(masked == masked_attention);
    }
}

TEST_CASE("sentence ablation") {
    Fixture fx;
    const auto& doc = fx.docs[0];
    const ForwardTrace trace = netcore::forward(doc, fx.state);

    SUBCASE("k=0 is the identity") {
        const auto out = ablate_sentences(doc, trace.sentence_attention, 0.0);
        CHECK(out.sentence_mask == doc.sentence_mask);
        CHECK(out.token_ids == doc.token_ids);
    }

    SUBCASE("ceiling rule masks one sentence of a single-sentence doc at k=0.5") {
        const auto single = corpus::encode_document("alpha beta", fx.vocab, 4, 8);
        const ForwardTrace tr = netcore::forward(single, fx.state);
        const auto out = ablate_sentences(single, tr.sentence_attention, 0.5);
        CHECK(out.unmasked_sentence_count() == 0);
    }

    SUBCASE("partial removal keeps the attention invariant on the rest") {
        const auto out = ablate_sentences(doc, trace.sentence_attention, 0.34);
        REQUIRE(out.unmasked_sentence_count() > 0);
        const ForwardTrace tr = netcore::forward(out, fx.state);
        double sum = 0.0;
        for (int s = 0; s < out.max_sentences; ++s) sum += tr.sentence_attention(s);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        // The highest-attention sentence was removed.
        int top = -1;
        double best = -1.0;
        for (int s = 0; s < doc.max_sentences; ++s) {
            if (doc.sentence_on(s) && trace.sentence_attention(s) > best) {
                best = trace.sentence_attention(s);
                top = s;
            }
        }
        CHECK_FALSE(out.sentence_on(top));
    }
}

TEST_CASE("ablation curve") {
    Fixture fx;
    std::vector<int> bins = {0, 1, 2};

    SUBCASE("k grid of only zero reproduces the baseline evaluation twice") {
        const auto points = ablation_curve(fx.state, fx.docs, bins, {0.0}, AblationMode::Words,
                                           true, 77);
        REQUIRE(points.size() == 2);
        CHECK(points[0].k == 0.0);
        CHECK(points[1].k == 0.0);
        CHECK(points[0].report.macro_f1 == points[1].report.macro_f1);
        CHECK(points[0].report.spearman_rho == points[1].report.spearman_rho);

        std::vector<double> scores;
        for (const auto& doc : fx.docs) scores.push_back(netcore::forward(doc, fx.state).risk_logit);
        const auto base = metrics::evaluate(scores, bins);
        CHECK(points[0].report.macro_f1 == doctest::Approx(base.macro_f1));
    }

    SUBCASE("a missing zero point is prepended as the baseline") {
        const auto points = ablation_curve(fx.state, fx.docs, bins, {0.5}, AblationMode::Sentences,
                                           false, 77);
        REQUIRE(points.size() == 2);
        CHECK(points[0].k == 0.0);
        CHECK(points[1].k == 0.5);
    }

    SUBCASE("unsorted grids are rejected") {
        CHECK_THROWS_AS(
            ablation_curve(fx.state, fx.docs, bins, {0.3, 0.1}, AblationMode::Words, false, 1),
            Error);
    }

    SUBCASE("full sentence removal excludes documents and is undefined") {
        const auto points = ablation_curve(fx.state, fx.docs, bins, {1.0}, AblationMode::Sentences,
                                           false, 1);
        REQUIRE(points.size() == 2);
        CHECK(points[0].excluded_documents == 0);
        CHECK(points[0].defined);
        CHECK(points[1].excluded_documents == fx.docs.size());
        CHECK_FALSE(points[1].defined);
    }
}
