#include "riskrank/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "riskrank/errors.hpp"

namespace riskrank::explain {

namespace {

// Linear interpolation between order statistics (the numpy default).
double quantile_linear(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values.front();
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

bool displayable_token(std::int32_t id, const corpus::Vocabulary& vocab) {
    if (id < corpus::kNumSpecialIds) return false;
    const std::string& token = vocab.token_of(id);
    return !vocab.is_stopword(token) && !corpus::is_punctuation_token(token);
}

} // namespace

TokenWeightGrid combined_token_weights(const netcore::ForwardTrace& trace,
                                       const corpus::EncodedDocument& doc) {
    const int L = doc.max_sentences;
    const int l = doc.max_tokens;
    if (trace.word_attention.rows() != L || trace.word_attention.cols() != l) {
        throw Error(ErrorKind::InputShapeError, "trace does not match document shape");
    }
    TokenWeightGrid grid;
    grid.doc_id = doc.doc_id;
    grid.gamma = Eigen::MatrixXd::Zero(L, l);
    for (int s = 0; s < L; ++s) {
        if (!doc.sentence_on(s)) continue;
        for (int t = 0; t < l; ++t) {
            if (!doc.token_on(s, t)) continue;
            grid.gamma(s, t) = trace.sentence_attention(s) * trace.word_attention(s, t);
        }
    }
    return grid;
}

std::vector<TokenPosition> select_salient_tokens(TokenWeightGrid& grid,
                                                 const corpus::EncodedDocument& doc,
                                                 const corpus::Vocabulary& vocab, double k) {
    if (!(k > 0.0 && k <= 1.0)) {
        throw Error(ErrorKind::InputShapeError, "selection fraction must satisfy 0 < K <= 1");
    }
    std::vector<double> flat;
    for (int s = 0; s < doc.max_sentences; ++s) {
        if (!doc.sentence_on(s)) continue;
        for (int t = 0; t < doc.max_tokens; ++t) {
            if (doc.token_on(s, t)) flat.push_back(grid.gamma(s, t));
        }
    }
    if (flat.empty()) return {};
    grid.threshold = quantile_linear(std::move(flat), 1.0 - k);

    std::vector<TokenPosition> selected;
    for (int s = 0; s < doc.max_sentences; ++s) {
        if (!doc.sentence_on(s)) continue;
        for (int t = 0; t < doc.max_tokens; ++t) {
            if (!doc.token_on(s, t) || grid.gamma(s, t) <= grid.threshold) continue;
            if (!displayable_token(doc.id_at(s, t), vocab)) continue;
            selected.push_back({s, t});
        }
    }
    return selected;
}

std::array<std::map<std::string, double>, 3> group_word_frequencies(
    const std::vector<corpus::EncodedDocument>& documents,
    const std::vector<netcore::ForwardTrace>& traces, const std::vector<int>& groups,
    const corpus::Vocabulary& vocab, double k) {
    if (documents.size() != traces.size() || documents.size() != groups.size()) {
        throw Error(ErrorKind::InputShapeError, "documents, traces and groups must align");
    }
    std::array<std::map<std::string, double>, 3> tables;
    for (std::size_t d = 0; d < documents.size(); ++d) {
        const int g = groups[d];
        if (g < 0 || g > 2) throw Error(ErrorKind::InputShapeError, "group id out of range");
        TokenWeightGrid grid = combined_token_weights(traces[d], documents[d]);
        for (const TokenPosition& pos : select_salient_tokens(grid, documents[d], vocab, k)) {
            const std::string& token = vocab.token_of(documents[d].id_at(pos.sentence, pos.token));
            tables[static_cast<std::size_t>(g)][token] += grid.gamma(pos.sentence, pos.token);
        }
    }
    return tables;
}

std::array<WordCloudTable, 3> distinctive_adjust(
    const std::array<std::map<std::string, double>, 3>& raw_tables) {
    std::array<WordCloudTable, 3> clouds;
    for (int g = 0; g < 3; ++g) {
        clouds[static_cast<std::size_t>(g)].group = g;
        for (const auto& [token, freq] : raw_tables[static_cast<std::size_t>(g)]) {
            double best_other = 0.0;
            for (int h = 0; h < 3; ++h) {
                if (h == g) continue;
                const auto& other = raw_tables[static_cast<std::size_t>(h)];
                auto it = other.find(token);
                if (it != other.end()) best_other = std::max(best_other, it->second);
            }
            const double adjusted = freq - best_other;
            if (adjusted > 0.0) {
                clouds[static_cast<std::size_t>(g)].adjusted_frequency.emplace(token, adjusted);
            }
        }
    }
    return clouds;
}

std::vector<SentenceReportRow> top_sentence_report(const netcore::ForwardTrace& trace,
                                                   const corpus::EncodedDocument& doc,
                                                   const corpus::Vocabulary& vocab, int k) {
    if (k < 1) throw Error(ErrorKind::InputShapeError, "top-sentence count must be positive");
    std::vector<int> sentences;
    for (int s = 0; s < doc.max_sentences; ++s) {
        if (doc.sentence_on(s)) sentences.push_back(s);
    }
    std::sort(sentences.begin(), sentences.end(), [&](int a, int b) {
        if (trace.sentence_attention(a) != trace.sentence_attention(b)) {
            return trace.sentence_attention(a) > trace.sentence_attention(b);
        }
        return a < b;
    });
    if (sentences.size() > static_cast<std::size_t>(k)) sentences.resize(static_cast<std::size_t>(k));

    std::vector<SentenceReportRow> rows;
    for (int s : sentences) {
        SentenceReportRow row;
        row.sentence_index = s;
        row.alpha_s = trace.sentence_attention(s);
        for (int t = 0; t < doc.max_tokens; ++t) {
            if (!doc.token_on(s, t)) continue;
            const std::int32_t id = doc.id_at(s, t);
            if (!displayable_token(id, vocab)) continue;
            row.tokens.push_back(vocab.token_of(id));
            row.alpha_w.push_back(trace.word_attention(s, t));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

std::vector<TokenPosition> maskable_positions(const corpus::EncodedDocument& doc) {
    std::vector<TokenPosition> positions;
    for (int s = 0; s < doc.max_sentences; ++s) {
        if (!doc.sentence_on(s)) continue;
        for (int t = 0; t < doc.max_tokens; ++t) {
            if (!doc.token_on(s, t)) continue;
            const std::int32_t id = doc.id_at(s, t);
            if (id == corpus::kClsId || id == corpus::kSepId) continue;
            positions.push_back({s, t});
        }
    }
    return positions;
}

void mask_positions(corpus::EncodedDocument& doc, const std::vector<TokenPosition>& positions,
                    std::size_t count) {
    for (std::size_t i = 0; i < count && i < positions.size(); ++i) {
        const std::size_t idx =
            static_cast<std::size_t>(positions[i].sentence) * doc.max_tokens + positions[i].token;
        doc.token_ids[idx] = corpus::kPadId;
        doc.token_mask[idx] = 0;
    }
}

void mask_sentences(corpus::EncodedDocument& doc, const std::vector<int>& sentences,
                    std::size_t count) {
    for (std::size_t i = 0; i < count && i < sentences.size(); ++i) {
        const int s = sentences[i];
        doc.sentence_mask[static_cast<std::size_t>(s)] = 0;
        for (int t = 0; t < doc.max_tokens; ++t) {
            const std::size_t idx = static_cast<std::size_t>(s) * doc.max_tokens + t;
            doc.token_ids[idx] = corpus::kPadId;
            doc.token_mask[idx] = 0;
        }
    }
}

std::size_t removal_count(double k, std::size_t available) {
    return static_cast<std::size_t>(std::ceil(k * static_cast<double>(available)));
}

void check_fraction(double k) {
    if (!(k >= 0.0 && k <= 1.0)) {
        throw Error(ErrorKind::InputShapeError, "removal fraction must lie in [0, 1]");
    }
}

} // namespace

corpus::EncodedDocument ablate_words(const corpus::EncodedDocument& doc, const TokenWeightGrid& grid,
                                     double k) {
    check_fraction(k);
    corpus::EncodedDocument out = doc;
    std::vector<TokenPosition> positions = maskable_positions(doc);
    // gamma descending, ties by grid position ascending.
    std::stable_sort(positions.begin(), positions.end(),
                     [&](const TokenPosition& a, const TokenPosition& b) {
                         return grid.gamma(a.sentence, a.token) > grid.gamma(b.sentence, b.token);
                     });
    mask_positions(out, positions, removal_count(k, positions.size()));
    return out;
}

corpus::EncodedDocument ablate_words_random(const corpus::EncodedDocument& doc, double k, Rng& rng) {
    check_fraction(k);
    corpus::EncodedDocument out = doc;
    std::vector<TokenPosition> positions = maskable_positions(doc);
    rng.shuffle(positions);
    mask_positions(out, positions, removal_count(k, positions.size()));
    return out;
}

corpus::EncodedDocument ablate_sentences(const corpus::EncodedDocument& doc,
                                         const Eigen::VectorXd& alpha_s, double k) {
    check_fraction(k);
    if (alpha_s.size() != doc.max_sentences) {
        throw Error(ErrorKind::InputShapeError, "attention vector does not match sentence count");
    }
    corpus::EncodedDocument out = doc;
    std::vector<int> sentences;
    for (int s = 0; s < doc.max_sentences; ++s) {
        if (doc.sentence_on(s)) sentences.push_back(s);
    }
    std::stable_sort(sentences.begin(), sentences.end(),
                     [&](int a, int b) { return alpha_s(a) > alpha_s(b); });
    mask_sentences(out, sentences, removal_count(k, sentences.size()));
    return out;
}

corpus::EncodedDocument ablate_sentences_random(const corpus::EncodedDocument& doc, double k,
                                                Rng& rng) {
    check_fraction(k);
    corpus::EncodedDocument out = doc;
    std::vector<int> sentences;
    for (int s = 0; s < doc.max_sentences; ++s) {
        if (doc.sentence_on(s)) sentences.push_back(s);
    }
    rng.shuffle(sentences);
    mask_sentences(out, sentences, removal_count(k, sentences.size()));
    return out;
}

std::vector<AblationPoint> ablation_curve(const netcore::ModelState& model,
                                          const std::vector<corpus::EncodedDocument>& docs,
                                          const std::vector<int>& true_bins,
                                          const std::vector<double>& k_grid, AblationMode mode,
                                          bool with_random_control, std::uint64_t control_seed,
                                          netcore::ScoreKind score_kind) {
    if (docs.size() != true_bins.size()) {
        throw Error(ErrorKind::InputShapeError, "documents and labels must align");
    }
    for (std::size_t i = 1; i < k_grid.size(); ++i) {
        if (k_grid[i] < k_grid[i - 1]) {
            throw Error(ErrorKind::InputShapeError, "k grid must be sorted ascending");
        }
    }

    // Attention is extracted once, from the original documents.
    std::vector<netcore::ForwardTrace> traces;
    traces.reserve(docs.size());
    for (const auto& doc : docs) traces.push_back(netcore::forward(doc, model));
    std::vector<TokenWeightGrid> grids;
    if (mode == AblationMode::Words) {
        grids.reserve(docs.size());
        for (std::size_t i = 0; i < docs.size(); ++i) {
            grids.push_back(combined_token_weights(traces[i], docs[i]));
        }
    }

    std::vector<double> ks = k_grid;
    if (ks.empty() || ks.front() > 0.0) ks.insert(ks.begin(), 0.0);

    auto evaluate_variant = [&](double k, AblationVariant variant, Rng* rng) {
        AblationPoint point;
        point.k = k;
        point.variant = variant;
        std::vector<double> scores;
        std::vector<int> bins;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            corpus::EncodedDocument ablated = [&] {
                if (variant == AblationVariant::Random) {
                    return mode == AblationMode::Words ? ablate_words_random(docs[i], k, *rng)
                                                       : ablate_sentences_random(docs[i], k, *rng);
                }
                return mode == AblationMode::Words
                           ? ablate_words(docs[i], grids[i], k)
                           : ablate_sentences(docs[i], traces[i].sentence_attention, k);
            }();
            try {
                const netcore::ForwardTrace t = netcore::forward(ablated, model);
                scores.push_back(netcore::document_score(t, score_kind));
                bins.push_back(true_bins[i]);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::EmptyDocument) throw;
                ++point.excluded_documents;
            }
        }
        // At extreme k the surviving set can be too small or too uniform to
        // rank; the metric is recorded as undefined for that point.
        try {
            point.report = metrics::evaluate(scores, bins);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::InsufficientObservations &&
                e.kind() != ErrorKind::DegenerateRanking) {
                throw;
            }
            point.defined = false;
        }
        return point;
    };

    std::vector<AblationPoint> points;
    Rng control_rng(control_seed);
    for (double k : ks) {
        points.push_back(evaluate_variant(k, AblationVariant::Attention, nullptr));
        if (with_random_control) {
            points.push_back(evaluate_variant(k, AblationVariant::Random, &control_rng));
        }
    }
    return points;
}

} // namespace riskrank::explain
