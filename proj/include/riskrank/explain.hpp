#ifndef RISKRANK_EXPLAIN_HPP
#define RISKRANK_EXPLAIN_HPP

#include <array>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "riskrank/corpus.hpp"
#include "riskrank/metrics.hpp"
#include "riskrank/netcore.hpp"
#include "riskrank/rng.hpp"

namespace riskrank::explain {

// Combined sentence x word attention weights for one document:
// gamma[i][j] = alpha_s[i] * alpha_w[i][j] at unmasked positions, 0 elsewhere.
struct TokenWeightGrid {
    std::string doc_id;
    Eigen::MatrixXd gamma; // L x l
    double threshold = std::numeric_limits<double>::quiet_NaN(); // tau_d, set by selection
};

TokenWeightGrid combined_token_weights(const netcore::ForwardTrace& trace,
                                       const corpus::EncodedDocument& doc);

struct TokenPosition {
    int sentence = 0;
    int token = 0;
};

// Positions with gamma strictly above the (1-K) quantile of the flattened
// unmasked weights, with special tokens, stopwords and punctuation-only
// tokens dropped. Sets grid.threshold as a side effect.
std::vector<TokenPosition> select_salient_tokens(TokenWeightGrid& grid,
                                                 const corpus::EncodedDocument& doc,
                                                 const corpus::Vocabulary& vocab, double k = 0.30);

// Attention-weighted token frequencies per risk group: for each selected
// occurrence of a token, its gamma is added to the group's tally.
std::array<std::map<std::string, double>, 3> group_word_frequencies(
    const std::vector<corpus::EncodedDocument>& documents,
    const std::vector<netcore::ForwardTrace>& traces, const std::vector<int>& groups,
    const corpus::Vocabulary& vocab, double k = 0.30);

// Group-distinctive word-cloud table: only tokens whose frequency strictly
// exceeds their best frequency in the other groups survive.
struct WordCloudTable {
    int group = 0;
    std::map<std::string, double> adjusted_frequency;
};

std::array<WordCloudTable, 3> distinctive_adjust(
    const std::array<std::map<std::string, double>, 3>& raw_tables);

struct SentenceReportRow {
    int sentence_index = 0;
    double alpha_s = 0.0;
    std::vector<std::string> tokens;
    std::vector<double> alpha_w;
};

// Top-k sentences by attention (ties broken by sentence index), each row
// carrying its display tokens and word attention values.
std::vector<SentenceReportRow> top_sentence_report(const netcore::ForwardTrace& trace,
                                                   const corpus::EncodedDocument& doc,
                                                   const corpus::Vocabulary& vocab, int k = 5);

// Masks the ceil(k * count) highest-gamma non-special tokens (PAD substitution,
// mask bits zeroed); CLS and SEP are untouched.
corpus::EncodedDocument ablate_words(const corpus::EncodedDocument& doc,
                                     const TokenWeightGrid& grid, double k);

// Fully masks the ceil(k * count) highest-attention sentence rows.
corpus::EncodedDocument ablate_sentences(const corpus::EncodedDocument& doc,
                                         const Eigen::VectorXd& alpha_s, double k);

// Seeded uniform controls matched to the attention-guided removals.
corpus::EncodedDocument ablate_words_random(const corpus::EncodedDocument& doc, double k, Rng& rng);
corpus::EncodedDocument ablate_sentences_random(const corpus::EncodedDocument& doc, double k,
                                                Rng& rng);

enum class AblationMode { Words, Sentences };
enum class AblationVariant { Attention, Random };

struct AblationPoint {
    double k = 0.0;
    AblationVariant variant = AblationVariant::Attention;
    metrics::EvalReport report;
    std::size_t excluded_documents = 0; // failed forward at this k
    bool defined = true; // false when too few documents survive to evaluate
};

// Re-scores the test set after removing the top-k% attended words or
// sentences (attention extracted once, from the original documents), for
// every k in the grid plus the k=0 baseline.
std::vector<AblationPoint> ablation_curve(const netcore::ModelState& model,
                                          const std::vector<corpus::EncodedDocument>& docs,
                                          const std::vector<int>& true_bins,
                                          const std::vector<double>& k_grid, AblationMode mode,
                                          bool with_random_control, std::uint64_t control_seed,
                                          netcore::ScoreKind score_kind = netcore::ScoreKind::RiskLogit);

} // namespace riskrank::explain

#endif
