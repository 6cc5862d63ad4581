#ifndef RISKRANK_CONFIG_HPP
#define RISKRANK_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "riskrank/losses.hpp"
#include "riskrank/netcore.hpp"
#include "riskrank/riskmeasures.hpp"

namespace riskrank::config {

enum class Aggregator { Hierarchical, MeanPool, MaxPool };

const char* to_string(Aggregator a);
Aggregator aggregator_from_string(const std::string& name);

enum class SortinoDegeneratePolicy { Exclude, TopBin };

// Flat key-value run configuration, schema version 1. Unknown keys are
// errors: silent typos corrupt experiments.
struct RunConfig {
    // Paths.
    std::string corpus_jsonl;
    std::string returns_csv;
    std::string output_dir;
    std::string labels_csv;     // consumed by split/train/eval/explain/ablate
    std::string split_file;     // consumed by train/eval/explain/ablate
    std::string checkpoint_dir; // consumed by eval/explain/ablate

    riskmeasures::RiskMeasure measure = riskmeasures::RiskMeasure::Std;
    losses::LossKind loss = losses::LossKind::Triplet;
    Aggregator aggregator = Aggregator::Hierarchical;
    SortinoDegeneratePolicy sortino_degenerate = SortinoDegeneratePolicy::Exclude;

    // Model dimensions (desk-scale defaults).
    int max_sentences = 350;
    int max_tokens = 40;
    int embed_dim = 32;
    int attn_dim = 32;
    int heads = 4;
    int ffn_width = 64;
    std::size_t vocab_min_count = 1;

    // Training.
    int epochs = 30;
    int batch_size = 8;
    double encoder_lr = 1e-5;
    double head_lr = 6e-5;
    double margin = 0.1;
    double k_fraction = 0.30;
    int window_years = 5;
    std::vector<std::uint64_t> seeds = {98, 83, 62, 42, 21};

    // Normalized key-value snapshot of the parsed file, for hashing and the
    // run manifest.
    std::map<std::string, std::string> snapshot;

    std::uint64_t hash() const;
    netcore::ModelConfig model_config(int vocab_size, std::uint64_t seed) const;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);

} // namespace riskrank::config

#endif
