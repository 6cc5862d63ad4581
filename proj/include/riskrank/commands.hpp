#ifndef RISKRANK_COMMANDS_HPP
#define RISKRANK_COMMANDS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "riskrank/config.hpp"
#include "riskrank/corpus.hpp"
#include "riskrank/explain.hpp"
#include "riskrank/metrics.hpp"

namespace riskrank::commands {

inline constexpr const char* kToolVersion = "riskrank 1.0.0";

// Command outputs land under <output_dir>/<run name>; the default run name
// is "<config hash hex>-<UTC timestamp>", overridable for reproducible paths.
std::string make_run_dir(const config::RunConfig& cfg, const std::string& run_name_override);

struct LabelRow {
    std::string company_id;
    int year = 0;
    riskmeasures::RiskMeasure measure = riskmeasures::RiskMeasure::Std;
    double value = 0.0;
    int bin = 0;
};

std::vector<LabelRow> read_labels_csv(const std::string& path);
void write_labels_csv(const std::vector<LabelRow>& rows, const std::string& path);

struct SplitEntry {
    std::vector<int> train_years;
    int test_year = 0;
    std::vector<std::string> train_docs;
    std::vector<std::string> test_docs;
};

std::vector<SplitEntry> read_split_file(const std::string& path);
void write_split_file(const std::vector<SplitEntry>& splits, const std::string& path);

// Ledger of one run's artifacts: config snapshot, vocabulary hash per test
// year, checkpoint path per (test year, seed), report paths, tool version.
struct RunManifest {
    std::string tool_version = kToolVersion;
    std::map<std::string, std::string> config_snapshot;
    std::map<int, std::uint64_t> vocab_hash_by_year;
    std::map<std::string, std::string> checkpoints;   // "year:seed" -> path
    std::map<std::string, std::string> eval_reports;  // "year:seed" -> path
    std::map<std::string, std::vector<std::string>> trained_doc_ids; // "year:seed" -> ids

    bool operator==(const RunManifest&) const = default;
    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

struct CommandOptions {
    std::string run_name;                    // empty -> hash+timestamp
    std::optional<std::uint64_t> seed;       // restrict train/eval/explain/ablate
    std::optional<riskmeasures::RiskMeasure> measure; // override config
    std::optional<losses::LossKind> loss;             // override config
    std::vector<double> k_grid = {0.0, 0.1, 0.3};
    explain::AblationMode ablation_mode = explain::AblationMode::Words;
    std::vector<std::string> doc_ids;        // heatmap requests
    std::string compare_a, compare_b;        // run dirs for paired Cohen's d
};

// Each command returns the run directory its outputs were written to.
std::string cmd_label(const config::RunConfig& cfg, const CommandOptions& opts);
std::string cmd_split(const config::RunConfig& cfg, const CommandOptions& opts);
std::string cmd_train(const config::RunConfig& cfg, const CommandOptions& opts);
std::string cmd_eval(const config::RunConfig& cfg, const CommandOptions& opts);
std::string cmd_explain(const config::RunConfig& cfg, const CommandOptions& opts);
std::string cmd_ablate(const config::RunConfig& cfg, const CommandOptions& opts);

} // namespace riskrank::commands

#endif
