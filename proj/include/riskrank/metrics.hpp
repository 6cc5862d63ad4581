#ifndef RISKRANK_METRICS_HPP
#define RISKRANK_METRICS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace riskrank::metrics {

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct TauTallies {
    std::uint64_t concordant = 0;  // P
    std::uint64_t discordant = 0;  // Q
    std::uint64_t tied_truth = 0;  // T: tied only in the ground truth
    std::uint64_t tied_pred = 0;   // U: tied only in the predictions
    std::uint64_t tied_both = 0;   // excluded from T and U
};

// Percent-valued evaluation summary; values are never rounded in storage.
struct EvalReport {
    double macro_f1 = 0.0;       // [0, 100]
    double spearman_rho = 0.0;   // [-100, 100]
    double kendall_tau_b = 0.0;  // [-100, 100]
    std::array<ClassScores, 3> per_class{};
    TauTallies tallies{};
    std::size_t n = 0;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

// Macro-averaged F1 over the three bins, in percent. Classes with zero
// precision+recall contribute zero.
double macro_f1(const std::vector<int>& predicted_bins, const std::vector<int>& true_bins);

std::array<ClassScores, 3> per_class_scores(const std::vector<int>& predicted_bins,
                                            const std::vector<int>& true_bins);

// Midrank Spearman correlation in percent: average ranks on both sides, then
// the product-moment correlation of the ranks.
double spearman_rho(const std::vector<int>& true_bins, const std::vector<double>& predicted_scores);

double kendall_tau_b(const std::vector<int>& true_bins, const std::vector<double>& predicted_scores);
TauTallies kendall_tallies(const std::vector<int>& true_bins,
                           const std::vector<double>& predicted_scores);

// d = mean(a - b) / sd(a - b) with the n-1 denominator; positive means a
// outperforms b.
double paired_cohens_d(const std::vector<double>& metric_a, const std::vector<double>& metric_b);

// Rank-cut discretization of predicted scores into bins 0/1/2 using the same
// floor(0.3 n) / floor(0.7 n) rule as the label pipeline.
std::vector<int> discretize_scores(const std::vector<double>& scores);

// Full evaluation of predicted scores against true bins.
EvalReport evaluate(const std::vector<double>& predicted_scores, const std::vector<int>& true_bins);

} // namespace riskrank::metrics

#endif
