#ifndef RISKRANK_RISKMEASURES_HPP
#define RISKRANK_RISKMEASURES_HPP

#include <string>
#include <vector>

namespace riskrank::riskmeasures {

// Per-company daily return panel aligned with the risk-free rate and the
// three Fama-French factor series. All series share the same length and
// dates are strictly increasing.
struct ReturnPanel {
    std::string company_id;
    std::vector<std::string> dates;
    std::vector<double> returns;
    std::vector<double> risk_free;
    std::vector<double> mkt_rf;
    std::vector<double> smb;
    std::vector<double> hml;

    std::size_t size() const { return returns.size(); }
    void validate() const;
};

// Ordinary-least-squares fit of excess returns on [1, MKT_RF, SMB, HML].
struct FF3MFit {
    double alpha = 0.0;
    double beta_mkt = 0.0;
    double beta_smb = 0.0;
    double beta_hml = 0.0;
    std::vector<double> residuals;
    std::size_t n = 0;
};

// The four residual risk statistics for one company-year.
struct RiskProfile {
    double sigma = 0.0;
    double skew = 0.0;
    double kurt = 0.0;
    double sortino = 0.0;
    double downside_sigma = 0.0;
    bool sortino_defined = false;
};

enum class RiskMeasure { Std, Skew, Kurt, Sortino };

const char* to_string(RiskMeasure m);
RiskMeasure risk_measure_from_string(const std::string& name);

struct RiskLabel {
    RiskMeasure measure = RiskMeasure::Std;
    int bin = 0; // ordinal in {0,1,2}
};

std::vector<double> compute_excess_returns(const std::vector<double>& returns,
                                           const std::vector<double>& risk_free);

// OLS via Householder QR; requires n >= 60 observations and a full-rank
// design matrix. Residuals come out orthogonal to every regressor column.
FF3MFit fit_ff3m(const ReturnPanel& panel);

// sqrt((1/n) * sum eps^2), no re-centering: OLS residuals are mean-zero.
double residual_std(const std::vector<double>& residuals);

// Adjusted Fisher-Pearson skewness G1 = g1 * sqrt(n(n-1)) / (n-2).
double residual_skewness(const std::vector<double>& residuals);

// k-statistic excess kurtosis G2 = ((n+1)*g2 + 6) * (n-1) / ((n-2)(n-3)).
double residual_kurtosis(const std::vector<double>& residuals);

// mean(eps) / sqrt((1/n) * sum min(eps,0)^2), MAR fixed at 0.
double sortino_ratio(const std::vector<double>& residuals);

double downside_deviation(const std::vector<double>& residuals);

// Computes all four statistics in one pass over the fit. When no residual is
// negative the Sortino ratio is undefined (sortino_defined = false).
RiskProfile risk_profile(const FF3MFit& fit);

// Rank-cut binning: items sorted ascending by value (stable on input index),
// first floor(c1*n) labeled 0, up to floor(c2*n) labeled 1, remainder 2.
// Labels are returned in the original input order.
std::vector<int> bin_by_percentile(const std::vector<double>& values,
                                   double c1 = 0.30, double c2 = 0.70);

struct Split {
    std::vector<int> train_years;
    int test_year = 0;
};

// Rolling-origin splits: each test year is preceded by `window` training
// years. Years must be contiguous with at least window+1 entries.
std::vector<Split> rolling_origin_splits(const std::vector<int>& years, int window = 5);

} // namespace riskrank::riskmeasures

#endif
