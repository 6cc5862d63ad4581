#include "riskrank/riskmeasures.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "riskrank/errors.hpp"

namespace riskrank::riskmeasures {

const char* to_string(RiskMeasure m) {
    switch (m) {
        case RiskMeasure::Std: return "std";
        case RiskMeasure::Skew: return "skew";
        case RiskMeasure::Kurt: return "kurt";
        case RiskMeasure::Sortino: return "sortino";
    }
    return "std";
}

RiskMeasure risk_measure_from_string(const std::string& name) {
    if (name == "std") return RiskMeasure::Std;
    if (name == "skew") return RiskMeasure::Skew;
    if (name == "kurt") return RiskMeasure::Kurt;
    if (name == "sortino") return RiskMeasure::Sortino;
    throw Error(ErrorKind::ConfigError, "unknown risk measure '" + name + "'");
}

void ReturnPanel::validate() const {
    const std::size_t n = returns.size();
    if (risk_free.size() != n || mkt_rf.size() != n || smb.size() != n || hml.size() != n ||
        (!dates.empty() && dates.size() != n)) {
        throw Error(ErrorKind::InputShapeError,
                    "panel series for " + company_id + " have mismatched lengths");
    }
    for (std::size_t i = 1; i < dates.size(); ++i) {
        if (!(dates[i - 1] < dates[i])) {
            throw Error(ErrorKind::InputShapeError,
                        "panel dates for " + company_id + " are not strictly increasing");
        }
    }
}

std::vector<double> compute_excess_returns(const std::vector<double>& returns,
                                           const std::vector<double>& risk_free) {
    if (returns.empty() || returns.size() != risk_free.size()) {
        throw Error(ErrorKind::InputShapeError, "returns and risk-free series must have equal nonzero length");
    }
    std::vector<double> excess(returns.size());
    for (std::size_t i = 0; i < returns.size(); ++i) excess[i] = returns[i] - risk_free[i];
    return excess;
}

FF3MFit fit_ff3m(const ReturnPanel& panel) {
    panel.validate();
    const std::size_t n = panel.size();
    if (n < 60) {
        throw Error(ErrorKind::InsufficientObservations,
                    "need at least 60 observations, got " + std::to_string(n));
    }

    std::vector<double> excess = compute_excess_returns(panel.returns, panel.risk_free);

    Eigen::MatrixXd design(static_cast<Eigen::Index>(n), 4);
    Eigen::VectorXd response(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        design(r, 0) = 1.0;
        design(r, 1) = panel.mkt_rf[i];
        design(r, 2) = panel.smb[i];
        design(r, 3) = panel.hml[i];
        response(r) = excess[i];
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < 4) {
        throw Error(ErrorKind::SingularDesign, "factor design matrix is rank deficient");
    }
    Eigen::VectorXd coef = qr.solve(response);
    Eigen::VectorXd resid = response - design * coef;

    FF3MFit fit;
    fit.alpha = coef(0);
    fit.beta_mkt = coef(1);
    fit.beta_smb = coef(2);
    fit.beta_hml = coef(3);
    fit.n = n;
    fit.residuals.assign(resid.data(), resid.data() + resid.size());
    return fit;
}

double residual_std(const std::vector<double>& residuals) {
    if (residuals.empty()) throw Error(ErrorKind::InputShapeError, "empty residual series");
    double acc = 0.0;
    for (double e : residuals) acc += e * e;
    return std::sqrt(acc / static_cast<double>(residuals.size()));
}

namespace {

struct CentralMoments {
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;
};

CentralMoments central_moments(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    CentralMoments m;
    for (double v : x) {
        const double d = v - mean;
        const double d2 = d * d;
        m.m2 += d2;
        m.m3 += d2 * d;
        m.m4 += d2 * d2;
    }
    m.m2 /= n;
    m.m3 /= n;
    m.m4 /= n;
    return m;
}

} // namespace

double residual_skewness(const std::vector<double>& residuals) {
    const std::size_t n = residuals.size();
    if (n < 3) {
        throw Error(ErrorKind::InsufficientObservations,
                    "skewness needs n >= 3, got " + std::to_string(n));
    }
    const CentralMoments m = central_moments(residuals);
    if (m.m2 <= 0.0) throw Error(ErrorKind::DegenerateDistribution, "zero variance in residuals");
    const double g1 = m.m3 / std::pow(m.m2, 1.5);
    const double dn = static_cast<double>(n);
    return g1 * std::sqrt(dn * (dn - 1.0)) / (dn - 2.0);
}

double residual_kurtosis(const std::vector<double>& residuals) {
    const std::size_t n = residuals.size();
    if (n < 4) {
        throw Error(ErrorKind::InsufficientObservations,
                    "kurtosis needs n >= 4, got " + std::to_string(n));
    }
    const CentralMoments m = central_moments(residuals);
    if (m.m2 <= 0.0) throw Error(ErrorKind::DegenerateDistribution, "zero variance in residuals");
    const double g2 = m.m4 / (m.m2 * m.m2) - 3.0;
    const double dn = static_cast<double>(n);
    return ((dn + 1.0) * g2 + 6.0) * (dn - 1.0) / ((dn - 2.0) * (dn - 3.0));
}

double downside_deviation(const std::vector<double>& residuals) {
    if (residuals.empty()) throw Error(ErrorKind::InputShapeError, "empty residual series");
    double acc = 0.0;
    for (double e : residuals) {
        const double d = std::min(e, 0.0);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(residuals.size()));
}

double sortino_ratio(const std::vector<double>& residuals) {
    const double sigma_down = downside_deviation(residuals);
    if (sigma_down <= 0.0) {
        throw Error(ErrorKind::DegenerateDownside, "no negative residuals; Sortino ratio undefined");
    }
    const double mean =
        std::accumulate(residuals.begin(), residuals.end(), 0.0) / static_cast<double>(residuals.size());
    return mean / sigma_down;
}

RiskProfile risk_profile(const FF3MFit& fit) {
    RiskProfile p;
    p.sigma = residual_std(fit.residuals);
    p.skew = residual_skewness(fit.residuals);
    p.kurt = residual_kurtosis(fit.residuals);
    p.downside_sigma = downside_deviation(fit.residuals);
    if (p.downside_sigma > 0.0) {
        p.sortino = sortino_ratio(fit.residuals);
        p.sortino_defined = true;
    }
    return p;
}

std::vector<int> bin_by_percentile(const std::vector<double>& values, double c1, double c2) {
    const std::size_t n = values.size();
    if (n < 3) {
        throw Error(ErrorKind::InsufficientObservations,
                    "binning needs n >= 3, got " + std::to_string(n));
    }
    if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) {
        throw Error(ErrorKind::InputShapeError, "cutpoints must satisfy 0 < c1 < c2 < 1");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    const auto k1 = static_cast<std::size_t>(std::floor(c1 * static_cast<double>(n)));
    const auto k2 = static_cast<std::size_t>(std::floor(c2 * static_cast<double>(n)));

    std::vector<int> labels(n, 0);
    for (std::size_t rank = 0; rank < n; ++rank) {
        int bin = rank < k1 ? 0 : (rank < k2 ? 1 : 2);
        labels[order[rank]] = bin;
    }
    return labels;
}

std::vector<Split> rolling_origin_splits(const std::vector<int>& years, int window) {
    if (window < 1) throw Error(ErrorKind::InputShapeError, "window must be positive");
    std::vector<int> sorted = years;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.size() < static_cast<std::size_t>(window) + 1) {
        throw Error(ErrorKind::InsufficientObservations,
                    "need at least window+1 years, got " + std::to_string(sorted.size()));
    }
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i] != sorted[i - 1] + 1) {
            throw Error(ErrorKind::InputShapeError, "years must be contiguous");
        }
    }

    std::vector<Split> splits;
    for (std::size_t i = static_cast<std::size_t>(window); i < sorted.size(); ++i) {
        Split s;
        s.test_year = sorted[i];
        for (int y = sorted[i] - window; y < sorted[i]; ++y) s.train_years.push_back(y);
        splits.push_back(std::move(s));
    }
    return splits;
}

} // namespace riskrank::riskmeasures
