#include "riskrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "riskrank/errors.hpp"
#include "riskrank/riskmeasures.hpp"

namespace riskrank::metrics {

namespace {

void check_bins(const std::vector<int>& bins) {
    for (int b : bins) {
        if (b < 0 || b > 2) throw Error(ErrorKind::InputShapeError, "bin label out of range");
    }
}

// Average (mid) ranks, 1-based.
template <typename T>
std::vector<double> midranks(const std::vector<T>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace

std::array<ClassScores, 3> per_class_scores(const std::vector<int>& predicted_bins,
                                            const std::vector<int>& true_bins) {
    if (predicted_bins.size() != true_bins.size()) {
        throw Error(ErrorKind::InputShapeError, "prediction and truth lengths differ");
    }
    check_bins(predicted_bins);
    check_bins(true_bins);

    std::array<std::array<std::uint64_t, 3>, 3> confusion{}; // [true][pred]
    for (std::size_t i = 0; i < true_bins.size(); ++i) {
        ++confusion[static_cast<std::size_t>(true_bins[i])][static_cast<std::size_t>(predicted_bins[i])];
    }

    std::array<ClassScores, 3> scores{};
    for (std::size_t c = 0; c < 3; ++c) {
        std::uint64_t tp = confusion[c][c];
        std::uint64_t fp = 0;
        std::uint64_t fn = 0;
        for (std::size_t o = 0; o < 3; ++o) {
            if (o == c) continue;
            fp += confusion[o][c];
            fn += confusion[c][o];
        }
        ClassScores& s = scores[c];
        s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                            : 0.0;
    }
    return scores;
}

double macro_f1(const std::vector<int>& predicted_bins, const std::vector<int>& true_bins) {
    const auto scores = per_class_scores(predicted_bins, true_bins);
    return 100.0 * (scores[0].f1 + scores[1].f1 + scores[2].f1) / 3.0;
}

double spearman_rho(const std::vector<int>& true_bins, const std::vector<double>& predicted_scores) {
    const std::size_t n = true_bins.size();
    if (n != predicted_scores.size()) {
        throw Error(ErrorKind::InputShapeError, "truth and score lengths differ");
    }
    if (n < 2) throw Error(ErrorKind::InputShapeError, "need at least two observations");
    check_bins(true_bins);

    const std::vector<double> rt = midranks(true_bins);
    const std::vector<double> rp = midranks(predicted_scores);

    const double mt = std::accumulate(rt.begin(), rt.end(), 0.0) / static_cast<double>(n);
    const double mp = std::accumulate(rp.begin(), rp.end(), 0.0) / static_cast<double>(n);
    double cov = 0.0, vt = 0.0, vp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rt[i] - mt;
        const double b = rp[i] - mp;
        cov += a * b;
        vt += a * a;
        vp += b * b;
    }
    if (vt <= 0.0 || vp <= 0.0) {
        throw Error(ErrorKind::DegenerateRanking, "zero rank variance");
    }
    return 100.0 * cov / std::sqrt(vt * vp);
}

TauTallies kendall_tallies(const std::vector<int>& true_bins,
                           const std::vector<double>& predicted_scores) {
    const std::size_t n = true_bins.size();
    if (n != predicted_scores.size()) {
        throw Error(ErrorKind::InputShapeError, "truth and score lengths differ");
    }
    if (n < 2) throw Error(ErrorKind::InputShapeError, "need at least two observations");
    check_bins(true_bins);

    TauTallies t;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const int dt = true_bins[i] - true_bins[j];
            const double dp = predicted_scores[i] - predicted_scores[j];
            if (dt == 0 && dp == 0.0) {
                ++t.tied_both;
            } else if (dt == 0) {
                ++t.tied_truth;
            } else if (dp == 0.0) {
                ++t.tied_pred;
            } else if ((dt > 0) == (dp > 0.0)) {
                ++t.concordant;
            } else {
                ++t.discordant;
            }
        }
    }
    return t;
}

double kendall_tau_b(const std::vector<int>& true_bins, const std::vector<double>& predicted_scores) {
    const TauTallies t = kendall_tallies(true_bins, predicted_scores);
    const double pq = static_cast<double>(t.concordant) + static_cast<double>(t.discordant);
    const double denom = std::sqrt((pq + static_cast<double>(t.tied_truth)) *
                                   (pq + static_cast<double>(t.tied_pred)));
    if (denom <= 0.0) throw Error(ErrorKind::DegenerateRanking, "tau-b denominator is zero");
    return 100.0 * (static_cast<double>(t.concordant) - static_cast<double>(t.discordant)) / denom;
}

double paired_cohens_d(const std::vector<double>& metric_a, const std::vector<double>& metric_b) {
    const std::size_t n = metric_a.size();
    if (n != metric_b.size() || n < 2) {
        throw Error(ErrorKind::InputShapeError, "paired samples need equal lengths n >= 2");
    }
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = metric_a[i] - metric_b[i];
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double d : diff) ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd <= 0.0) throw Error(ErrorKind::DegenerateDifferences, "paired differences have zero variance");
    return mean / sd;
}

std::vector<int> discretize_scores(const std::vector<double>& scores) {
    return riskmeasures::bin_by_percentile(scores, 0.30, 0.70);
}

EvalReport evaluate(const std::vector<double>& predicted_scores, const std::vector<int>& true_bins) {
    EvalReport report;
    report.n = predicted_scores.size();
    const std::vector<int> predicted_bins = discretize_scores(predicted_scores);
    report.per_class = per_class_scores(predicted_bins, true_bins);
    report.macro_f1 = macro_f1(predicted_bins, true_bins);
    report.spearman_rho = spearman_rho(true_bins, predicted_scores);
    report.tallies = kendall_tallies(true_bins, predicted_scores);
    report.kendall_tau_b = kendall_tau_b(true_bins, predicted_scores);
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["n"] = n;
    j["macro_f1"] = macro_f1;
    j["spearman_rho"] = spearman_rho;
    j["kendall_tau_b"] = kendall_tau_b;
    for (std::size_t c = 0; c < 3; ++c) {
        nlohmann::json jc;
        jc["precision"] = per_class[c].precision;
        jc["recall"] = per_class[c].recall;
        jc["f1"] = per_class[c].f1;
        j["per_class"].push_back(jc);
    }
    j["tallies"] = {
        {"concordant", tallies.concordant}, {"discordant", tallies.discordant},
        {"tied_truth", tallies.tied_truth}, {"tied_pred", tallies.tied_pred},
        {"tied_both", tallies.tied_both},
    };
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    EvalReport r;
    r.n = j.at("n").get<std::size_t>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.spearman_rho = j.at("spearman_rho").get<double>();
    r.kendall_tau_b = j.at("kendall_tau_b").get<double>();
    for (std::size_t c = 0; c < 3; ++c) {
        const auto& jc = j.at("per_class").at(c);
        r.per_class[c].precision = jc.at("precision").get<double>();
        r.per_class[c].recall = jc.at("recall").get<double>();
        r.per_class[c].f1 = jc.at("f1").get<double>();
    }
    const auto& jt = j.at("tallies");
    r.tallies.concordant = jt.at("concordant").get<std::uint64_t>();
    r.tallies.discordant = jt.at("discordant").get<std::uint64_t>();
    r.tallies.tied_truth = jt.at("tied_truth").get<std::uint64_t>();
    r.tallies.tied_pred = jt.at("tied_pred").get<std::uint64_t>();
    r.tallies.tied_both = jt.at("tied_both").get<std::uint64_t>();
    return r;
}

} // namespace riskrank::metrics
