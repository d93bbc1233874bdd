#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "itw/errors.hpp"
#include "itw/rng.hpp"

namespace itw {

struct ScoredLabel {
    std::string id;
    double score = 0.0;
    int label = 0;
};

struct PairedOutcome {
    std::string id;
    double metric_score = 0.0;
    double human_outcome = 0.0;
};

// Probability a random positive outscores a random negative, ties 1/2.
// Rank-sum (Mann-Whitney) formulation with midranks.
inline double auc(const std::vector<ScoredLabel>& data) {
    std::size_t positives = 0, negatives = 0;
    for (const auto& d : data) (d.label ? positives : negatives)++;
    if (positives == 0 || negatives == 0) {
        throw ValidationError("auc: need at least one positive and one negative");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return data[a].score < data[b].score; });
    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && data[order[j]].score == data[order[i]].score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (data[order[k]].label) positive_rank_sum += midrank;
        }
        i = j;
    }
    const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
    return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// Tie-corrected Kendall rank correlation (tau-b).
inline double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ValidationError("kendall_tau_b: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw ValidationError("kendall_tau_b: need at least 2 observations");
    long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0.0 && dy == 0.0) continue;
            if (dx == 0.0) {
                ++ties_x;
            } else if (dy == 0.0) {
                ++ties_y;
            } else if (dx * dy > 0.0) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    // n1/n2 from tied groups; equivalently pair counts of within-group ties.
    long long pairs_tied_x = 0, pairs_tied_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (x[i] == x[j]) ++pairs_tied_x;
            if (y[i] == y[j]) ++pairs_tied_y;
        }
    }
    const double denom_x = n0 - static_cast<double>(pairs_tied_x);
    const double denom_y = n0 - static_cast<double>(pairs_tied_y);
    if (denom_x == 0.0 || denom_y == 0.0) {
        throw ValidationError("kendall_tau_b: undefined for an all-tied vector");
    }
    return static_cast<double>(concordant - discordant) / std::sqrt(denom_x * denom_y);
}

struct ConfidenceInterval {
    double lo = 0.0;
    double hi = 0.0;
};

namespace detail {

inline double percentile(std::vector<double> sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

// Percentile bootstrap interval. Resample seeds are derived per index so
// results are independent of evaluation order. Degenerate resamples (where
// the statistic throws) are retried up to a cap.
inline ConfidenceInterval bootstrap_ci(
    const std::vector<PairedOutcome>& data,
    const std::function<double(const std::vector<PairedOutcome>&)>& statistic,
    int n_resamples, double level, const Rng& rng, int retry_cap = 100) {
    if (n_resamples < 1) throw ValidationError("bootstrap_ci: n_resamples >= 1 required");
    if (level <= 0.0 || level >= 1.0) throw ValidationError("bootstrap_ci: level in (0,1)");
    if (data.empty()) throw ValidationError("bootstrap_ci: empty data");

    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n_resamples));
    for (int k = 0; k < n_resamples; ++k) {
        Rng local = rng.derive(static_cast<std::uint64_t>(k));
        for (int attempt = 0;; ++attempt) {
            std::vector<PairedOutcome> resample;
            resample.reserve(data.size());
            for (std::size_t i = 0; i < data.size(); ++i) {
                resample.push_back(data[local.uniform_index(data.size())]);
            }
            try {
                values.push_back(statistic(resample));
                break;
            } catch (const Error&) {
                if (attempt + 1 >= retry_cap) throw;
            }
        }
    }
    std::sort(values.begin(), values.end());
    const double alpha = (1.0 - level) / 2.0;
    return {detail::percentile(values, alpha), detail::percentile(values, 1.0 - alpha)};
}

inline double tau_statistic(const std::vector<PairedOutcome>& data) {
    std::vector<double> x, y;
    x.reserve(data.size());
    y.reserve(data.size());
    for (const auto& d : data) {
        x.push_back(d.metric_score);
        y.push_back(d.human_outcome);
    }
    return kendall_tau_b(x, y);
}

struct CorrelationEstimate {
    double tau = 0.0;
    ConfidenceInterval ci;
};

struct SystemInstanceReport {
    CorrelationEstimate instance_level;
    CorrelationEstimate system_level;
};

// Instance-level tau over pooled pairs; system-level tau over per-system
// means. Bootstrap resamples instances (within each system at system level).
inline SystemInstanceReport system_vs_instance_correlation(
    const std::map<std::string, std::vector<PairedOutcome>>& groups, int n_resamples = 1000,
    double level = 0.90, const Rng& rng = Rng(0)) {
    if (groups.size() < 2) {
        throw ValidationError("system_vs_instance_correlation: >= 2 systems required");
    }
    std::vector<PairedOutcome> pooled;
    for (const auto& [name, rows] : groups) {
        if (rows.empty()) throw ValidationError("empty system group: " + name);
        pooled.insert(pooled.end(), rows.begin(), rows.end());
    }

    SystemInstanceReport report;
    report.instance_level.tau = tau_statistic(pooled);
    report.instance_level.ci = bootstrap_ci(pooled, tau_statistic, n_resamples, level, rng);

    auto system_means = [&](const std::function<PairedOutcome(const std::vector<PairedOutcome>&,
                                                              std::size_t, Rng&)>& pick,
                            Rng& local) {
        std::vector<PairedOutcome> means;
        for (const auto& [name, rows] : groups) {
            double sm = 0.0, so = 0.0;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const PairedOutcome row = pick(rows, i, local);
                sm += row.metric_score;
                so += row.human_outcome;
            }
            means.push_back({name, sm / static_cast<double>(rows.size()),
                             so / static_cast<double>(rows.size())});
        }
        return means;
    };

    Rng none(0);
    const auto point_means = system_means(
        [](const std::vector<PairedOutcome>& rows, std::size_t i, Rng&) { return rows[i]; }, none);
    report.system_level.tau = tau_statistic(point_means);

    std::vector<double> values;
    Rng base = rng.derive(0x5157ULL);
    for (int k = 0; k < n_resamples; ++k) {
        Rng local = base.derive(static_cast<std::uint64_t>(k));
        for (int attempt = 0;; ++attempt) {
            try {
                const auto means = system_means(
                    [](const std::vector<PairedOutcome>& rows, std::size_t, Rng& r) {
                        return rows[r.uniform_index(rows.size())];
                    },
                    local);
                values.push_back(tau_statistic(means));
                break;
            } catch (const Error&) {
                if (attempt >= 99) throw;
            }
        }
    }
    std::sort(values.begin(), values.end());
    const double alpha = (1.0 - level) / 2.0;
    report.system_level.ci = {detail::percentile(values, alpha),
                              detail::percentile(values, 1.0 - alpha)};
    return report;
}

}  // namespace itw
