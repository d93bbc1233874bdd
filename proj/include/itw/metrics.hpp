#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "itw/errors.hpp"
#include "itw/navgraph.hpp"

namespace itw {

struct MetricParams {
    double success_threshold = 3.0;  // meters
};

struct PathScore {
    double ne = 0.0;
    int success = 0;
    double spl = 0.0;
    double ndtw = 0.0;
    double sdtw = 0.0;
};

// Geodesic distance between the endpoints of the taken and reference paths.
inline double navigation_error(const NavGraph& g, const Trajectory& taken,
                               const Trajectory& ref) {
    return g.shortest_path_length(taken.nodes.back(), ref.nodes.back());
}

inline int success(const NavGraph& g, const Trajectory& taken, const Trajectory& ref,
                   const MetricParams& params = {}) {
    return navigation_error(g, taken, ref) < params.success_threshold ? 1 : 0;
}

// Success weighted by inverse path length: S * l / max(l, p).
inline double spl(const NavGraph& g, const Trajectory& taken, const Trajectory& ref,
                  const MetricParams& params = {}) {
    const int s = success(g, taken, ref, params);
    if (s == 0) return 0.0;
    const double l = g.shortest_path_length(ref.nodes.front(), ref.nodes.back());
    const double p = g.path_length(taken);
    if (l == 0.0 && p == 0.0) return 1.0;
    return l / std::max(l, p);
}

// Minimum-cost monotone alignment with Euclidean pairwise cost.
inline double dtw(const std::vector<Position>& a, const std::vector<Position>& b) {
    if (a.empty() || b.empty()) throw ValidationError("dtw: empty sequence");
    const std::size_t n = a.size(), m = b.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = inf;
        for (std::size_t j = 1; j <= m; ++j) {
            const double cost = euclidean(a[i - 1], b[j - 1]);
            cur[j] = cost + std::min({prev[j], cur[j - 1], prev[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

inline double ndtw(const std::vector<Position>& taken, const std::vector<Position>& ref,
                   const MetricParams& params = {}) {
    return std::exp(-dtw(taken, ref) /
                    (static_cast<double>(ref.size()) * params.success_threshold));
}

inline std::vector<Position> trajectory_positions(const NavGraph& g, const Trajectory& t) {
    std::vector<Position> out;
    out.reserve(t.nodes.size());
    for (const auto& n : t.nodes) out.push_back(g.position(n));
    return out;
}

inline PathScore score_path(const NavGraph& g, const Trajectory& taken, const Trajectory& ref,
                            const MetricParams& params = {}) {
    PathScore score;
    score.ne = navigation_error(g, taken, ref);
    score.success = score.ne < params.success_threshold ? 1 : 0;
    score.spl = spl(g, taken, ref, params);
    score.ndtw = ndtw(trajectory_positions(g, taken), trajectory_positions(g, ref), params);
    score.sdtw = score.success * score.ndtw;
    return score;
}

// --- sentence BLEU-4 --------------------------------------------------------

namespace detail {

inline std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& tokens,
                                                            std::size_t n) {
    std::map<std::vector<std::string>, int> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)]++;
    }
    return counts;
}

}  // namespace detail

// Geometric mean of clipped modified n-gram precisions (n = 1..4, uniform
// weights) times the brevity penalty. Any zero precision yields 0.
inline double bleu4(const std::vector<std::string>& candidate,
                    const std::vector<std::vector<std::string>>& references) {
    if (candidate.empty()) throw ValidationError("bleu4: empty candidate");
    if (references.empty()) throw ValidationError("bleu4: no references");

    double log_precision_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto cand = detail::ngram_counts(candidate, n);
        std::map<std::vector<std::string>, int> max_ref;
        for (const auto& ref : references) {
            for (const auto& [gram, count] : detail::ngram_counts(ref, n)) {
                max_ref[gram] = std::max(max_ref[gram], count);
            }
        }
        long long clipped = 0, total = 0;
        for (const auto& [gram, count] : cand) {
            total += count;
            auto it = max_ref.find(gram);
            if (it != max_ref.end()) clipped += std::min(count, it->second);
        }
        if (total == 0 || clipped == 0) return 0.0;
        log_precision_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
    }

    // Closest reference length; ties go to the shorter reference.
    const long long c = static_cast<long long>(candidate.size());
    long long r = static_cast<long long>(references[0].size());
    for (const auto& ref : references) {
        const long long len = static_cast<long long>(ref.size());
        if (std::llabs(len - c) < std::llabs(r - c) || (std::llabs(len - c) == std::llabs(r - c) && len < r)) {
            r = len;
        }
    }
    const double brevity = std::exp(std::min(0.0, 1.0 - static_cast<double>(r) / c));
    return brevity * std::exp(log_precision_sum / 4.0);
}

// Accepts a paraphrase iff its BLEU-4 against the original lies in the closed
// interval [0.25, 0.7].
inline bool paraphrase_filter(const std::vector<std::string>& original,
                              const std::vector<std::string>& paraphrase) {
    const double score = bleu4(paraphrase, {original});
    return score >= 0.25 && score <= 0.7;
}

}  // namespace itw
