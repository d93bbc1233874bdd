#pragma once

#include <set>
#include <string>
#include <vector>

#include "itw/errors.hpp"
#include "itw/navgraph.hpp"
#include "itw/rng.hpp"

namespace itw {

enum class PathPerturbKind { RandomWalk, PathReversal, ViewpointSwap };

inline const char* to_string(PathPerturbKind k) {
    switch (k) {
        case PathPerturbKind::RandomWalk: return "random_walk";
        case PathPerturbKind::PathReversal: return "path_reversal";
        case PathPerturbKind::ViewpointSwap: return "viewpoint_swap";
    }
    return "?";
}

struct PerturbedTrajectory {
    Trajectory trajectory;
    PathPerturbKind kind;
    std::string source_id;
};

namespace detail {

inline Trajectory finish_perturbed(const NavGraph& g, const Trajectory& original,
                                   std::vector<std::string> nodes, const char* suffix) {
    Trajectory out;
    out.id = original.id + "#" + suffix;
    out.scan = original.scan;
    out.nodes = std::move(nodes);
    if (out.nodes.size() >= 2 && out.nodes[0] == original.nodes[0] &&
        out.nodes[1] == original.nodes[1]) {
        out.initial_heading = original.initial_heading;
    } else {
        out.initial_heading = g.direction_between(out.nodes[0], out.nodes[1]).heading;
    }
    return out;
}

}  // namespace detail

// Fixes the first or last two viewpoints and re-samples the rest by random
// edge traversal. Constraints: length within +-1 of the original, no node
// revisited, at least two nodes shared with the original, result differs.
inline PerturbedTrajectory random_walk(const NavGraph& g, const Trajectory& t, Rng& rng,
                                       int max_attempts = 1000) {
    if (t.nodes.size() < 4) {
        throw ValidationError("random_walk requires at least 4 viewpoints");
    }
    const std::size_t original_len = t.nodes.size();
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        const bool fix_first = rng.bernoulli(0.5);
        const std::size_t target_len = original_len - 1 + rng.uniform_index(3);

        std::vector<std::string> seed_pair;
        if (fix_first) {
            seed_pair = {t.nodes[0], t.nodes[1]};
        } else {
            seed_pair = {t.nodes[original_len - 1], t.nodes[original_len - 2]};
        }
        std::vector<std::string> walk = seed_pair;
        std::set<std::string> visited(walk.begin(), walk.end());
        bool stuck = false;
        while (walk.size() < target_len) {
            std::vector<std::string> options;
            for (const auto& n : g.neighbors(walk.back())) {
                if (!visited.count(n)) options.push_back(n);
            }
            if (options.empty()) {
                stuck = true;
                break;
            }
            const auto& pick = options[rng.uniform_index(options.size())];
            walk.push_back(pick);
            visited.insert(pick);
        }
        if (stuck) continue;
        if (!fix_first) std::reverse(walk.begin(), walk.end());
        if (walk == t.nodes) continue;

        std::set<std::string> original_nodes(t.nodes.begin(), t.nodes.end());
        std::size_t overlap = 0;
        for (const auto& n : walk) overlap += original_nodes.count(n);
        if (overlap < 2) continue;

        return {detail::finish_perturbed(g, t, std::move(walk), "random_walk"),
                PathPerturbKind::RandomWalk, t.id};
    }
    throw UnsatisfiableError("unsatisfiable perturbation: random_walk on " + t.id);
}

// Reverses the node order; the initial heading is recomputed toward the new
// second node.
inline PerturbedTrajectory path_reversal(const NavGraph& g, const Trajectory& t) {
    if (t.nodes.size() < 2) throw ValidationError("path_reversal requires >= 2 viewpoints");
    std::vector<std::string> nodes(t.nodes.rbegin(), t.nodes.rend());
    if (nodes == t.nodes) {
        throw UnsatisfiableError("unsatisfiable perturbation: palindromic path " + t.id);
    }
    Trajectory out;
    out.id = t.id + "#path_reversal";
    out.scan = t.scan;
    out.nodes = std::move(nodes);
    out.initial_heading = g.direction_between(out.nodes[0], out.nodes[1]).heading;
    return {std::move(out), PathPerturbKind::PathReversal, t.id};
}

// Replaces one interior viewpoint with a node adjacent to both of its
// neighbors, excluding the replaced node and anything already on the path.
inline PerturbedTrajectory viewpoint_swap(const NavGraph& g, const Trajectory& t, Rng& rng) {
    if (t.nodes.size() < 3) {
        throw ValidationError("viewpoint_swap requires at least 3 viewpoints");
    }
    std::set<std::string> on_path(t.nodes.begin(), t.nodes.end());
    std::vector<std::pair<std::size_t, std::vector<std::string>>> admissible;
    for (std::size_t i = 1; i + 1 < t.nodes.size(); ++i) {
        std::vector<std::string> candidates;
        for (const auto& n : g.neighbors(t.nodes[i - 1])) {
            if (on_path.count(n)) continue;
            if (g.has_edge(n, t.nodes[i + 1])) candidates.push_back(n);
        }
        if (!candidates.empty()) admissible.emplace_back(i, std::move(candidates));
    }
    if (admissible.empty()) {
        throw UnsatisfiableError("unsatisfiable perturbation: viewpoint_swap on " + t.id);
    }
    const auto& [index, candidates] = admissible[rng.uniform_index(admissible.size())];
    std::vector<std::string> nodes = t.nodes;
    nodes[index] = candidates[rng.uniform_index(candidates.size())];
    return {detail::finish_perturbed(g, t, std::move(nodes), "viewpoint_swap"),
            PathPerturbKind::ViewpointSwap, t.id};
}

// Picks one of the three perturbations uniformly, falling back to the others
// when the chosen one is unsatisfiable on this trajectory.
inline PerturbedTrajectory sample_path_negative(const NavGraph& g, const Trajectory& t,
                                                Rng& rng) {
    std::vector<PathPerturbKind> order = {PathPerturbKind::RandomWalk,
                                          PathPerturbKind::PathReversal,
                                          PathPerturbKind::ViewpointSwap};
    std::swap(order[0], order[rng.uniform_index(order.size())]);
    if (rng.bernoulli(0.5)) std::swap(order[1], order[2]);
    for (PathPerturbKind kind : order) {
        try {
            switch (kind) {
                case PathPerturbKind::RandomWalk: return random_walk(g, t, rng);
                case PathPerturbKind::PathReversal: return path_reversal(g, t);
                case PathPerturbKind::ViewpointSwap: return viewpoint_swap(g, t, rng);
            }
        } catch (const Error&) {
            // try the next kind
        }
    }
    throw UnsatisfiableError("all perturbations unsatisfiable for " + t.id);
}

}  // namespace itw
