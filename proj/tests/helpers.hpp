#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "itw/crafty.hpp"
#include "itw/navgraph.hpp"
#include "itw/rng.hpp"

namespace itwtest {

// 4-node square, side length `side`, corners A(0,0) B(0,s) C(s,s) D(s,0).
inline itw::NavGraph square_graph(double side = 4.0) {
    std::map<std::string, itw::Position> nodes = {{"A", {0, 0, 0}},
                                                  {"B", {0, side, 0}},
                                                  {"C", {side, side, 0}},
                                                  {"D", {side, 0, 0}}};
    return itw::NavGraph("square", std::move(nodes),
                         {{"A", "B"}, {"B", "C"}, {"C", "D"}, {"D", "A"}});
}

inline std::string grid_id(std::size_t r, std::size_t c) {
    return "n" + std::to_string(r) + "_" + std::to_string(c);
}

// rows x cols 4-connected grid with the given spacing.
inline itw::NavGraph grid_graph(std::size_t rows, std::size_t cols, double spacing = 2.0) {
    std::map<std::string, itw::Position> nodes;
    std::vector<std::pair<std::string, std::string>> edges;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            nodes.emplace(grid_id(r, c), itw::Position{static_cast<double>(c) * spacing,
                                                       static_cast<double>(r) * spacing, 0.0});
            if (r + 1 < rows) edges.emplace_back(grid_id(r, c), grid_id(r + 1, c));
            if (c + 1 < cols) edges.emplace_back(grid_id(r, c), grid_id(r, c + 1));
        }
    }
    return itw::NavGraph("grid", std::move(nodes), edges);
}

// Self-avoiding random walk of the requested length (nodes), retried until it
// fits; deterministic under the rng.
inline itw::Trajectory random_walk_trajectory(const itw::NavGraph& g, std::size_t length,
                                              itw::Rng& rng, const std::string& id) {
    std::vector<std::string> all;
    for (const auto& [node, pos] : g.nodes()) all.push_back(node);
    for (;;) {
        std::vector<std::string> walk = {all[rng.uniform_index(all.size())]};
        std::set<std::string> seen(walk.begin(), walk.end());
        while (walk.size() < length) {
            std::vector<std::string> options;
            for (const auto& n : g.neighbors(walk.back())) {
                if (!seen.count(n)) options.push_back(n);
            }
            if (options.empty()) break;
            const auto& next = options[rng.uniform_index(options.size())];
            walk.push_back(next);
            seen.insert(next);
        }
        if (walk.size() < length) continue;
        itw::Trajectory t;
        t.id = id;
        t.scan = g.scan();
        t.nodes = std::move(walk);
        t.initial_heading = g.direction_between(t.nodes[0], t.nodes[1]).heading;
        return t;
    }
}

// Small environment with one object per grid corner plus a center object,
// every object visible from every panorama.
inline itw::EnvObjects corner_objects(const itw::NavGraph& g) {
    itw::EnvObjects env;
    env.scan = g.scan();
    double min_x = 1e18, max_x = -1e18, min_y = 1e18, max_y = -1e18;
    for (const auto& [id, p] : g.nodes()) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    env.objects = {{"o_table", "table", {min_x, min_y, 0.0}},
                   {"o_sofa", "sofa", {max_x, min_y, 0.0}},
                   {"o_lamp", "lamp", {min_x, max_y, 0.0}},
                   {"o_mirror", "mirror", {max_x, max_y, 0.0}},
                   {"o_plant", "plant", {(min_x + max_x) / 2.0, (min_y + max_y) / 2.0, 0.0}}};
    for (const auto& [id, p] : g.nodes()) {
        std::vector<std::string> vis;
        for (const auto& o : env.objects) vis.push_back(o.id);
        env.visibility[id] = vis;
    }
    return env;
}

}  // namespace itwtest
