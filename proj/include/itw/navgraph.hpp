#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "itw/errors.hpp"

namespace itw {

inline constexpr double kPi = std::numbers::pi;

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a > kPi) a -= 2.0 * kPi;
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

// Wraps an angle to [0, 2*pi).
inline double wrap_angle_2pi(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a < 0.0) a += 2.0 * kPi;
    return a;
}

struct Position {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline double euclidean(const Position& a, const Position& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Heading 0 points along +y and increases clockwise; pitch is up-positive.
struct DirectionTriple {
    double heading = 0.0;   // absolute, [0, 2*pi)
    double relative = 0.0;  // (-pi, pi]
    double pitch = 0.0;
    double distance = 0.0;
};

struct Trajectory {
    std::string id;
    std::string scan;
    std::vector<std::string> nodes;
    double initial_heading = 0.0;
};

struct ValidationReport {
    std::vector<std::string> problems;
    bool ok() const { return problems.empty(); }
};

// Undirected graph of panoramic viewpoints. Immutable after construction.
class NavGraph {
public:
    NavGraph() = default;

    NavGraph(std::string scan, std::map<std::string, Position> nodes,
             const std::vector<std::pair<std::string, std::string>>& edges)
        : scan_(std::move(scan)), nodes_(std::move(nodes)) {
        for (const auto& [a, b] : edges) add_edge(a, b);
    }

    const std::string& scan() const { return scan_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t edge_count() const { return edges_.size(); }

    bool has_node(const std::string& id) const { return nodes_.count(id) > 0; }

    const Position& position(const std::string& id) const {
        auto it = nodes_.find(id);
        if (it == nodes_.end()) throw ValidationError("unknown node-id: " + id);
        return it->second;
    }

    bool has_edge(const std::string& a, const std::string& b) const {
        return edges_.count(canonical(a, b)) > 0;
    }

    // Neighbors in lexicographic order.
    const std::vector<std::string>& neighbors(const std::string& id) const {
        position(id);  // validates
        static const std::vector<std::string> empty;
        auto it = adjacency_.find(id);
        return it == adjacency_.end() ? empty : it->second;
    }

    const std::map<std::string, Position>& nodes() const { return nodes_; }

    // Geodesic distance with per-edge Euclidean weights. Returns +infinity
    // when disconnected. Dijkstra with lexicographic tie-breaking.
    double shortest_path_length(const std::string& a, const std::string& b) const {
        position(a);
        position(b);
        if (a == b) return 0.0;
        std::map<std::string, double> dist;
        using Item = std::pair<double, std::string>;
        std::priority_queue<Item, std::vector<Item>, std::greater<Item>> frontier;
        dist[a] = 0.0;
        frontier.emplace(0.0, a);
        while (!frontier.empty()) {
            auto [d, u] = frontier.top();
            frontier.pop();
            if (d > dist[u]) continue;
            if (u == b) return d;
            for (const auto& v : neighbors(u)) {
                const double nd = d + euclidean(position(u), position(v));
                auto it = dist.find(v);
                if (it == dist.end() || nd < it->second) {
                    dist[v] = nd;
                    frontier.emplace(nd, v);
                }
            }
        }
        return std::numeric_limits<double>::infinity();
    }

    double edge_length(const std::string& a, const std::string& b) const {
        return euclidean(position(a), position(b));
    }

    // Sum of per-edge Euclidean lengths along a trajectory.
    double path_length(const Trajectory& t) const {
        double total = 0.0;
        for (std::size_t i = 0; i + 1 < t.nodes.size(); ++i) {
            total += edge_length(t.nodes[i], t.nodes[i + 1]);
        }
        return total;
    }

    DirectionTriple direction_between(const std::string& from, const std::string& to,
                                      double ref_heading = 0.0) const {
        const Position& p = position(from);
        const Position& q = position(to);
        const double dx = q.x - p.x, dy = q.y - p.y, dz = q.z - p.z;
        const double horiz = std::sqrt(dx * dx + dy * dy);
        const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (dist == 0.0) throw ValidationError("coincident nodes: " + from + ", " + to);
        DirectionTriple d;
        d.heading = horiz == 0.0 ? 0.0 : wrap_angle_2pi(std::atan2(dx, dy));
        d.relative = wrap_angle(d.heading - ref_heading);
        d.pitch = std::atan2(dz, horiz);
        d.distance = dist;
        return d;
    }

    ValidationReport validate_trajectory(const Trajectory& t) const {
        ValidationReport report;
        if (t.nodes.size() < 2) report.problems.push_back("length < 2");
        for (const auto& n : t.nodes) {
            if (!has_node(n)) report.problems.push_back("unknown node " + n);
        }
        for (std::size_t i = 0; i + 1 < t.nodes.size(); ++i) {
            const auto& a = t.nodes[i];
            const auto& b = t.nodes[i + 1];
            if (a == b) {
                report.problems.push_back("consecutive repeat of " + a + " at index " +
                                          std::to_string(i));
            } else if (has_node(a) && has_node(b) && !has_edge(a, b)) {
                report.problems.push_back("no edge between " + a + " and " + b);
            }
        }
        return report;
    }

private:
    static std::pair<std::string, std::string> canonical(const std::string& a,
                                                         const std::string& b) {
        return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
    }

    void add_edge(const std::string& a, const std::string& b) {
        if (a == b) throw ValidationError("self-loop edge at " + a);
        if (!has_node(a)) throw ValidationError("dangling endpoint " + a);
        if (!has_node(b)) throw ValidationError("dangling endpoint " + b);
        auto e = canonical(a, b);
        if (!edges_.insert(e).second) return;
        insert_sorted(adjacency_[a], b);
        insert_sorted(adjacency_[b], a);
    }

    static void insert_sorted(std::vector<std::string>& v, const std::string& s) {
        v.insert(std::lower_bound(v.begin(), v.end(), s), s);
    }

    std::string scan_;
    std::map<std::string, Position> nodes_;
    std::set<std::pair<std::string, std::string>> edges_;
    std::map<std::string, std::vector<std::string>> adjacency_;
};

inline NavGraph parse_graph(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("graph file: expected a JSON object");
    std::map<std::string, Position> nodes;
    for (const auto& [id, spec] : j.at("nodes").items()) {
        const auto& pos = spec.at("pos");
        if (!pos.is_array() || pos.size() != 3) {
            throw ValidationError("node " + id + ": pos must be [x,y,z]");
        }
        Position p{pos[0].get<double>(), pos[1].get<double>(), pos[2].get<double>()};
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
            throw ValidationError("node " + id + ": non-finite coordinate");
        }
        nodes.emplace(id, p);
    }
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& e : j.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw ValidationError("edge must be a pair");
        edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    return NavGraph(j.value("scan", std::string{}), std::move(nodes), edges);
}

inline NavGraph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open graph file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("graph parse error in " + path + ": " + e.what());
    }
    try {
        return parse_graph(j);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("graph schema error in " + path + ": " + e.what());
    }
}

}  // namespace itw
