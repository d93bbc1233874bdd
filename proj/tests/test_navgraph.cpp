#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "itw/io.hpp"
#include "itw/navgraph.hpp"
#include "itw/rng.hpp"

#include "helpers.hpp"

using itw::NavGraph;
using itw::Trajectory;

namespace {

// Oracle: minimum over all simple paths, found by exhaustive enumeration.
double brute_force_geodesic(const NavGraph& g, const std::string& from, const std::string& to) {
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::string> stack = {from};
    std::set<std::string> seen = {from};
    std::function<void(double)> walk = [&](double so_far) {
        if (so_far >= best) return;
        if (stack.back() == to) {
            best = so_far;
            return;
        }
        for (const auto& n : g.neighbors(stack.back())) {
            if (seen.count(n)) continue;
            seen.insert(n);
            stack.push_back(n);
            walk(so_far + g.edge_length(stack[stack.size() - 2], n));
            stack.pop_back();
            seen.erase(n);
        }
    };
    walk(0.0);
    return best;
}

}  // namespace

TEST_CASE("parses a minimal two-node graph") {
    const auto j = nlohmann::json::parse(
        R"({"scan":"s","nodes":{"A":{"pos":[0,0,0]},"B":{"pos":[1,0,0]}},"edges":[["A","B"]]})");
    const NavGraph g = itw::parse_graph(j);
    CHECK(g.node_count() == 2);
    CHECK(g.edge_count() == 1);
    CHECK(g.has_edge("A", "B"));
    CHECK(g.has_edge("B", "A"));
    CHECK(g.edge_length("A", "B") == doctest::Approx(1.0));
}

TEST_CASE("rejects a dangling edge endpoint by name") {
    const auto j = nlohmann::json::parse(
        R"({"nodes":{"A":{"pos":[0,0,0]}},"edges":[["A","C"]]})");
    CHECK_THROWS_WITH_AS(itw::parse_graph(j), "dangling endpoint C", itw::ValidationError);
}

TEST_CASE("rejects a self-loop by name") {
    const auto j = nlohmann::json::parse(
        R"({"nodes":{"A":{"pos":[0,0,0]}},"edges":[["A","A"]]})");
    CHECK_THROWS_WITH_AS(itw::parse_graph(j), "self-loop edge at A", itw::ValidationError);
}

TEST_CASE("square fixture has 4 nodes and 4 edges") {
    const NavGraph g = itwtest::square_graph();
    CHECK(g.node_count() == 4);
    CHECK(g.edge_count() == 4);
    CHECK(g.shortest_path_length("A", "C") == doctest::Approx(8.0));
}

TEST_CASE("geodesic matches exhaustive simple-path enumeration") {
    const NavGraph grid = itwtest::grid_graph(4, 4, 2.0);
    std::vector<std::string> ids;
    for (const auto& [id, p] : grid.nodes()) ids.push_back(id);
    itw::Rng rng(7);
    for (int k = 0; k < 50; ++k) {
        const auto& a = ids[rng.uniform_index(ids.size())];
        const auto& b = ids[rng.uniform_index(ids.size())];
        CHECK(grid.shortest_path_length(a, b) ==
              doctest::Approx(brute_force_geodesic(grid, a, b)).epsilon(1e-12));
    }
}

TEST_CASE("disconnected nodes are infinitely far apart") {
    const NavGraph g("s", {{"A", {0, 0, 0}}, {"B", {1, 0, 0}}, {"C", {9, 9, 0}}}, {{"A", "B"}});
    CHECK(std::isinf(g.shortest_path_length("A", "C")));
    CHECK(g.shortest_path_length("A", "A") == 0.0);
}

TEST_CASE("geodesic is symmetric and satisfies the triangle inequality") {
    const NavGraph grid = itwtest::grid_graph(5, 5, 1.5);
    std::vector<std::string> ids;
    for (const auto& [id, p] : grid.nodes()) ids.push_back(id);
    itw::Rng rng(11);
    for (int k = 0; k < 200; ++k) {
        const auto& a = ids[rng.uniform_index(ids.size())];
        const auto& b = ids[rng.uniform_index(ids.size())];
        const auto& c = ids[rng.uniform_index(ids.size())];
        const double ab = grid.shortest_path_length(a, b);
        CHECK(ab == doctest::Approx(grid.shortest_path_length(b, a)).epsilon(1e-12));
        CHECK(ab <= grid.shortest_path_length(a, c) + grid.shortest_path_length(c, b) + 1e-9);
    }
}

TEST_CASE("heading is clockwise from +y and pitch is up-positive") {
    const NavGraph g("s",
                     {{"O", {0, 0, 0}},
                      {"N", {0, 1, 0}},
                      {"E", {1, 0, 0}},
                      {"S", {0, -1, 0}},
                      {"W", {-1, 0, 0}},
                      {"U", {0, 1, 1}}},
                     {});
    CHECK(g.direction_between("O", "N").heading == doctest::Approx(0.0));
    CHECK(g.direction_between("O", "E").heading == doctest::Approx(itw::kPi / 2));
    CHECK(g.direction_between("O", "S").heading == doctest::Approx(itw::kPi));
    CHECK(g.direction_between("O", "W").heading == doctest::Approx(3 * itw::kPi / 2));
    CHECK(g.direction_between("O", "U").pitch == doctest::Approx(itw::kPi / 4));
    CHECK(g.direction_between("O", "U").distance == doctest::Approx(std::sqrt(2.0)));

    SUBCASE("relative heading wraps to (-pi, pi]") {
        const auto d = g.direction_between("O", "W", itw::kPi / 2);
        CHECK(d.relative == doctest::Approx(itw::kPi));
    }

    SUBCASE("coincident nodes are rejected") {
        const NavGraph h("s", {{"A", {0, 0, 0}}, {"B", {0, 0, 0}}}, {});
        CHECK_THROWS_AS(h.direction_between("A", "B"), itw::ValidationError);
    }
}

TEST_CASE("wrap_angle stays in its contracted ranges") {
    itw::Rng rng(3);
    for (int k = 0; k < 1000; ++k) {
        const double a = rng.uniform_real(-50.0, 50.0);
        const double w = itw::wrap_angle(a);
        CHECK(w > -itw::kPi - 1e-12);
        CHECK(w <= itw::kPi + 1e-12);
        CHECK(std::abs(std::sin(w) - std::sin(a)) < 1e-9);
        const double w2 = itw::wrap_angle_2pi(a);
        CHECK(w2 >= 0.0);
        CHECK(w2 < 2 * itw::kPi);
    }
}

TEST_CASE("trajectory validation reports each problem") {
    const NavGraph g = itwtest::square_graph();
    Trajectory ok{"t", "square", {"A", "B", "C"}, 0.0};
    CHECK(g.validate_trajectory(ok).ok());

    Trajectory bad{"t", "square", {"A", "C"}, 0.0};  // diagonal: no edge
    CHECK_FALSE(g.validate_trajectory(bad).ok());

    Trajectory unknown{"t", "square", {"A", "Z"}, 0.0};
    const auto report = g.validate_trajectory(unknown);
    REQUIRE_FALSE(report.ok());
    CHECK(report.problems[0] == "unknown node Z");

    Trajectory repeat{"t", "square", {"A", "A"}, 0.0};
    CHECK_FALSE(g.validate_trajectory(repeat).ok());

    Trajectory too_short{"t", "square", {"A"}, 0.0};
    CHECK_FALSE(g.validate_trajectory(too_short).ok());
}

TEST_CASE("path_length sums the edge lengths") {
    const NavGraph g = itwtest::square_graph(4.0);
    Trajectory t{"t", "square", {"A", "B", "C"}, 0.0};
    CHECK(g.path_length(t) == doctest::Approx(8.0));
}

TEST_CASE("trajectory JSON round-trips") {
    Trajectory t{"t1", "sq", {"A", "B"}, 1.25};
    const Trajectory back = itw::trajectory_from_json(itw::trajectory_to_json(t));
    CHECK(back.id == t.id);
    CHECK(back.scan == t.scan);
    CHECK(back.nodes == t.nodes);
    CHECK(back.initial_heading == t.initial_heading);
}
