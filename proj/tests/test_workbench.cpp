#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>
#include <string>
#include <vector>

#include "itw/crafty.hpp"
#include "itw/rng.hpp"
#include "itw/workbench.hpp"

#include "helpers.hpp"

using itw::CorpusPair;
using itw::Instruction;
using itw::Provenance;
using itw::ScoredLabel;
using itw::Trajectory;

namespace {

std::vector<std::pair<Instruction, Trajectory>> make_positives(const itw::NavGraph& g,
                                                               const itw::EnvObjects& env,
                                                               int n, std::uint64_t seed) {
    std::vector<std::pair<Instruction, Trajectory>> out;
    itw::Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        auto t = itwtest::random_walk_trajectory(g, 5, rng, "t" + std::to_string(i));
        auto instr = itw::generate(g, env, t, seed + static_cast<std::uint64_t>(i));
        instr.id = t.id;
        out.emplace_back(std::move(instr), std::move(t));
    }
    return out;
}

}  // namespace

TEST_CASE("corpus assembly keeps the manifest counts consistent") {
    const auto g = itwtest::grid_graph(6, 6, 2.0);
    const auto env = itwtest::corner_objects(g);
    const auto positives = make_positives(g, env, 8, 3);

    itw::Rng rng(4);
    const auto corpus = itw::build_training_corpus(g, positives, {}, rng);

    std::map<std::string, std::size_t> observed;
    for (const auto& pair : corpus.pairs) observed[to_string(pair.provenance)]++;
    CHECK(observed == corpus.manifest.counts);
    CHECK(observed.at("ground_truth") == 8);
    CHECK(observed["text_perturbed"] + observed["path_perturbed"] == 8);
    CHECK(corpus.pairs.size() == 16);

    for (const auto& pair : corpus.pairs) {
        REQUIRE(pair.label.has_value());
        const bool positive = pair.provenance == Provenance::GroundTruth ||
                              pair.provenance == Provenance::Paraphrase;
        CHECK(*pair.label == (positive ? 1 : 0));
        CHECK(g.validate_trajectory(pair.trajectory).ok());
    }
}

TEST_CASE("an identical paraphrase is filtered out, a partial rewrite kept") {
    const auto g = itwtest::grid_graph(4, 4, 2.0);
    const auto env = itwtest::corner_objects(g);

    std::vector<std::pair<Instruction, Trajectory>> positives;
    Trajectory t{"p0", "grid", {"n0_0", "n0_1", "n1_1", "n2_1", "n2_2"}, 0.0};
    t.initial_heading = g.direction_between("n0_0", "n0_1").heading;
    positives.emplace_back(
        itw::make_instruction("p0", "walk past the table and stop by the door ."), t);

    // copy of the original: BLEU 1.0, outside [0.25, 0.7]
    Instruction copy = itw::make_instruction("p0", "walk past the table and stop by the door .");
    // small rewrite that shares most n-grams
    Instruction rewrite =
        itw::make_instruction("p0", "walk past the table and stop near the door .");
    REQUIRE(itw::paraphrase_filter(positives[0].first.tokens, rewrite.tokens));

    itw::Rng rng(9);
    const auto corpus = itw::build_training_corpus(g, positives, {copy, rewrite}, rng);
    std::size_t paraphrases = 0;
    for (const auto& pair : corpus.pairs) {
        if (pair.provenance == Provenance::Paraphrase) {
            ++paraphrases;
            CHECK(pair.id == "p0#paraphrase");
            CHECK(pair.instruction.text == rewrite.text);
        }
    }
    CHECK(paraphrases == 1);
    CHECK(corpus.manifest.counts.at("paraphrase") == 1);
}

TEST_CASE("a paraphrase without a matching positive is rejected") {
    const auto g = itwtest::grid_graph(4, 4, 2.0);
    const auto env = itwtest::corner_objects(g);
    const auto positives = make_positives(g, env, 2, 6);
    itw::Rng rng(7);
    const Instruction stray = itw::make_instruction("nope", "go left .");
    CHECK_THROWS_AS(itw::build_training_corpus(g, positives, {stray}, rng),
                    itw::ValidationError);
}

TEST_CASE("corpus assembly is deterministic under the same seed") {
    const auto g = itwtest::grid_graph(5, 5, 2.0);
    const auto env = itwtest::corner_objects(g);
    const auto positives = make_positives(g, env, 6, 11);
    itw::Rng r1(12), r2(12);
    const auto c1 = itw::build_training_corpus(g, positives, {}, r1);
    const auto c2 = itw::build_training_corpus(g, positives, {}, r2);
    REQUIRE(c1.pairs.size() == c2.pairs.size());
    for (std::size_t i = 0; i < c1.pairs.size(); ++i) {
        CHECK(c1.pairs[i].id == c2.pairs[i].id);
        CHECK(c1.pairs[i].instruction.text == c2.pairs[i].instruction.text);
        CHECK(c1.pairs[i].trajectory.nodes == c2.pairs[i].trajectory.nodes);
    }
}

TEST_CASE("classification requires labels and flips with them") {
    const auto g = itwtest::grid_graph(5, 5, 2.0);
    const auto env = itwtest::corner_objects(g);
    const auto positives = make_positives(g, env, 4, 21);
    itw::Rng rng(22);
    auto corpus = itw::build_training_corpus(g, positives, {}, rng);

    itw::CompatModel model;
    model.config.d_e = 4;
    model.config.d_h = 3;
    model.config.d_img = 4;
    std::vector<Instruction> instrs;
    for (const auto& pair : corpus.pairs) instrs.push_back(pair.instruction);
    model.build_vocabulary(instrs);
    itw::Rng init(23);
    model.initialize(init);
    const itw::SyntheticFeatureSource features(1, model.config.d_img);

    const auto result = itw::classify_instructions(model, g, features, corpus.pairs);
    CHECK(result.scores.size() == corpus.pairs.size());

    auto flipped = corpus.pairs;
    for (auto& pair : flipped) pair.label = 1 - *pair.label;
    const auto inverse = itw::classify_instructions(model, g, features, flipped);
    CHECK(result.auc_value == doctest::Approx(1.0 - inverse.auc_value).epsilon(1e-12));

    auto unlabeled = corpus.pairs;
    unlabeled[0].label.reset();
    CHECK_THROWS_AS(itw::classify_instructions(model, g, features, unlabeled),
                    itw::ValidationError);
}

TEST_CASE("rank_and_filter keeps the top fraction with stable ties") {
    const std::vector<ScoredLabel> scored = {
        {"a", 0.2, 0}, {"b", 0.9, 1}, {"c", 0.9, 1}, {"d", 0.5, 0}};

    SUBCASE("fraction 1 is the identity up to ordering") {
        const auto all = itw::rank_and_filter(scored, 1.0);
        CHECK(all.ids == std::vector<std::string>{"b", "c", "d", "a"});
    }
    SUBCASE("half of four keeps two, ties broken by id") {
        const auto half = itw::rank_and_filter(scored, 0.5);
        CHECK(half.ids == std::vector<std::string>{"b", "c"});
        CHECK(half.scores == std::vector<double>{0.9, 0.9});
    }
    SUBCASE("ceil rounding keeps at least one") {
        CHECK(itw::rank_and_filter(scored, 0.01).ids == std::vector<std::string>{"b"});
    }
    SUBCASE("smaller fractions give subsets of larger ones") {
        const auto big = itw::rank_and_filter(scored, 0.75);
        const auto small = itw::rank_and_filter(scored, 0.5);
        for (std::size_t i = 0; i < small.ids.size(); ++i) CHECK(small.ids[i] == big.ids[i]);
    }
    SUBCASE("parameter validation") {
        CHECK_THROWS_AS(itw::rank_and_filter(scored, 0.0), itw::ValidationError);
        CHECK_THROWS_AS(itw::rank_and_filter(scored, 1.5), itw::ValidationError);
        CHECK_THROWS_AS(itw::rank_and_filter({}, 0.5), itw::ValidationError);
    }
}

TEST_CASE("correlation report covers every outcome at both levels") {
    itw::Rng rng(31);
    std::vector<itw::MetricScoreRow> scores;
    std::vector<itw::HumanOutcomeRow> outcomes;
    for (const char* system : {"s1", "s2", "s3"}) {
        for (int i = 0; i < 12; ++i) {
            const std::string id = std::string(system) + "_" + std::to_string(i);
            const double v = rng.uniform_real();
            scores.push_back({id, system, v});
            outcomes.push_back({id,
                                {{"ne", 10.0 * (1.0 - v)},
                                 {"quality", v},
                                 {"spl", v},
                                 {"sr", v > 0.5 ? 1.0 : 0.0}}});
        }
    }
    const auto report = itw::correlation_report(scores, outcomes, 200, 0.90, itw::Rng(5));
    REQUIRE(report.rows.size() == 8);  // 4 outcomes x 2 levels
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& row : report.rows) {
        seen.insert({row.outcome, row.level});
        CHECK(row.ci.lo <= row.ci.hi);
    }
    CHECK(seen.size() == 8);

    for (const auto& row : report.rows) {
        // the metric is the outcome for "quality": tau = 1 at both levels
        if (row.outcome == "quality") CHECK(row.tau == doctest::Approx(1.0));
        // "ne" decreases in the metric: tau = -1
        if (row.outcome == "ne") CHECK(row.tau == doctest::Approx(-1.0));
    }

    const auto j = report.to_json();
    CHECK(j.size() == 8);
    CHECK(j[0].contains("tau"));
    const auto table = report.to_table();
    CHECK(table.find("instance") != std::string::npos);
    CHECK(table.find("system") != std::string::npos);
}

TEST_CASE("correlation report validates its join") {
    const std::vector<itw::MetricScoreRow> scores = {{"x", "s1", 0.5}};
    CHECK_THROWS_AS(itw::correlation_report(scores, {}, 10, 0.9, itw::Rng(0)),
                    itw::ValidationError);
    const std::vector<itw::HumanOutcomeRow> outcomes = {{"y", {{"ne", 1.0}}}};
    CHECK_THROWS_AS(itw::correlation_report(scores, outcomes, 10, 0.9, itw::Rng(0)),
                    itw::ValidationError);
}
