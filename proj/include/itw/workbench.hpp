#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "itw/compat.hpp"
#include "itw/errors.hpp"
#include "itw/metrics.hpp"
#include "itw/navgraph.hpp"
#include "itw/pathperturb.hpp"
#include "itw/rng.hpp"
#include "itw/stats.hpp"
#include "itw/textperturb.hpp"

namespace itw {

struct CorpusPair {
    std::string id;
    Instruction instruction;
    Trajectory trajectory;
    std::optional<int> label;
    Provenance provenance = Provenance::GroundTruth;
};

struct CorpusManifest {
    std::uint64_t seed = 0;
    std::map<std::string, std::size_t> counts;  // per provenance

    nlohmann::json to_json() const { return {{"seed", seed}, {"counts", counts}}; }
};

struct Corpus {
    std::vector<CorpusPair> pairs;
    CorpusManifest manifest;
};

// Assembles positives, BLEU-filtered paraphrases, and one mined negative per
// positive (alternating text/path perturbations for a 2:1:1 overall ratio).
inline Corpus build_training_corpus(
    const NavGraph& g, const std::vector<std::pair<Instruction, Trajectory>>& positives,
    const std::vector<Instruction>& paraphrases, Rng& rng) {
    if (positives.empty()) throw ValidationError("build_training_corpus: no positive pairs");
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < positives.size(); ++i) by_id[positives[i].first.id] = i;

    Corpus corpus;
    corpus.manifest.seed = rng.seed();
    auto push = [&](CorpusPair pair) {
        corpus.manifest.counts[to_string(pair.provenance)]++;
        corpus.pairs.push_back(std::move(pair));
    };

    for (const auto& [instr, traj] : positives) {
        const auto report = g.validate_trajectory(traj);
        if (!report.ok()) {
            throw ValidationError("invalid trajectory " + traj.id + ": " + report.problems[0]);
        }
        push({instr.id, instr, traj, 1, Provenance::GroundTruth});
    }

    for (const auto& para : paraphrases) {
        auto it = by_id.find(para.id);
        if (it == by_id.end()) {
            throw ValidationError("paraphrase without matching positive: " + para.id);
        }
        const auto& [orig, traj] = positives[it->second];
        if (!paraphrase_filter(orig.tokens, para.tokens)) continue;
        CorpusPair pair{para.id + "#paraphrase", para, traj, 1, Provenance::Paraphrase};
        pair.instruction.id = pair.id;
        push(std::move(pair));
    }

    for (std::size_t i = 0; i < positives.size(); ++i) {
        const auto& [instr, traj] = positives[i];
        const bool text_first = i % 2 == 0;
        for (int attempt = 0; attempt < 2; ++attempt) {
            const bool text = attempt == 0 ? text_first : !text_first;
            try {
                if (text) {
                    auto neg = sample_text_negative(instr, rng);
                    push({neg.instruction.id, neg.instruction, traj, 0,
                          Provenance::TextPerturbed});
                } else {
                    auto neg = sample_path_negative(g, traj, rng);
                    Instruction copy = instr;
                    copy.id = neg.trajectory.id;
                    push({neg.trajectory.id, std::move(copy), neg.trajectory, 0,
                          Provenance::PathPerturbed});
                }
                break;
            } catch (const UnsatisfiableError&) {
                if (attempt == 1) throw;
            }
        }
    }
    return corpus;
}

// --- instruction classification ----------------------------------------------

struct ClassificationResult {
    double auc_value = 0.0;
    std::vector<ScoredLabel> scores;
};

inline ClassificationResult classify_instructions(CompatModel& model, const NavGraph& g,
                                                  const FeatureSource& features,
                                                  const std::vector<CorpusPair>& corpus) {
    ClassificationResult result;
    for (const auto& pair : corpus) {
        if (!pair.label) throw ValidationError("unlabeled corpus pair: " + pair.id);
        const auto ids = model.token_ids(pair.instruction.tokens);
        const auto feats = build_view_features(g, pair.trajectory, features);
        result.scores.push_back({pair.id, score_pair(model, ids, feats), *pair.label});
    }
    result.auc_value = auc(result.scores);
    return result;
}

// --- ranked filtering ----------------------------------------------------------

struct RankedSet {
    std::vector<std::string> ids;    // descending score, ties by id
    std::vector<double> scores;
};

inline RankedSet rank_and_filter(const std::vector<ScoredLabel>& scored, double fraction) {
    if (fraction <= 0.0 || fraction > 1.0) {
        throw ValidationError("rank_and_filter: fraction must be in (0, 1]");
    }
    if (scored.empty()) throw ValidationError("rank_and_filter: empty input");
    std::vector<const ScoredLabel*> order;
    order.reserve(scored.size());
    for (const auto& s : scored) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const ScoredLabel* a, const ScoredLabel* b) {
        if (a->score != b->score) return a->score > b->score;
        return a->id < b->id;
    });
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(scored.size())));
    RankedSet out;
    for (std::size_t i = 0; i < keep && i < order.size(); ++i) {
        out.ids.push_back(order[i]->id);
        out.scores.push_back(order[i]->score);
    }
    return out;
}

// --- correlation report ----------------------------------------------------------

struct MetricScoreRow {
    std::string id;
    std::string system;
    double score = 0.0;
};

struct HumanOutcomeRow {
    std::string id;
    std::map<std::string, double> outcomes;  // e.g. ne, sr, spl, quality
};

struct CorrelationRow {
    std::string outcome;
    std::string level;  // "instance" or "system"
    double tau = 0.0;
    ConfidenceInterval ci;
};

struct CorrelationReport {
    std::vector<CorrelationRow> rows;

    nlohmann::json to_json() const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& r : rows) {
            out.push_back({{"outcome", r.outcome},
                           {"level", r.level},
                           {"tau", r.tau},
                           {"ci_lo", r.ci.lo},
                           {"ci_hi", r.ci.hi}});
        }
        return out;
    }

    std::string to_table() const {
        std::ostringstream out;
        out << "outcome    level      tau       90% CI\n";
        for (const auto& r : rows) {
            char line[128];
            std::snprintf(line, sizeof(line), "%-10s %-9s %8.4f  [%7.4f, %7.4f]\n",
                          r.outcome.c_str(), r.level.c_str(), r.tau, r.ci.lo, r.ci.hi);
            out << line;
        }
        return out.str();
    }
};

// Kendall tau-b with bootstrap CIs for every human outcome, at instance level
// (pooled pairs) and system level (per-system means).
inline CorrelationReport correlation_report(const std::vector<MetricScoreRow>& scores,
                                            const std::vector<HumanOutcomeRow>& outcomes,
                                            int n_resamples = 1000, double level = 0.90,
                                            const Rng& rng = Rng(0)) {
    std::map<std::string, const HumanOutcomeRow*> by_id;
    for (const auto& row : outcomes) by_id[row.id] = &row;

    std::set<std::string> outcome_names;
    for (const auto& row : outcomes) {
        for (const auto& [name, v] : row.outcomes) outcome_names.insert(name);
    }
    if (outcome_names.empty()) throw ValidationError("correlation_report: no outcomes");

    CorrelationReport report;
    std::uint64_t stream = 1;
    for (const auto& name : outcome_names) {
        std::map<std::string, std::vector<PairedOutcome>> groups;
        for (const auto& row : scores) {
            auto it = by_id.find(row.id);
            if (it == by_id.end()) throw ValidationError("no outcomes for id: " + row.id);
            auto v = it->second->outcomes.find(name);
            if (v == it->second->outcomes.end()) {
                throw ValidationError("missing outcome '" + name + "' for id: " + row.id);
            }
            groups[row.system].push_back({row.id, row.score, v->second});
        }
        const auto result =
            system_vs_instance_correlation(groups, n_resamples, level, rng.derive(stream++));
        report.rows.push_back(
            {name, "instance", result.instance_level.tau, result.instance_level.ci});
        report.rows.push_back({name, "system", result.system_level.tau, result.system_level.ci});
    }
    return report;
}

}  // namespace itw
