// Command-line front end: perturbations, generation, metrics, model training
// and scoring, AUC, correlation, ranked filtering, and corpus assembly.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "itw/compat.hpp"
#include "itw/crafty.hpp"
#include "itw/io.hpp"
#include "itw/metrics.hpp"
#include "itw/navgraph.hpp"
#include "itw/pathperturb.hpp"
#include "itw/stats.hpp"
#include "itw/textperturb.hpp"
#include "itw/workbench.hpp"

namespace {

using nlohmann::json;

// Writes to --out when given, stdout otherwise.
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty()) {
            file_ = itw::open_output(path);
        }
    }

    std::ostream& stream() { return file_ ? *file_ : std::cout; }

private:
    std::optional<std::ofstream> file_;
};

struct PairRecord {
    itw::Instruction instruction;
    itw::Trajectory trajectory;
    std::optional<int> label;
    std::optional<std::string> provenance;
};

PairRecord pair_from_json(const json& j) {
    PairRecord rec;
    const std::string id = j.at("id").get<std::string>();
    rec.instruction = itw::make_instruction(id, j.at("instruction").get<std::string>());
    rec.trajectory = itw::trajectory_from_json(j.at("trajectory"));
    if (rec.trajectory.id.empty()) rec.trajectory.id = id;
    if (j.contains("label")) rec.label = j.at("label").get<int>();
    if (j.contains("provenance")) rec.provenance = j.at("provenance").get<std::string>();
    return rec;
}

json pair_to_json(const PairRecord& rec) {
    json j{{"id", rec.instruction.id},
           {"instruction", rec.instruction.text},
           {"trajectory", itw::trajectory_to_json(rec.trajectory)}};
    if (rec.label) j["label"] = *rec.label;
    if (rec.provenance) j["provenance"] = *rec.provenance;
    return j;
}

std::vector<PairRecord> load_pairs(const std::string& path) {
    std::vector<PairRecord> out;
    itw::for_each_jsonl(path, [&](const json& j, int) { out.push_back(pair_from_json(j)); });
    return out;
}

std::unique_ptr<itw::FeatureSource> make_feature_source(const std::string& features_path,
                                                        std::size_t d_img, std::uint64_t seed) {
    if (!features_path.empty()) {
        return std::make_unique<itw::MapFeatureSource>(itw::load_features(features_path, d_img));
    }
    return std::make_unique<itw::SyntheticFeatureSource>(itw::Rng(seed).derive(0xFEA7).seed(),
                                                         d_img);
}

int run(int argc, char** argv) {
    CLI::App app{"instruction-trajectory workbench"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    std::string out_path;
    std::string format = "jsonl";
    app.add_option("--seed", seed, "random seed");
    app.add_option("--out", out_path, "output file (default stdout)");
    app.add_option("--format", format, "output format")
        ->check(CLI::IsMember({"jsonl", "table"}));

    std::string graph_path, traj_path, instr_path, method = "mixed";
    std::string objects_path, templates_path;
    std::string ref_path, hyp_path;
    std::string config_path, data_path, features_path, model_path, pairs_path;
    std::string scores_path, outcomes_path, level = "both";
    std::string positives_path, paraphrases_path;
    int bootstrap = 1000;
    double fraction = 1.0;

    auto* perturb_path = app.add_subcommand("perturb-path", "trajectory perturbations");
    perturb_path->add_option("--graph", graph_path)->required();
    perturb_path->add_option("--trajectories", traj_path)->required();
    perturb_path->add_option("--method", method)
        ->check(CLI::IsMember({"random_walk", "path_reversal", "viewpoint_swap", "mixed"}));

    auto* perturb_text = app.add_subcommand("perturb-text", "instruction perturbations");
    perturb_text->add_option("--instructions", instr_path)->required();
    perturb_text->add_option("--method", method)
        ->check(CLI::IsMember({"direction_swap", "entity_swap", "phrase_swap", "mixed"}));

    auto* crafty = app.add_subcommand("crafty", "template-based instruction generation");
    crafty->add_option("--graph", graph_path)->required();
    crafty->add_option("--objects", objects_path)->required();
    crafty->add_option("--trajectories", traj_path)->required();
    crafty->add_option("--templates", templates_path, "template phrase file");

    auto* metrics = app.add_subcommand("metrics", "path-level evaluation metrics");
    metrics->add_option("--graph", graph_path)->required();
    metrics->add_option("--ref", ref_path)->required();
    metrics->add_option("--hyp", hyp_path)->required();

    auto* train = app.add_subcommand("train", "train the compatibility model");
    train->add_option("--config", config_path)->required();
    train->add_option("--data", data_path)->required();
    train->add_option("--graph", graph_path)->required();
    train->add_option("--features", features_path, "image feature file (synthetic if absent)");

    auto* score = app.add_subcommand("score", "score instruction-trajectory pairs");
    score->add_option("--model", model_path)->required();
    score->add_option("--pairs", pairs_path)->required();
    score->add_option("--graph", graph_path)->required();
    score->add_option("--features", features_path, "image feature file (synthetic if absent)");

    auto* auc_cmd = app.add_subcommand("auc", "AUC from scored, labeled records");
    auc_cmd->add_option("--scores", scores_path)->required();

    auto* correlate = app.add_subcommand("correlate", "metric vs human-outcome correlation");
    correlate->add_option("--scores", scores_path)->required();
    correlate->add_option("--outcomes", outcomes_path)->required();
    correlate->add_option("--level", level)->check(CLI::IsMember({"system", "instance", "both"}));
    correlate->add_option("--bootstrap", bootstrap, "bootstrap resamples");

    auto* filter = app.add_subcommand("filter", "keep the top fraction by score");
    filter->add_option("--scores", scores_path)->required();
    filter->add_option("--fraction", fraction)->required();

    auto* build_corpus = app.add_subcommand("build-corpus", "assemble a training corpus");
    build_corpus->add_option("--graph", graph_path)->required();
    build_corpus->add_option("--positives", positives_path)->required();
    build_corpus->add_option("--paraphrases", paraphrases_path, "back-translations to filter");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // command-line misuse is a validation error
    }

    Output output(out_path);
    std::ostream& out = output.stream();

    if (perturb_path->parsed()) {
        const itw::NavGraph g = itw::load_graph(graph_path);
        itw::Rng rng(seed);
        for (const auto& t : itw::load_trajectories(traj_path)) {
            itw::PerturbedTrajectory p = [&] {
                if (method == "random_walk") return itw::random_walk(g, t, rng);
                if (method == "path_reversal") return itw::path_reversal(g, t);
                if (method == "viewpoint_swap") return itw::viewpoint_swap(g, t, rng);
                return itw::sample_path_negative(g, t, rng);
            }();
            json j = itw::trajectory_to_json(p.trajectory);
            j["kind"] = itw::to_string(p.kind);
            j["source_id"] = p.source_id;
            out << j.dump() << "\n";
        }
    } else if (perturb_text->parsed()) {
        itw::Rng rng(seed);
        for (const auto& i : itw::load_instructions(instr_path)) {
            itw::PerturbedInstruction p = [&]() -> itw::PerturbedInstruction {
                if (method == "direction_swap") {
                    return {itw::direction_swap(i, rng), itw::TextPerturbKind::DirectionSwap, i.id};
                }
                if (method == "entity_swap") {
                    return {itw::entity_swap(i, rng), itw::TextPerturbKind::EntitySwap, i.id};
                }
                if (method == "phrase_swap") {
                    return {itw::phrase_swap(i, rng), itw::TextPerturbKind::PhraseSwap, i.id};
                }
                return itw::sample_text_negative(i, rng);
            }();
            json j = itw::instruction_to_json(p.instruction);
            j["kind"] = itw::to_string(p.kind);
            j["source_id"] = p.source_id;
            out << j.dump() << "\n";
        }
    } else if (crafty->parsed()) {
        const itw::NavGraph g = itw::load_graph(graph_path);
        const itw::EnvObjects env = itw::load_objects(objects_path);
        const itw::TemplateTable tt = templates_path.empty()
                                          ? itw::TemplateTable()
                                          : itw::TemplateTable::from_file(templates_path);
        const itw::Rng base(seed);
        std::uint64_t k = 0;
        for (const auto& t : itw::load_trajectories(traj_path)) {
            const itw::Instruction instr =
                itw::generate(g, env, t, base.derive(k++).seed(), {}, tt);
            out << itw::instruction_to_json(instr).dump() << "\n";
        }
    } else if (metrics->parsed()) {
        const itw::NavGraph g = itw::load_graph(graph_path);
        std::map<std::string, itw::Trajectory> refs;
        for (const auto& t : itw::load_trajectories(ref_path)) refs[t.id] = t;
        for (const auto& hyp : itw::load_trajectories(hyp_path)) {
            auto it = refs.find(hyp.id);
            if (it == refs.end()) throw itw::ValidationError("no reference for id: " + hyp.id);
            const itw::PathScore s = itw::score_path(g, hyp, it->second);
            out << json{{"id", hyp.id},
                        {"ne", s.ne},
                        {"success", s.success},
                        {"spl", s.spl},
                        {"ndtw", s.ndtw},
                        {"sdtw", s.sdtw}}
                       .dump()
                << "\n";
        }
    } else if (train->parsed()) {
        std::ifstream cfg_in(config_path);
        if (!cfg_in) throw itw::ValidationError("cannot open config file: " + config_path);
        json cfg_json;
        try {
            cfg_in >> cfg_json;
        } catch (const json::exception& e) {
            throw itw::ValidationError(std::string("bad config: ") + e.what());
        }
        itw::CompatModel model;
        model.config = itw::CompatConfig::from_json(cfg_json);
        const itw::NavGraph g = itw::load_graph(graph_path);
        const auto features = make_feature_source(features_path, model.config.d_img, seed);

        itw::TrainingData data;
        data.graph = &g;
        data.features = features.get();
        std::vector<itw::Instruction> instructions;
        for (const auto& rec : load_pairs(data_path)) {
            instructions.push_back(rec.instruction);
            data.positives.emplace_back(rec.instruction, rec.trajectory);
        }
        model.build_vocabulary(instructions);
        itw::Rng init_rng(itw::Rng(seed).derive(1).seed());
        model.initialize(init_rng);
        itw::Rng train_rng(itw::Rng(seed).derive(2).seed());
        const itw::TrainResult result = itw::train(model, data, train_rng);
        if (out_path.empty()) throw itw::ValidationError("train requires --out for the model");
        itw::save_model(model, out_path);
        std::cerr << "steps: " << result.loss_trace.size()
                  << " initial loss: " << result.loss_trace.front()
                  << " final loss: " << result.loss_trace.back() << "\n";
    } else if (score->parsed()) {
        itw::CompatModel model = itw::load_model(model_path);
        const itw::NavGraph g = itw::load_graph(graph_path);
        const auto features = make_feature_source(features_path, model.config.d_img, seed);
        for (const auto& rec : load_pairs(pairs_path)) {
            const auto ids = model.token_ids(rec.instruction.tokens);
            const auto feats = itw::build_view_features(g, rec.trajectory, *features);
            json j{{"id", rec.instruction.id}, {"score", itw::score_pair(model, ids, feats)}};
            if (rec.label) j["label"] = *rec.label;
            out << j.dump() << "\n";
        }
    } else if (auc_cmd->parsed()) {
        std::vector<itw::ScoredLabel> scored;
        itw::for_each_jsonl(scores_path, [&](const json& j, int) {
            scored.push_back({j.at("id").get<std::string>(), j.at("score").get<double>(),
                              j.at("label").get<int>()});
        });
        const double value = itw::auc(scored);
        if (format == "table") {
            out << "AUC: " << value << "\n";
        } else {
            out << json{{"auc", value}}.dump() << "\n";
        }
    } else if (correlate->parsed()) {
        std::vector<itw::MetricScoreRow> score_rows;
        itw::for_each_jsonl(scores_path, [&](const json& j, int) {
            score_rows.push_back({j.at("id").get<std::string>(),
                                  j.value("system", std::string("default")),
                                  j.at("score").get<double>()});
        });
        std::vector<itw::HumanOutcomeRow> outcome_rows;
        itw::for_each_jsonl(outcomes_path, [&](const json& j, int) {
            itw::HumanOutcomeRow row;
            row.id = j.at("id").get<std::string>();
            for (const auto& [key, value] : j.items()) {
                if (key != "id" && value.is_number()) row.outcomes[key] = value.get<double>();
            }
            outcome_rows.push_back(std::move(row));
        });
        itw::CorrelationReport report =
            itw::correlation_report(score_rows, outcome_rows, bootstrap, 0.90, itw::Rng(seed));
        if (level != "both") {
            std::erase_if(report.rows,
                          [&](const itw::CorrelationRow& r) { return r.level != level; });
        }
        if (format == "table") {
            out << report.to_table();
        } else {
            out << report.to_json().dump() << "\n";
        }
    } else if (filter->parsed()) {
        std::vector<itw::ScoredLabel> scored;
        itw::for_each_jsonl(scores_path, [&](const json& j, int) {
            scored.push_back({j.at("id").get<std::string>(), j.at("score").get<double>(),
                              j.value("label", 0)});
        });
        const itw::RankedSet ranked = itw::rank_and_filter(scored, fraction);
        for (std::size_t i = 0; i < ranked.ids.size(); ++i) {
            out << json{{"id", ranked.ids[i]}, {"score", ranked.scores[i]}}.dump() << "\n";
        }
    } else if (build_corpus->parsed()) {
        const itw::NavGraph g = itw::load_graph(graph_path);
        std::vector<std::pair<itw::Instruction, itw::Trajectory>> positives;
        for (const auto& rec : load_pairs(positives_path)) {
            positives.emplace_back(rec.instruction, rec.trajectory);
        }
        std::vector<itw::Instruction> paraphrases;
        if (!paraphrases_path.empty()) paraphrases = itw::load_instructions(paraphrases_path);
        itw::Rng rng(seed);
        const itw::Corpus corpus = itw::build_training_corpus(g, positives, paraphrases, rng);
        for (const auto& pair : corpus.pairs) {
            PairRecord rec{pair.instruction, pair.trajectory, pair.label,
                           std::string(itw::to_string(pair.provenance))};
            out << pair_to_json(rec).dump() << "\n";
        }
        std::cerr << corpus.manifest.to_json().dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const itw::UnsatisfiableError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const itw::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const itw::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
