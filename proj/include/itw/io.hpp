#pragma once

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "itw/errors.hpp"
#include "itw/navgraph.hpp"
#include "itw/textperturb.hpp"

namespace itw {

// Calls fn for each non-empty line parsed as JSON. Line numbers are 1-based.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(const nlohmann::json&, int)>& fn) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        fn(j, lineno);
    }
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    t.id = j.value("id", std::string{});
    t.scan = j.value("scan", std::string{});
    t.nodes = j.at("nodes").get<std::vector<std::string>>();
    t.initial_heading = j.value("heading", 0.0);
    return t;
}

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
    return nlohmann::json{
        {"id", t.id}, {"scan", t.scan}, {"nodes", t.nodes}, {"heading", t.initial_heading}};
}

inline std::vector<Trajectory> load_trajectories(const std::string& path) {
    std::vector<Trajectory> out;
    for_each_jsonl(path, [&](const nlohmann::json& j, int) {
        out.push_back(trajectory_from_json(j));
    });
    return out;
}

inline Instruction instruction_from_json(const nlohmann::json& j) {
    Instruction i = make_instruction(j.at("id").get<std::string>(), j.at("text").get<std::string>());
    if (j.contains("entities")) {
        std::vector<EntitySpan> spans;
        for (const auto& e : j.at("entities")) {
            spans.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(),
                             e.at(2).get<std::string>()});
        }
        i.entities = std::move(spans);
    }
    if (j.contains("clauses")) {
        std::vector<ClauseSpan> clauses;
        for (const auto& c : j.at("clauses")) {
            clauses.emplace_back(c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>());
        }
        i.clauses = std::move(clauses);
    }
    if (j.contains("sentences")) {
        i.sentence_ends = j.at("sentences").get<std::vector<std::size_t>>();
    }
    return i;
}

inline nlohmann::json instruction_to_json(const Instruction& i) {
    nlohmann::json j{{"id", i.id}, {"text", i.text}};
    if (i.entities) {
        auto arr = nlohmann::json::array();
        for (const auto& e : *i.entities) arr.push_back({e.start, e.end, e.lemma});
        j["entities"] = std::move(arr);
    }
    if (i.clauses) {
        auto arr = nlohmann::json::array();
        for (const auto& c : *i.clauses) arr.push_back({c.first, c.second});
        j["clauses"] = std::move(arr);
    }
    if (i.sentence_ends) j["sentences"] = *i.sentence_ends;
    return j;
}

inline std::vector<Instruction> load_instructions(const std::string& path) {
    std::vector<Instruction> out;
    for_each_jsonl(path, [&](const nlohmann::json& j, int) {
        out.push_back(instruction_from_json(j));
    });
    return out;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open output file: " + path);
    return out;
}

}  // namespace itw
