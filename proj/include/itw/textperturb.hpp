#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "itw/errors.hpp"
#include "itw/rng.hpp"

namespace itw {

struct EntitySpan {
    std::size_t start = 0;  // half-open token range
    std::size_t end = 0;
    std::string lemma;
};

using ClauseSpan = std::pair<std::size_t, std::size_t>;

struct Instruction {
    std::string id;
    std::string text;
    std::vector<std::string> tokens;
    std::optional<std::vector<EntitySpan>> entities;
    std::optional<std::vector<ClauseSpan>> clauses;
    std::optional<std::vector<std::size_t>> sentence_ends;  // exclusive token index per sentence
};

inline bool is_punct_token(const std::string& t) {
    return t.size() == 1 && (t == "." || t == "," || t == ";" || t == "!" || t == "?");
}

// Lowercases, splits on whitespace and detaches {. , ; ! ?} as own tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (char raw : text) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (c == '.' || c == ',' || c == ';' || c == '!' || c == '?') {
            flush();
            tokens.push_back(std::string(1, c));
        } else {
            word.push_back(c);
        }
    }
    flush();
    return tokens;
}

// Joins with spaces, attaching punctuation to the left.
inline std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty() && !is_punct_token(t)) out.push_back(' ');
        out += t;
    }
    return out;
}

inline Instruction make_instruction(std::string id, std::string text) {
    Instruction i;
    i.id = std::move(id);
    i.tokens = tokenize(text);
    i.text = std::move(text);
    return i;
}

// --- word-class lexicon for the rule-based annotators ----------------------

namespace lexicon {

inline const std::set<std::string>& determiners() {
    static const std::set<std::string> s = {"a", "an", "the", "this", "that", "these", "those",
                                            "your", "its"};
    return s;
}

inline const std::set<std::string>& adjectives() {
    static const std::set<std::string> s = {
        "round", "square",  "red",   "blue",  "green", "white", "black", "brown",
        "small", "large",   "big",   "little", "long", "short", "tall",  "wooden",
        "glass", "open",    "closed", "dark",  "light", "double", "second", "third"};
    return s;
}

inline const std::set<std::string>& nouns() {
    static const std::set<std::string> s = {
        "room",    "bedroom",  "bathroom", "kitchen",   "hallway", "hall",     "lounge",
        "door",    "doorway",  "doors",    "table",     "tables",  "chair",    "chairs",
        "couch",   "couches",  "sofa",     "stairs",    "stair",   "staircase", "stairway",
        "window",  "windows",  "lamp",     "lamps",     "tv",      "television", "bed",
        "beds",    "desk",     "shelf",    "shelves",   "mirror",  "rug",      "counter",
        "sink",    "toilet",   "shower",   "fridge",    "refrigerator", "oven", "stove",
        "plant",   "plants",   "picture",  "pictures",  "painting", "paintings", "curtain",
        "curtains", "closet",  "cabinet",  "fireplace", "railing", "banister", "wall",
        "pillar",  "column",   "bench",    "stool",     "dresser", "wardrobe", "vase",
        "clock",   "bookshelf", "bookcase", "carpet",   "landing", "balcony",  "archway",
        "entrance", "entryway", "goal",    "pool",      "piano",   "statue",   "garage"};
    return s;
}

// Entity heads on this list are never treated as entities.
inline const std::set<std::string>& entity_stoplist() {
    static const std::set<std::string> s = {"any",  "first", "end",  "front", "way",
                                            "one",  "thing", "side", "step",  "steps"};
    return s;
}

}  // namespace lexicon

// Lemma key: trailing-plural stem plus a synonym table.
inline std::string lemma_key(const std::string& word,
                             const std::map<std::string, std::string>& synonyms = {}) {
    static const std::map<std::string, std::string> builtin = {
        {"stair", "stair"}, {"staircase", "stair"}, {"stairway", "stair"}};
    std::string stem = word;
    if (stem.size() > 3 && stem.ends_with("es")) {
        stem.resize(stem.size() - 2);
    } else if (stem.size() > 2 && stem.ends_with("s") && !stem.ends_with("ss")) {
        stem.resize(stem.size() - 1);
    }
    if (auto it = synonyms.find(stem); it != synonyms.end()) return it->second;
    if (auto it = builtin.find(stem); it != builtin.end()) return it->second;
    return stem;
}

// Noun phrases as maximal runs of (determiner? adjective* noun+), keyed by the
// lemma of the head (last) noun. Stop-list heads are skipped.
inline std::vector<EntitySpan> annotate_entities(const Instruction& instr) {
    const auto& tokens = instr.tokens;
    std::vector<EntitySpan> spans;
    std::size_t i = 0;
    while (i < tokens.size()) {
        std::size_t j = i;
        if (j < tokens.size() && lexicon::determiners().count(tokens[j])) ++j;
        while (j < tokens.size() && lexicon::adjectives().count(tokens[j])) ++j;
        std::size_t nouns_end = j;
        while (nouns_end < tokens.size() && lexicon::nouns().count(tokens[nouns_end])) ++nouns_end;
        if (nouns_end > j) {
            const std::string head = lemma_key(tokens[nouns_end - 1]);
            if (!lexicon::entity_stoplist().count(head)) {
                spans.push_back({i, nouns_end, head});
            }
            i = nouns_end;
        } else {
            ++i;
        }
    }
    return spans;
}

// Clauses split on {, ; and then} and sentence punctuation; separators attach
// to the clause they terminate, connectors to the clause they introduce.
inline std::vector<ClauseSpan> annotate_clauses(const Instruction& instr) {
    const auto& tokens = instr.tokens;
    std::vector<ClauseSpan> clauses;
    std::size_t start = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& t = tokens[i];
        if (is_punct_token(t)) {
            if (i + 1 > start) clauses.emplace_back(start, i + 1);
            start = i + 1;
        } else if ((t == "and" || t == "then") && i > start) {
            clauses.emplace_back(start, i);
            start = i;
        }
    }
    if (start < tokens.size()) clauses.emplace_back(start, tokens.size());
    return clauses;
}

inline std::vector<std::size_t> annotate_sentences(const Instruction& instr) {
    const auto& tokens = instr.tokens;
    std::vector<std::size_t> ends;
    std::size_t start = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& t = tokens[i];
        if (t == "." || t == "!" || t == "?") {
            ends.push_back(i + 1);
            start = i + 1;
        }
    }
    if (start < tokens.size()) ends.push_back(tokens.size());
    return ends;
}

// --- perturbations ----------------------------------------------------------

namespace detail {

struct DirectionMatch {
    std::size_t start = 0;
    std::size_t length = 0;  // tokens consumed (1 or 2)
    std::size_t set = 0;
};

inline const std::vector<std::vector<std::string>>& direction_sets() {
    static const std::vector<std::vector<std::string>> sets = {
        {"around", "left", "right"}, {"bottom", "middle", "top"},
        {"up", "down"},              {"front", "back"},
        {"above", "under"},          {"enter", "exit"},
        {"backward", "forward"},     {"away from", "towards"},
        {"into", "out of"},          {"inside", "outside"}};
    return sets;
}

inline std::vector<DirectionMatch> find_direction_matches(const std::vector<std::string>& tokens) {
    static const auto phrase_index = [] {
        std::map<std::string, std::size_t> m;
        const auto& sets = direction_sets();
        for (std::size_t s = 0; s < sets.size(); ++s) {
            for (const auto& phrase : sets[s]) m[phrase] = s;
        }
        return m;
    }();
    std::vector<DirectionMatch> matches;
    std::size_t i = 0;
    while (i < tokens.size()) {
        if (i + 1 < tokens.size()) {  // longest match first
            const std::string two = tokens[i] + " " + tokens[i + 1];
            if (auto it = phrase_index.find(two); it != phrase_index.end()) {
                matches.push_back({i, 2, it->second});
                i += 2;
                continue;
            }
        }
        if (auto it = phrase_index.find(tokens[i]); it != phrase_index.end()) {
            matches.push_back({i, 1, it->second});
        }
        ++i;
    }
    return matches;
}

inline Instruction rebuild(const Instruction& source, std::vector<std::string> tokens,
                           const char* suffix) {
    Instruction out;
    out.id = source.id + "#" + suffix;
    out.text = detokenize(tokens);
    out.tokens = tokenize(out.text);
    return out;
}

}  // namespace detail

// Replaces directional phrases with different members of their set, each with
// probability p_swap; at least one is always replaced.
inline Instruction direction_swap(const Instruction& instr, Rng& rng, double p_swap = 0.5) {
    const auto matches = detail::find_direction_matches(instr.tokens);
    if (matches.empty()) throw UnsatisfiableError("no directional phrase present in " + instr.id);

    std::vector<bool> swap(matches.size(), false);
    bool any = false;
    for (std::size_t m = 0; m < matches.size(); ++m) {
        swap[m] = rng.bernoulli(p_swap);
        any = any || swap[m];
    }
    if (!any) swap[rng.uniform_index(matches.size())] = true;

    const auto& sets = detail::direction_sets();
    std::vector<std::string> tokens;
    std::size_t pos = 0, m = 0;
    while (pos < instr.tokens.size()) {
        if (m < matches.size() && matches[m].start == pos) {
            const auto& match = matches[m];
            if (swap[m]) {
                const auto& set = sets[match.set];
                const std::string current =
                    match.length == 2 ? instr.tokens[pos] + " " + instr.tokens[pos + 1]
                                      : instr.tokens[pos];
                std::vector<std::string> alternatives;
                for (const auto& p : set) {
                    if (p != current) alternatives.push_back(p);
                }
                for (const auto& t : tokenize(alternatives[rng.uniform_index(alternatives.size())]))
                    tokens.push_back(t);
            } else {
                for (std::size_t k = 0; k < match.length; ++k) tokens.push_back(instr.tokens[pos + k]);
            }
            pos += match.length;
            ++m;
        } else {
            tokens.push_back(instr.tokens[pos++]);
        }
    }
    return detail::rebuild(instr, std::move(tokens), "direction_swap");
}

// Exchanges the token ranges of two entities with distinct lemma keys.
inline Instruction entity_swap(const Instruction& instr, Rng& rng) {
    const std::vector<EntitySpan> spans =
        instr.entities ? *instr.entities : annotate_entities(instr);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        for (std::size_t j = i + 1; j < spans.size(); ++j) {
            if (spans[i].lemma != spans[j].lemma) pairs.emplace_back(i, j);
        }
    }
    if (pairs.empty()) throw UnsatisfiableError("insufficient entities in " + instr.id);
    const auto [a, b] = pairs[rng.uniform_index(pairs.size())];
    const EntitySpan& first = spans[a];
    const EntitySpan& second = spans[b];

    std::vector<std::string> tokens;
    for (std::size_t pos = 0; pos < instr.tokens.size();) {
        if (pos == first.start) {
            tokens.insert(tokens.end(), instr.tokens.begin() + second.start,
                          instr.tokens.begin() + second.end);
            pos = first.end;
        } else if (pos == second.start) {
            tokens.insert(tokens.end(), instr.tokens.begin() + first.start,
                          instr.tokens.begin() + first.end);
            pos = second.end;
        } else {
            tokens.push_back(instr.tokens[pos++]);
        }
    }
    return detail::rebuild(instr, std::move(tokens), "entity_swap");
}

// One of: remove a clause, duplicate a clause, or shuffle all sentences but
// the last. Chosen uniformly among the edits feasible for this instruction.
inline Instruction phrase_swap(const Instruction& instr, Rng& rng) {
    const std::vector<ClauseSpan> clauses =
        instr.clauses ? *instr.clauses : annotate_clauses(instr);
    const std::vector<std::size_t> sentence_ends =
        instr.sentence_ends ? *instr.sentence_ends : annotate_sentences(instr);

    enum Edit { Remove, Duplicate, Shuffle };
    std::vector<Edit> feasible;
    if (clauses.size() >= 2) {
        feasible.push_back(Remove);
        feasible.push_back(Duplicate);
    }
    if (sentence_ends.size() >= 3) feasible.push_back(Shuffle);
    if (feasible.empty()) throw UnsatisfiableError("no phrase edit possible for " + instr.id);

    const Edit edit = feasible[rng.uniform_index(feasible.size())];
    std::vector<std::string> tokens;
    if (edit == Remove) {
        const auto [s, e] = clauses[rng.uniform_index(clauses.size())];
        tokens.assign(instr.tokens.begin(), instr.tokens.begin() + s);
        tokens.insert(tokens.end(), instr.tokens.begin() + e, instr.tokens.end());
    } else if (edit == Duplicate) {
        const auto [s, e] = clauses[rng.uniform_index(clauses.size())];
        tokens.assign(instr.tokens.begin(), instr.tokens.begin() + e);
        tokens.insert(tokens.end(), instr.tokens.begin() + s, instr.tokens.begin() + e);
        tokens.insert(tokens.end(), instr.tokens.begin() + e, instr.tokens.end());
    } else {
        std::vector<ClauseSpan> sentences;
        std::size_t start = 0;
        for (std::size_t end : sentence_ends) {
            sentences.emplace_back(start, end);
            start = end;
        }
        std::vector<std::size_t> order(sentences.size() - 1);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        const std::vector<std::size_t> identity = order;
        do {
            rng.shuffle(order);
        } while (order == identity);
        for (std::size_t idx : order) {
            tokens.insert(tokens.end(), instr.tokens.begin() + sentences[idx].first,
                          instr.tokens.begin() + sentences[idx].second);
        }
        tokens.insert(tokens.end(), instr.tokens.begin() + sentences.back().first,
                      instr.tokens.begin() + sentences.back().second);
    }
    return detail::rebuild(instr, std::move(tokens), "phrase_swap");
}

enum class TextPerturbKind { DirectionSwap, EntitySwap, PhraseSwap };

inline const char* to_string(TextPerturbKind k) {
    switch (k) {
        case TextPerturbKind::DirectionSwap: return "direction_swap";
        case TextPerturbKind::EntitySwap: return "entity_swap";
        case TextPerturbKind::PhraseSwap: return "phrase_swap";
    }
    return "?";
}

struct PerturbedInstruction {
    Instruction instruction;
    TextPerturbKind kind;
    std::string source_id;
};

// Uniform choice among the three perturbations with fallback when the chosen
// one is unsatisfiable.
inline PerturbedInstruction sample_text_negative(const Instruction& instr, Rng& rng) {
    std::vector<TextPerturbKind> order = {TextPerturbKind::DirectionSwap,
                                          TextPerturbKind::EntitySwap,
                                          TextPerturbKind::PhraseSwap};
    std::swap(order[0], order[rng.uniform_index(order.size())]);
    if (rng.bernoulli(0.5)) std::swap(order[1], order[2]);
    for (TextPerturbKind kind : order) {
        try {
            switch (kind) {
                case TextPerturbKind::DirectionSwap:
                    return {direction_swap(instr, rng), kind, instr.id};
                case TextPerturbKind::EntitySwap:
                    return {entity_swap(instr, rng), kind, instr.id};
                case TextPerturbKind::PhraseSwap:
                    return {phrase_swap(instr, rng), kind, instr.id};
            }
        } catch (const UnsatisfiableError&) {
            // try the next kind
        }
    }
    throw UnsatisfiableError("all perturbations unsatisfiable for " + instr.id);
}

}  // namespace itw
