#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "itw/errors.hpp"
#include "itw/navgraph.hpp"
#include "itw/rng.hpp"
#include "itw/textperturb.hpp"

namespace itw {

struct EnvObject {
    std::string id;
    std::string category;
    Position center;
};

struct EnvObjects {
    std::string scan;
    std::vector<EnvObject> objects;
    std::map<std::string, std::vector<std::string>> visibility;  // pano -> object ids

    std::vector<std::string> panoramas() const {
        std::vector<std::string> out;
        out.reserve(visibility.size());
        for (const auto& [pano, ids] : visibility) out.push_back(pano);
        return out;
    }

    const EnvObject& object(const std::string& id) const {
        for (const auto& o : objects) {
            if (o.id == id) return o;
        }
        throw ValidationError("unknown object-id: " + id);
    }
};

inline EnvObjects parse_objects(const nlohmann::json& j) {
    EnvObjects env;
    env.scan = j.value("scan", std::string{});
    for (const auto& o : j.at("objects")) {
        const auto& c = o.at("center");
        env.objects.push_back({o.at("id").get<std::string>(), o.at("category").get<std::string>(),
                               {c[0].get<double>(), c[1].get<double>(), c[2].get<double>()}});
    }
    std::sort(env.objects.begin(), env.objects.end(),
              [](const EnvObject& a, const EnvObject& b) { return a.id < b.id; });
    for (const auto& [pano, ids] : j.at("visibility").items()) {
        auto& vis = env.visibility[pano];
        vis = ids.get<std::vector<std::string>>();
        for (const auto& id : vis) env.object(id);  // validates
    }
    return env;
}

inline EnvObjects load_objects(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open objects file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("objects parse error in " + path + ": " + e.what());
    }
    try {
        return parse_objects(j);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("objects schema error in " + path + ": " + e.what());
    }
}

// --- Appraiser --------------------------------------------------------------

using IdfTable = std::map<std::string, double>;

// Treats each panorama as a document of visible object categories:
// idf(c) = max(0, ln(N / (1 + df(c)))).
inline IdfTable compute_idf(const EnvObjects& env) {
    const auto panos = env.panoramas();
    if (panos.empty()) throw ValidationError("compute_idf: no panoramas");
    std::map<std::string, int> df;
    for (const auto& o : env.objects) df[o.category];  // ensure every category present
    for (const auto& [pano, ids] : env.visibility) {
        std::set<std::string> cats;
        for (const auto& id : ids) cats.insert(env.object(id).category);
        for (const auto& c : cats) df[c]++;
    }
    IdfTable idf;
    const double n = static_cast<double>(panos.size());
    for (const auto& [cat, count] : df) {
        idf[cat] = std::max(0.0, std::log(n / (1.0 + static_cast<double>(count))));
    }
    return idf;
}

// --- Walker -----------------------------------------------------------------

struct MotionTuple {
    std::string source;
    std::string goal;
    double entry_heading = 0.0;
    double exit_heading = 0.0;
    double heading_delta = 0.0;  // (-pi, pi]
    double pitch_delta = 0.0;
    // Direction to each object, relative to the entry heading at the source
    // and the exit heading at the goal.
    std::map<std::string, DirectionTriple> at_source;
    std::map<std::string, DirectionTriple> at_goal;
};

namespace detail {

inline DirectionTriple direction_to_object(const Position& pano, const EnvObject& obj,
                                           double ref_heading) {
    const double dx = obj.center.x - pano.x;
    const double dy = obj.center.y - pano.y;
    const double dz = obj.center.z - pano.z;
    const double horiz = std::sqrt(dx * dx + dy * dy);
    DirectionTriple d;
    d.heading = horiz == 0.0 ? 0.0 : wrap_angle_2pi(std::atan2(dx, dy));
    d.relative = wrap_angle(d.heading - ref_heading);
    d.pitch = std::atan2(dz, horiz);
    d.distance = std::sqrt(dx * dx + dy * dy + dz * dz);
    return d;
}

inline std::map<std::string, DirectionTriple> object_directions(const NavGraph& g,
                                                                const EnvObjects& env,
                                                                const std::string& pano,
                                                                double ref_heading) {
    std::map<std::string, DirectionTriple> out;
    const Position& p = g.position(pano);
    for (const auto& o : env.objects) out[o.id] = direction_to_object(p, o, ref_heading);
    return out;
}

}  // namespace detail

inline std::vector<MotionTuple> build_motion_sequence(const NavGraph& g, const EnvObjects& env,
                                                      const Trajectory& t) {
    const auto report = g.validate_trajectory(t);
    if (!report.ok()) throw ValidationError("invalid trajectory: " + report.problems.front());
    std::vector<MotionTuple> motions;
    double entry = t.initial_heading;
    for (std::size_t k = 0; k + 1 < t.nodes.size(); ++k) {
        MotionTuple m;
        m.source = t.nodes[k];
        m.goal = t.nodes[k + 1];
        const DirectionTriple dir = g.direction_between(m.source, m.goal);
        m.entry_heading = entry;
        m.exit_heading = dir.heading;
        m.heading_delta = wrap_angle(m.exit_heading - m.entry_heading);
        m.pitch_delta = dir.pitch;
        m.at_source = detail::object_directions(g, env, m.source, m.entry_heading);
        m.at_goal = detail::object_directions(g, env, m.goal, m.exit_heading);
        motions.push_back(std::move(m));
        entry = dir.heading;
    }
    return motions;
}

// --- orientation wheel ------------------------------------------------------

enum class DirectionType {
    Straight,
    SlightLeft,
    SlightRight,
    Left,
    Right,
    StrongLeft,
    StrongRight,
    Behind,
    Up,
    Down
};

// Demarcations at odd multiples of pi/8; pitch beyond pi/8 overrides.
inline DirectionType direction_type(double heading_delta, double pitch_delta = 0.0) {
    if (pitch_delta > kPi / 8.0) return DirectionType::Up;
    if (pitch_delta < -kPi / 8.0) return DirectionType::Down;
    const double a = std::abs(heading_delta);
    const bool right = heading_delta > 0.0;
    if (a <= kPi / 8.0) return DirectionType::Straight;
    if (a <= 3.0 * kPi / 8.0) return right ? DirectionType::SlightRight : DirectionType::SlightLeft;
    if (a <= 5.0 * kPi / 8.0) return right ? DirectionType::Right : DirectionType::Left;
    if (a <= 7.0 * kPi / 8.0) return right ? DirectionType::StrongRight : DirectionType::StrongLeft;
    return DirectionType::Behind;
}

// --- Observer ---------------------------------------------------------------

struct CraftyParams {
    double sigma_e = 3.0;   // emission distance scale, meters
    double sigma_t = 5.0;   // transition distance scale, meters
    double kappa_self = 2.0;
    double alpha = 1.0;     // IDF saliency exponent
};

struct CraftyHmm {
    std::vector<std::string> states;     // object ids, sorted
    std::vector<std::string> panoramas;  // sorted
    std::vector<double> initial;
    std::vector<std::vector<double>> transition;  // row-stochastic
    std::vector<std::vector<double>> emission;    // state -> distribution over panoramas

    std::size_t pano_index(const std::string& pano) const {
        auto it = std::lower_bound(panoramas.begin(), panoramas.end(), pano);
        if (it == panoramas.end() || *it != pano) {
            throw ValidationError("panorama not in HMM: " + pano);
        }
        return static_cast<std::size_t>(it - panoramas.begin());
    }
};

namespace detail {

inline void normalize_row(std::vector<double>& row, const char* what) {
    double sum = 0.0;
    for (double v : row) sum += v;
    if (!(sum > 0.0) || !std::isfinite(sum)) {
        throw NumericError(std::string("degenerate normalization in ") + what);
    }
    for (double& v : row) v /= sum;
}

}  // namespace detail

inline CraftyHmm build_hmm(const NavGraph& g, const EnvObjects& env, const IdfTable& idf,
                           const CraftyParams& params = {}) {
    if (env.objects.empty()) throw ValidationError("build_hmm: no objects");
    CraftyHmm h;
    for (const auto& o : env.objects) h.states.push_back(o.id);
    std::sort(h.states.begin(), h.states.end());
    h.panoramas = env.panoramas();
    std::sort(h.panoramas.begin(), h.panoramas.end());
    if (h.panoramas.empty()) throw ValidationError("build_hmm: no panoramas");

    auto saliency = [&](const EnvObject& o) {
        auto it = idf.find(o.category);
        const double s = it == idf.end() ? 0.0 : it->second;
        return std::pow(1.0 + s, params.alpha);
    };

    const std::size_t n = h.states.size();
    h.initial.resize(n);
    h.transition.assign(n, std::vector<double>(n, 0.0));
    h.emission.assign(n, std::vector<double>(h.panoramas.size(), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const EnvObject& oi = env.object(h.states[i]);
        h.initial[i] = saliency(oi);
        for (std::size_t p = 0; p < h.panoramas.size(); ++p) {
            const double d = euclidean(oi.center, g.position(h.panoramas[p]));
            h.emission[i][p] = std::exp(-d / params.sigma_e);
        }
        detail::normalize_row(h.emission[i], "emission");
        for (std::size_t j = 0; j < n; ++j) {
            const EnvObject& oj = env.object(h.states[j]);
            const double d = euclidean(oi.center, oj.center);
            h.transition[i][j] = std::exp(i == j ? params.kappa_self : 0.0) *
                                 std::exp(-d / params.sigma_t) * saliency(oj);
        }
        detail::normalize_row(h.transition[i], "transition");
    }
    detail::normalize_row(h.initial, "initial");
    return h;
}

// Argmax state sequence, log-space DP, ties broken by state order.
inline std::vector<std::string> viterbi(const CraftyHmm& h,
                                        const std::vector<std::string>& observations) {
    if (observations.empty()) throw ValidationError("viterbi: empty observation sequence");
    const std::size_t n = h.states.size();
    const double neg_inf = -std::numeric_limits<double>::infinity();
    auto safe_log = [&](double p) { return p > 0.0 ? std::log(p) : neg_inf; };

    std::vector<double> score(n);
    std::vector<std::vector<std::size_t>> back(observations.size(), std::vector<std::size_t>(n, 0));
    {
        const std::size_t p0 = h.pano_index(observations[0]);
        for (std::size_t i = 0; i < n; ++i) {
            score[i] = safe_log(h.initial[i]) + safe_log(h.emission[i][p0]);
        }
    }
    for (std::size_t t = 1; t < observations.size(); ++t) {
        const std::size_t pt = h.pano_index(observations[t]);
        std::vector<double> next(n, neg_inf);
        for (std::size_t j = 0; j < n; ++j) {
            double best = neg_inf;
            std::size_t arg = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double s = score[i] + safe_log(h.transition[i][j]);
                if (s > best) {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + safe_log(h.emission[j][pt]);
            back[t][j] = arg;
        }
        score = std::move(next);
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (score[i] > score[best]) best = i;
    }
    if (score[best] == neg_inf) {
        throw NumericError("viterbi: zero-probability observation sequence");
    }
    std::vector<std::size_t> path(observations.size());
    path.back() = best;
    for (std::size_t t = observations.size(); t-- > 1;) {
        path[t - 1] = back[t][path[t]];
    }
    std::vector<std::string> out;
    out.reserve(path.size());
    for (std::size_t idx : path) out.push_back(h.states[idx]);
    return out;
}

// --- Talker -----------------------------------------------------------------

inline const char* default_template_json() {
    return R"({
  "straight_verbs": ["continue", "go", "head", "proceed", "walk", "travel"],
  "straight_words": ["straight", "ahead", "forward"],
  "turn_verbs": ["face", "go", "head", "make a", "pivot", "turn", "walk"],
  "behind_moves": ["turn around", "turn all the way around"],
  "up_moves": ["go up", "head up", "climb up", "walk up"],
  "down_moves": ["go down", "head down", "walk down"],
  "orient_straight": ["ahead of you", "in front of you"],
  "orient_behind": ["behind you", "in back of you"],
  "orient_pre": ["to your", "to the", "on your", "on the"],
  "orient_post": ["of you"],
  "orient_slight_mods": ["a bit", "slightly", "a little", "just"],
  "orient_up": ["above you"],
  "orient_down": ["below you"],
  "start_templates": ["you are near a {OBJ} , {ORIENT} .",
                      "there is a {OBJ} when you look {ORIENT} ."],
  "intra_templates": ["{MOVE} . a {OBJ} is {ORIENT} .",
                      "{MOVE} . you should see a {OBJ} {ORIENT} ."],
  "inter_templates": ["{MOVE} , going along to the {OBJ} {ORIENT} ."],
  "multi_straight": ["{MOVE} , heading toward the {OBJ} ."],
  "multi_slight": ["{MOVE} , approaching the {OBJ} {ORIENT} ."],
  "multi_other": ["{MOVE} , passing the {OBJ} {ORIENT} ."],
  "end_templates": ["{MOVE} and stop by the {OBJ} ."]
})";
}

class TemplateTable {
public:
    TemplateTable() : j_(nlohmann::json::parse(default_template_json())) {}
    explicit TemplateTable(nlohmann::json j) : j_(std::move(j)) {}

    static TemplateTable from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open template file: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("template parse error in " + path + ": " + e.what());
        }
        return TemplateTable(std::move(j));
    }

    std::string sample(const std::string& slot, Rng& rng) const {
        const auto& list = phrases(slot);
        return list[rng.uniform_index(list.size())];
    }

    const std::vector<std::string>& phrases(const std::string& slot) const {
        auto it = cache_.find(slot);
        if (it == cache_.end()) {
            if (!j_.contains(slot)) throw ValidationError("missing template slot: " + slot);
            it = cache_.emplace(slot, j_.at(slot).get<std::vector<std::string>>()).first;
        }
        return it->second;
    }

private:
    nlohmann::json j_;
    mutable std::map<std::string, std::vector<std::string>> cache_;
};

namespace detail {

inline std::string move_phrase(DirectionType type, const TemplateTable& tt, Rng& rng) {
    switch (type) {
        case DirectionType::Straight:
            return tt.sample("straight_verbs", rng) + " " + tt.sample("straight_words", rng);
        case DirectionType::Behind:
            return tt.sample("behind_moves", rng);
        case DirectionType::Up:
            return tt.sample("up_moves", rng);
        case DirectionType::Down:
            return tt.sample("down_moves", rng);
        default:
            break;
    }
    const bool right = type == DirectionType::SlightRight || type == DirectionType::Right ||
                       type == DirectionType::StrongRight;
    const std::string dir = right ? "right" : "left";
    const std::string verb = tt.sample("turn_verbs", rng);
    const bool article = verb.ends_with(" a");  // "make a"
    if (type == DirectionType::SlightLeft || type == DirectionType::SlightRight) {
        return article ? verb + " slight " + dir : verb + " slightly " + dir;
    }
    if (type == DirectionType::StrongLeft || type == DirectionType::StrongRight) {
        return article ? verb + " sharp " + dir : verb + " sharply " + dir;
    }
    return verb + " " + dir;
}

inline std::string orient_side_phrase(const std::string& dir, const TemplateTable& tt, Rng& rng) {
    const auto& pre = tt.phrases("orient_pre");
    const auto& post = tt.phrases("orient_post");
    const std::size_t pick = rng.uniform_index(pre.size() + post.size());
    if (pick < pre.size()) return pre[pick] + " " + dir;
    return dir + " " + post[pick - pre.size()];
}

inline std::string orient_phrase(const DirectionTriple& to_object, const TemplateTable& tt,
                                 Rng& rng) {
    const DirectionType type = direction_type(to_object.relative, to_object.pitch);
    switch (type) {
        case DirectionType::Straight: return tt.sample("orient_straight", rng);
        case DirectionType::Behind: return tt.sample("orient_behind", rng);
        case DirectionType::Up: return tt.sample("orient_up", rng);
        case DirectionType::Down: return tt.sample("orient_down", rng);
        default: break;
    }
    const bool right = type == DirectionType::SlightRight || type == DirectionType::Right ||
                       type == DirectionType::StrongRight;
    const std::string dir = right ? "right" : "left";
    if (type == DirectionType::SlightLeft || type == DirectionType::SlightRight) {
        return tt.sample("orient_slight_mods", rng) + " " + orient_side_phrase(dir, tt, rng);
    }
    return orient_side_phrase(dir, tt, rng);
}

inline std::string fill(std::string tpl, const std::string& slot, const std::string& value) {
    for (std::size_t pos; (pos = tpl.find(slot)) != std::string::npos;) {
        tpl.replace(pos, slot.size(), value);
    }
    return tpl;
}

}  // namespace detail

// Emits Start, then per-step templates with same-object runs collapsed into
// multi-action templates; the final step uses the end-of-path template.
inline std::string realize_instruction(const std::vector<MotionTuple>& motions,
                                       const std::vector<std::string>& fixations,
                                       const EnvObjects& env, Rng& rng,
                                       const TemplateTable& tt = TemplateTable()) {
    if (fixations.size() != motions.size() + 1) {
        throw ValidationError("realize_instruction: need one fixation per visited panorama");
    }
    std::vector<std::string> sentences;
    auto category = [&](const std::string& object_id) { return env.object(object_id).category; };

    {
        std::string tpl = tt.sample("start_templates", rng);
        tpl = detail::fill(tpl, "{OBJ}", category(fixations[0]));
        tpl = detail::fill(tpl, "{ORIENT}",
                           detail::orient_phrase(motions[0].at_source.at(fixations[0]), tt, rng));
        sentences.push_back(tpl);
    }

    // Group consecutive non-final motions by their fixated object.
    const std::size_t last = motions.size() - 1;
    std::size_t k = 0;
    while (k < last) {
        std::size_t end = k + 1;
        while (end < last && fixations[end + 1] == fixations[k + 1]) ++end;
        const std::string& object_id = fixations[k + 1];
        const DirectionTriple& to_object = motions[end - 1].at_goal.at(object_id);

        if (end - k == 1) {
            const DirectionType type =
                direction_type(motions[k].heading_delta, motions[k].pitch_delta);
            const bool turning = type != DirectionType::Straight && type != DirectionType::Up &&
                                 type != DirectionType::Down;
            std::string tpl = tt.sample(turning ? "intra_templates" : "inter_templates", rng);
            tpl = detail::fill(tpl, "{MOVE}", detail::move_phrase(type, tt, rng));
            tpl = detail::fill(tpl, "{OBJ}", category(object_id));
            tpl = detail::fill(tpl, "{ORIENT}", detail::orient_phrase(to_object, tt, rng));
            sentences.push_back(tpl);
        } else {
            // Collapse repeated direction types, then join the move commands.
            std::vector<DirectionType> types;
            for (std::size_t i = k; i < end; ++i) {
                const DirectionType type =
                    direction_type(motions[i].heading_delta, motions[i].pitch_delta);
                if (types.empty() || types.back() != type) types.push_back(type);
            }
            std::string combined;
            for (const DirectionType type : types) {
                if (!combined.empty()) combined += " and ";
                combined += detail::move_phrase(type, tt, rng);
            }
            const DirectionType object_type = direction_type(to_object.relative, to_object.pitch);
            const char* slot = "multi_other";
            if (object_type == DirectionType::Straight) {
                slot = "multi_straight";
            } else if (object_type == DirectionType::SlightLeft ||
                       object_type == DirectionType::SlightRight) {
                slot = "multi_slight";
            }
            std::string tpl = tt.sample(slot, rng);
            tpl = detail::fill(tpl, "{MOVE}", combined);
            tpl = detail::fill(tpl, "{OBJ}", category(object_id));
            tpl = detail::fill(tpl, "{ORIENT}", detail::orient_phrase(to_object, tt, rng));
            sentences.push_back(tpl);
        }
        k = end;
    }

    {
        const DirectionType type =
            direction_type(motions[last].heading_delta, motions[last].pitch_delta);
        std::string tpl = tt.sample("end_templates", rng);
        tpl = detail::fill(tpl, "{MOVE}", detail::move_phrase(type, tt, rng));
        tpl = detail::fill(tpl, "{OBJ}", category(fixations[last + 1]));
        sentences.push_back(tpl);
    }

    std::string out;
    for (const auto& s : sentences) {
        if (!out.empty()) out += " ";
        out += s;
    }
    return out;
}

// Full pipeline: IDF, motion tuples, HMM, Viterbi fixations, realization.
inline Instruction generate(const NavGraph& g, const EnvObjects& env, const Trajectory& t,
                            std::uint64_t seed, const CraftyParams& params = {},
                            const TemplateTable& tt = TemplateTable()) {
    const IdfTable idf = compute_idf(env);
    const auto motions = build_motion_sequence(g, env, t);
    const CraftyHmm hmm = build_hmm(g, env, idf, params);
    const auto fixations = viterbi(hmm, t.nodes);
    Rng rng(seed);
    Instruction instr;
    instr.id = t.id;
    instr.text = realize_instruction(motions, fixations, env, rng, tt);
    instr.tokens = tokenize(instr.text);
    return instr;
}

}  // namespace itw
