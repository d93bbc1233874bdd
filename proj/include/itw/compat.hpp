#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "itw/autodiff.hpp"
#include "itw/errors.hpp"
#include "itw/navgraph.hpp"
#include "itw/pathperturb.hpp"
#include "itw/rng.hpp"
#include "itw/textperturb.hpp"

namespace itw {

// --- features ----------------------------------------------------------------

// Fixed-order sin/cos block over absolute and relative heading/pitch.
inline std::vector<double> encode_orientation(double heading_abs, double pitch_abs,
                                              double heading_rel, double pitch_rel) {
    return {std::sin(heading_abs), std::cos(heading_abs), std::sin(pitch_abs),
            std::cos(pitch_abs),   std::sin(heading_rel), std::cos(heading_rel),
            std::sin(pitch_rel),   std::cos(pitch_rel)};
}

inline constexpr std::size_t kViewSlots = 36;
inline constexpr std::size_t kElevations = 3;   // {-pi/6, 0, pi/6}
inline constexpr std::size_t kHeadings = 12;    // pi/6 apart

inline double slot_elevation(std::size_t slot) {
    return (static_cast<double>(slot / kHeadings) - 1.0) * kPi / 6.0;
}

inline double slot_heading(std::size_t slot) {
    return static_cast<double>(slot % kHeadings) * kPi / 6.0;
}

// Per-viewpoint inputs to the trajectory encoder. Each slot feature is the
// image part (d_img) followed by the 8-value orientation block.
struct ViewFeatures {
    std::vector<std::vector<double>> slots;  // 36 x (d_img + 8)
    std::vector<double> e_prev;              // zero vector at the first viewpoint
    std::vector<double> e_next;              // zero vector at the last viewpoint
    std::vector<double> step_geom;           // (dx, dy, dz, length); zeros at the end
};

using ViewFeatureSeq = std::vector<ViewFeatures>;

// Supplies the image-feature part of each view slot.
class FeatureSource {
public:
    virtual ~FeatureSource() = default;
    virtual std::vector<std::vector<double>> views(const std::string& node) const = 0;
    virtual std::size_t d_img() const = 0;
};

class MapFeatureSource : public FeatureSource {
public:
    MapFeatureSource(std::map<std::string, std::vector<std::vector<double>>> data,
                     std::size_t d_img)
        : data_(std::move(data)), d_img_(d_img) {}

    std::vector<std::vector<double>> views(const std::string& node) const override {
        auto it = data_.find(node);
        if (it == data_.end()) throw ValidationError("missing image features for node " + node);
        return it->second;
    }

    std::size_t d_img() const override { return d_img_; }

private:
    std::map<std::string, std::vector<std::vector<double>>> data_;
    std::size_t d_img_;
};

// Deterministic stand-in for CNN features: each (node, slot) gets a fixed
// pseudo-random vector derived from the seed and the node id.
class SyntheticFeatureSource : public FeatureSource {
public:
    SyntheticFeatureSource(std::uint64_t seed, std::size_t d_img)
        : seed_(seed), d_img_(d_img) {}

    std::vector<std::vector<double>> views(const std::string& node) const override {
        std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
        for (char c : node) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
        Rng rng(Rng(seed_).derive(h).next_u64());
        std::vector<std::vector<double>> out(kViewSlots, std::vector<double>(d_img_));
        for (auto& slot : out) {
            for (auto& v : slot) v = rng.uniform_real(-1.0, 1.0);
        }
        return out;
    }

    std::size_t d_img() const override { return d_img_; }

private:
    std::uint64_t seed_;
    std::size_t d_img_;
};

inline MapFeatureSource load_features(const std::string& path, std::size_t d_img);

namespace detail {

inline std::size_t nearest_slot(double heading, double pitch) {
    const double tx = std::sin(heading) * std::cos(pitch);
    const double ty = std::cos(heading) * std::cos(pitch);
    const double tz = std::sin(pitch);
    std::size_t best = 0;
    double best_dot = -2.0;
    for (std::size_t s = 0; s < kViewSlots; ++s) {
        const double sh = slot_heading(s), se = slot_elevation(s);
        const double d = std::sin(sh) * std::cos(se) * tx + std::cos(sh) * std::cos(se) * ty +
                         std::sin(se) * tz;
        if (d > best_dot) {
            best_dot = d;
            best = s;
        }
    }
    return best;
}

}  // namespace detail

inline ViewFeatureSeq build_view_features(const NavGraph& g, const Trajectory& t,
                                          const FeatureSource& source) {
    const std::size_t d_img = source.d_img();
    const std::size_t width = d_img + 8;
    ViewFeatureSeq seq;
    double entry = t.initial_heading;
    for (std::size_t k = 0; k < t.nodes.size(); ++k) {
        const auto images = source.views(t.nodes[k]);
        if (images.size() != kViewSlots) {
            throw ValidationError("expected 36 view slots for node " + t.nodes[k]);
        }
        ViewFeatures vf;
        vf.slots.reserve(kViewSlots);
        for (std::size_t s = 0; s < kViewSlots; ++s) {
            if (images[s].size() != d_img) {
                throw ValidationError("bad image feature width for node " + t.nodes[k]);
            }
            std::vector<double> feat = images[s];
            const auto orient = encode_orientation(slot_heading(s), slot_elevation(s),
                                                   wrap_angle(slot_heading(s) - entry),
                                                   slot_elevation(s));
            feat.insert(feat.end(), orient.begin(), orient.end());
            vf.slots.push_back(std::move(feat));
        }
        if (k > 0) {
            const auto d = g.direction_between(t.nodes[k], t.nodes[k - 1]);
            vf.e_prev = vf.slots[detail::nearest_slot(d.heading, d.pitch)];
        } else {
            vf.e_prev.assign(width, 0.0);
        }
        if (k + 1 < t.nodes.size()) {
            const auto d = g.direction_between(t.nodes[k], t.nodes[k + 1]);
            vf.e_next = vf.slots[detail::nearest_slot(d.heading, d.pitch)];
            const Position& a = g.position(t.nodes[k]);
            const Position& b = g.position(t.nodes[k + 1]);
            vf.step_geom = {b.x - a.x, b.y - a.y, b.z - a.z, euclidean(a, b)};
            entry = d.heading;
        } else {
            vf.e_next.assign(width, 0.0);
            vf.step_geom.assign(4, 0.0);
        }
        seq.push_back(std::move(vf));
    }
    return seq;
}

// --- model -------------------------------------------------------------------

struct CompatConfig {
    std::size_t d_e = 32;
    std::size_t d_h = 64;
    std::size_t d_img = 16;
    double lr = 1e-3;
    int steps = 500;
    std::size_t batch = 8;
    std::string loss = "focal";  // "ce" or "focal"
    double gamma = 2.0;
    double beta = 1.0;

    std::size_t hidden() const { return 2 * d_h; }  // width of h^w and h^v
    std::size_t feature_width() const { return d_img + 8; }

    nlohmann::json to_json() const {
        return {{"d_e", d_e},       {"d_h", d_h},   {"d_img", d_img}, {"lr", lr},
                {"steps", steps},   {"batch", batch}, {"loss", loss},  {"gamma", gamma},
                {"beta", beta}};
    }

    static CompatConfig from_json(const nlohmann::json& j) {
        CompatConfig c;
        c.d_e = j.value("d_e", c.d_e);
        c.d_h = j.value("d_h", c.d_h);
        c.d_img = j.value("d_img", c.d_img);
        c.lr = j.value("lr", c.lr);
        c.steps = j.value("steps", c.steps);
        c.batch = j.value("batch", c.batch);
        c.loss = j.value("loss", c.loss);
        c.gamma = j.value("gamma", c.gamma);
        c.beta = j.value("beta", c.beta);
        if (c.loss != "ce" && c.loss != "focal") throw ValidationError("loss must be ce|focal");
        return c;
    }
};

struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> m1, m2;  // adaptive-moment buffers

    std::size_t size() const {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return n;
    }
};

class CompatModel {
public:
    CompatConfig config;
    std::map<std::string, std::size_t> vocab;  // token -> id; id 0 is <unk>
    std::map<std::string, Tensor> tensors;

    std::size_t vocab_rows() const { return vocab.size() + 1; }

    void build_vocabulary(const std::vector<Instruction>& instructions) {
        std::set<std::string> words;
        for (const auto& i : instructions) words.insert(i.tokens.begin(), i.tokens.end());
        vocab.clear();
        std::size_t id = 1;
        for (const auto& w : words) vocab[w] = id++;
    }

    std::vector<std::size_t> token_ids(const std::vector<std::string>& tokens) const {
        std::vector<std::size_t> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) {
            auto it = vocab.find(t);
            ids.push_back(it == vocab.end() ? 0 : it->second);
        }
        return ids;
    }

    Tensor& tensor(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ValidationError("unknown tensor: " + name);
        return it->second;
    }

    const Tensor& tensor(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ValidationError("unknown tensor: " + name);
        return it->second;
    }

    // Allocates all parameters and initializes uniform(-0.1, 0.1), except
    // a = 1, b = 0, log tau = 0.
    void initialize(Rng& rng) {
        tensors.clear();
        const std::size_t H = config.hidden();
        const std::size_t D = config.feature_width();
        declare("embed", {vocab_rows(), config.d_e});
        for (const char* dir : {"fw", "bw"}) {
            for (const char* gate : {"z", "r", "c"}) {
                declare("instr." + std::string(dir) + ".W" + gate, {config.d_h, config.d_e});
                declare("instr." + std::string(dir) + ".U" + gate, {config.d_h, config.d_h});
                declare("instr." + std::string(dir) + ".b" + gate, {config.d_h});
            }
        }
        declare("traj.attn.Wa", {H, D});
        declare("traj.proj.W", {H, 3 * D + 4});
        declare("traj.proj.b", {H});
        for (const char* layer : {"l1", "l2"}) {
            for (const char* gate : {"z", "r", "c"}) {
                declare("traj." + std::string(layer) + ".W" + gate, {H, H});
                declare("traj." + std::string(layer) + ".U" + gate, {H, H});
                declare("traj." + std::string(layer) + ".b" + gate, {H});
            }
        }
        declare("calib.a", {1});
        declare("calib.b", {1});
        declare("calib.logtau", {1});
        for (auto& [name, t] : tensors) {
            for (auto& v : t.value) v = rng.uniform_real(-0.1, 0.1);
        }
        tensor("calib.a").value[0] = 1.0;
        tensor("calib.b").value[0] = 0.0;
        tensor("calib.logtau").value[0] = 0.0;
    }

    // Overwrites embedding rows for known vocabulary tokens with externally
    // computed vectors (the frozen-embedding input path).
    void import_token_embeddings(const std::map<std::string, std::vector<double>>& vectors) {
        Tensor& embed = tensor("embed");
        for (const auto& [token, vec] : vectors) {
            auto it = vocab.find(token);
            if (it == vocab.end()) continue;
            if (vec.size() != config.d_e) {
                throw ValidationError("embedding width mismatch for token " + token);
            }
            std::copy(vec.begin(), vec.end(), embed.value.begin() + it->second * config.d_e);
        }
    }

    void zero_grad() {
        for (auto& [name, t] : tensors) std::fill(t.grad.begin(), t.grad.end(), 0.0);
    }

private:
    void declare(const std::string& name, std::vector<std::size_t> dims) {
        Tensor t;
        t.dims = std::move(dims);
        t.value.assign(t.size(), 0.0);
        t.grad.assign(t.size(), 0.0);
        t.m1.assign(t.size(), 0.0);
        t.m2.assign(t.size(), 0.0);
        tensors.emplace(name, std::move(t));
    }
};

// --- forward pass --------------------------------------------------------------

// One tape plus parameter leaves; grads flow back into CompatModel tensors.
class ModelContext {
public:
    explicit ModelContext(CompatModel& model) : model_(model) {}

    ad::Tape tape;

    ad::NodePtr param(const std::string& name) {
        auto it = leaves_.find(name);
        if (it != leaves_.end()) return it->second;
        auto leaf = tape.leaf(model_.tensor(name).value);
        leaves_.emplace(name, leaf);
        return leaf;
    }

    void accumulate_grads() {
        for (const auto& [name, leaf] : leaves_) {
            Tensor& t = model_.tensor(name);
            for (std::size_t i = 0; i < t.grad.size(); ++i) t.grad[i] += leaf->grad[i];
        }
    }

    CompatModel& model() { return model_; }

private:
    CompatModel& model_;
    std::map<std::string, ad::NodePtr> leaves_;
};

namespace detail {

// Gated recurrent cell: update + reset gates, tanh candidate.
inline ad::NodePtr gru_step(ModelContext& ctx, const std::string& prefix, const ad::NodePtr& x,
                            const ad::NodePtr& h, std::size_t hidden, std::size_t input) {
    auto& tp = ctx.tape;
    auto gate = [&](const char* g, const ad::NodePtr& hh) {
        auto wx = tp.matvec(ctx.param(prefix + ".W" + g), x, hidden, input);
        auto uh = tp.matvec(ctx.param(prefix + ".U" + g), hh, hidden, hidden);
        return tp.add(tp.add(wx, uh), ctx.param(prefix + ".b" + g));
    };
    auto z = tp.sigmoid(gate("z", h));
    auto r = tp.sigmoid(gate("r", h));
    auto c = tp.tanh_(gate("c", tp.mul(r, h)));
    // h' = (1 - z) * h + z * c
    return tp.add(h, tp.mul(z, tp.sub(c, h)));
}

inline ad::NodePtr repeat_scalar(ad::Tape& tp, const ad::NodePtr& s, std::size_t n) {
    return tp.stack(std::vector<ad::NodePtr>(n, s));
}

}  // namespace detail

// h^w: concatenation of the final states of the forward and backward passes.
inline ad::NodePtr encode_instruction(ModelContext& ctx, const std::vector<std::size_t>& ids) {
    if (ids.empty()) throw ValidationError("encode_instruction: empty token sequence");
    const auto& cfg = ctx.model().config;
    auto& tp = ctx.tape;
    auto embed = ctx.param("embed");
    auto run = [&](const char* dir, bool reversed) {
        auto h = tp.leaf(std::vector<double>(cfg.d_h, 0.0));
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t id = ids[reversed ? ids.size() - 1 - k : k];
            auto x = tp.row(embed, id, cfg.d_e);
            h = detail::gru_step(ctx, "instr." + std::string(dir), x, h, cfg.d_h, cfg.d_e);
        }
        return h;
    };
    return tp.concat({run("fw", false), run("bw", true)});
}

// h^v: attention over the 36 slot features, projection, two stacked cells.
inline ad::NodePtr encode_trajectory(ModelContext& ctx, const ViewFeatureSeq& seq) {
    if (seq.empty()) throw ValidationError("encode_trajectory: empty trajectory");
    const auto& cfg = ctx.model().config;
    const std::size_t H = cfg.hidden();
    const std::size_t D = cfg.feature_width();
    auto& tp = ctx.tape;
    auto wa = ctx.param("traj.attn.Wa");

    auto h1 = tp.leaf(std::vector<double>(H, 0.0));
    auto h2 = tp.leaf(std::vector<double>(H, 0.0));
    for (const auto& vf : seq) {
        // Bilinear attention: weights over slots proportional to
        // exp(h2_prev^T Wa e_k); a_t is the weighted sum of slot features.
        auto query = tp.matvec_t(wa, h2, H, D);
        auto slot_rows = std::make_shared<std::vector<std::vector<double>>>(vf.slots);
        std::vector<double> flat;
        flat.reserve(kViewSlots * D);
        for (const auto& s : vf.slots) flat.insert(flat.end(), s.begin(), s.end());
        auto scores = tp.matvec(tp.leaf(std::move(flat)), query, kViewSlots, D);
        auto weights = tp.softmax(scores);
        auto attended = tp.weighted_sum(weights, slot_rows);

        std::vector<double> fixed = vf.e_prev;
        fixed.insert(fixed.end(), vf.e_next.begin(), vf.e_next.end());
        auto head = tp.leaf(std::move(fixed));
        auto v_in = tp.concat({head, attended, tp.leaf(vf.step_geom)});
        auto v = tp.add(tp.matvec(ctx.param("traj.proj.W"), v_in, H, 3 * D + 4),
                        ctx.param("traj.proj.b"));
        h1 = detail::gru_step(ctx, "traj.l1", v, h1, H, H);
        h2 = detail::gru_step(ctx, "traj.l2", h1, h2, H, H);
    }
    return h2;
}

inline ad::NodePtr compatibility_score(ModelContext& ctx, const ad::NodePtr& h_v,
                                       const ad::NodePtr& h_w) {
    return ctx.tape.cosine(h_v, h_w);
}

// --- losses (plain numeric forms) ---------------------------------------------

inline double classification_prob(double score, double a, double b) {
    return 1.0 / (1.0 + std::exp(-(a * score + b)));
}

enum class LossKind { CE, Focal };

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "ce") return LossKind::CE;
    if (s == "focal") return LossKind::Focal;
    throw ValidationError("unknown loss kind: " + s);
}

inline double classification_loss(double p, int label, LossKind kind, double gamma = 2.0) {
    const double pt = std::clamp(label ? p : 1.0 - p, 1e-12, 1.0 - 1e-12);
    const double ce = -std::log(pt);
    if (kind == LossKind::CE) return ce;
    return std::pow(1.0 - pt, gamma) * ce;
}

inline double contrastive_loss(const std::vector<std::vector<double>>& s,
                               const std::vector<int>& mask, double tau) {
    const std::size_t n = s.size();
    if (tau <= 0.0) throw ValidationError("contrastive_loss: tau must be positive");
    int msum = 0;
    for (int m : mask) msum += m;
    if (msum == 0) throw ValidationError("contrastive_loss: mask all zero");
    auto row_loss = [&](auto at, std::size_t i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, at(i, j) / tau);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(at(i, j) / tau - mx);
        return mx + std::log(z) - at(i, i) / tau;
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        total += row_loss([&](std::size_t r, std::size_t c) { return s[r][c]; }, i);
        total += row_loss([&](std::size_t r, std::size_t c) { return s[c][r]; }, i);
    }
    return total / static_cast<double>(msum);
}

inline double total_loss(const std::vector<std::vector<double>>& s, const std::vector<int>& mask,
                         double tau, double a, double b, LossKind kind, double gamma = 2.0,
                         double beta = 1.0) {
    double cls = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        cls += classification_loss(classification_prob(s[i][i], a, b), mask[i], kind, gamma);
    }
    return contrastive_loss(s, mask, tau) + beta / static_cast<double>(s.size()) * cls;
}

// --- losses (differentiable forms) ----------------------------------------------

namespace detail {

inline ad::NodePtr classification_loss_node(ModelContext& ctx, const ad::NodePtr& score,
                                            int label, LossKind kind, double gamma) {
    auto& tp = ctx.tape;
    auto logit = tp.add(tp.mul(ctx.param("calib.a"), score), ctx.param("calib.b"));
    auto p = tp.sigmoid(logit);
    auto pt = label ? p : tp.sub(tp.scalar(1.0), p);
    auto ce = tp.neg(tp.safelog(pt));
    if (kind == LossKind::CE) return ce;
    auto one_minus = tp.sub(tp.scalar(1.0), pt);
    if (gamma == 2.0) return tp.mul(tp.mul(one_minus, one_minus), ce);
    return tp.mul(tp.exp_(tp.scale(tp.safelog(one_minus), gamma)), ce);
}

inline ad::NodePtr contrastive_loss_node(ModelContext& ctx,
                                         const std::vector<std::vector<ad::NodePtr>>& s,
                                         const std::vector<int>& mask) {
    auto& tp = ctx.tape;
    const std::size_t n = s.size();
    int msum = 0;
    for (int m : mask) msum += m;
    if (msum == 0) throw ValidationError("contrastive_loss: mask all zero");
    auto inv_tau = tp.exp_(tp.neg(ctx.param("calib.logtau")));
    ad::NodePtr total = tp.scalar(0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        for (bool row : {true, false}) {
            std::vector<ad::NodePtr> line;
            line.reserve(n);
            for (std::size_t j = 0; j < n; ++j) line.push_back(row ? s[i][j] : s[j][i]);
            auto logits = tp.mul(tp.stack(line), repeat_scalar(tp, inv_tau, n));
            total = tp.add(total, tp.sub(tp.logsumexp(logits), tp.pick(logits, i)));
        }
    }
    return tp.scale(total, 1.0 / static_cast<double>(msum));
}

}  // namespace detail

// --- batches and training --------------------------------------------------------

enum class Provenance { GroundTruth, Paraphrase, TextPerturbed, PathPerturbed, Generated };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::GroundTruth: return "ground_truth";
        case Provenance::Paraphrase: return "paraphrase";
        case Provenance::TextPerturbed: return "text_perturbed";
        case Provenance::PathPerturbed: return "path_perturbed";
        case Provenance::Generated: return "generated";
    }
    return "?";
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "ground_truth") return Provenance::GroundTruth;
    if (s == "paraphrase") return Provenance::Paraphrase;
    if (s == "text_perturbed") return Provenance::TextPerturbed;
    if (s == "path_perturbed") return Provenance::PathPerturbed;
    if (s == "generated") return Provenance::Generated;
    throw ValidationError("unknown provenance: " + s);
}

struct BatchPair {
    std::string id;
    std::vector<std::size_t> token_ids;
    ViewFeatureSeq features;
    Provenance provenance = Provenance::GroundTruth;
};

struct Minibatch {
    std::vector<BatchPair> pairs;

    std::vector<int> mask() const {
        std::vector<int> m;
        m.reserve(pairs.size());
        for (const auto& p : pairs) {
            m.push_back(p.provenance == Provenance::GroundTruth ||
                                p.provenance == Provenance::Paraphrase
                            ? 1
                            : 0);
        }
        return m;
    }
};

// Positive pairs plus everything needed to mine negatives on the fly.
struct TrainingData {
    const NavGraph* graph = nullptr;
    const FeatureSource* features = nullptr;
    std::vector<std::pair<Instruction, Trajectory>> positives;
    std::vector<Provenance> positive_provenance;  // optional, defaults GroundTruth
};

// N/2 unperturbed pairs, N/4 text-perturbed, N/4 path-perturbed; no source
// trajectory repeats within the batch.
inline Minibatch sample_minibatch(const CompatModel& model, const TrainingData& data,
                                  std::size_t n, Rng& rng) {
    if (n % 4 != 0) throw ValidationError("sample_minibatch: batch size must be divisible by 4");
    if (data.positives.size() < n) throw ValidationError("sample_minibatch: insufficient data");
    std::set<std::string> used;
    std::vector<std::size_t> chosen;
    for (int attempt = 0; chosen.size() < n && attempt < 20000; ++attempt) {
        const std::size_t idx = rng.uniform_index(data.positives.size());
        std::string key;
        for (const auto& node : data.positives[idx].second.nodes) key += node + "|";
        if (used.insert(key).second) chosen.push_back(idx);
    }
    if (chosen.size() < n) throw ValidationError("sample_minibatch: insufficient data");

    Minibatch batch;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& [instr, traj] = data.positives[chosen[k]];
        BatchPair pair;
        pair.id = instr.id;
        if (k < n / 2) {
            pair.provenance = k < data.positive_provenance.size()
                                  ? data.positive_provenance[chosen[k]]
                                  : Provenance::GroundTruth;
            pair.token_ids = model.token_ids(instr.tokens);
            pair.features = build_view_features(*data.graph, traj, *data.features);
        } else if (k < n / 2 + n / 4) {
            const auto negative = sample_text_negative(instr, rng);
            pair.provenance = Provenance::TextPerturbed;
            pair.token_ids = model.token_ids(negative.instruction.tokens);
            pair.features = build_view_features(*data.graph, traj, *data.features);
        } else {
            const auto negative = sample_path_negative(*data.graph, traj, rng);
            pair.provenance = Provenance::PathPerturbed;
            pair.token_ids = model.token_ids(instr.tokens);
            pair.features = build_view_features(*data.graph, negative.trajectory, *data.features);
        }
        batch.pairs.push_back(std::move(pair));
    }
    return batch;
}

struct BatchForward {
    std::unique_ptr<ModelContext> ctx;
    std::vector<std::vector<ad::NodePtr>> score_nodes;
    ad::NodePtr loss;
};

// Which part of the objective to build; Combined is the training loss.
enum class LossTerm { Combined, ContrastiveOnly, ClassificationOnly };

inline BatchForward forward_batch_loss(CompatModel& model, const Minibatch& batch,
                                       LossTerm term = LossTerm::Combined) {
    auto fwd = BatchForward{std::make_unique<ModelContext>(model), {}, nullptr};
    ModelContext& ctx = *fwd.ctx;
    auto& tp = ctx.tape;
    const std::size_t n = batch.pairs.size();
    std::vector<ad::NodePtr> hw, hv;
    for (const auto& pair : batch.pairs) {
        hw.push_back(encode_instruction(ctx, pair.token_ids));
        hv.push_back(encode_trajectory(ctx, pair.features));
    }
    fwd.score_nodes.assign(n, std::vector<ad::NodePtr>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            fwd.score_nodes[i][j] = compatibility_score(ctx, hv[j], hw[i]);
        }
    }
    const auto mask = batch.mask();
    const LossKind kind = loss_kind_from_string(model.config.loss);
    ad::NodePtr cls = tp.scalar(0.0);
    for (std::size_t i = 0; i < n; ++i) {
        cls = tp.add(cls, detail::classification_loss_node(ctx, fwd.score_nodes[i][i], mask[i],
                                                           kind, model.config.gamma));
    }
    cls = tp.scale(cls, model.config.beta / static_cast<double>(n));
    switch (term) {
        case LossTerm::ContrastiveOnly:
            fwd.loss = detail::contrastive_loss_node(ctx, fwd.score_nodes, mask);
            break;
        case LossTerm::ClassificationOnly:
            fwd.loss = cls;
            break;
        case LossTerm::Combined:
            fwd.loss = tp.add(detail::contrastive_loss_node(ctx, fwd.score_nodes, mask), cls);
            break;
    }
    return fwd;
}

inline double score_pair(CompatModel& model, const std::vector<std::size_t>& token_ids,
                         const ViewFeatureSeq& features) {
    ModelContext ctx(model);
    auto h_w = encode_instruction(ctx, token_ids);
    auto h_v = encode_trajectory(ctx, features);
    return compatibility_score(ctx, h_v, h_w)->value[0];
}

inline std::vector<std::vector<double>> score_matrix(CompatModel& model, const Minibatch& batch) {
    ModelContext ctx(model);
    std::vector<ad::NodePtr> hw, hv;
    for (const auto& pair : batch.pairs) {
        hw.push_back(encode_instruction(ctx, pair.token_ids));
        hv.push_back(encode_trajectory(ctx, pair.features));
    }
    const std::size_t n = batch.pairs.size();
    std::vector<std::vector<double>> s(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            s[i][j] = compatibility_score(ctx, hv[j], hw[i])->value[0];
        }
    }
    return s;
}

// Adaptive-moment update, decay 0.9/0.999, epsilon 1e-8.
inline void adam_step(CompatModel& model, double lr, int step) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, step);
    const double c2 = 1.0 - std::pow(b2, step);
    for (auto& [name, t] : model.tensors) {
        for (std::size_t i = 0; i < t.value.size(); ++i) {
            const double g = t.grad[i];
            t.m1[i] = b1 * t.m1[i] + (1.0 - b1) * g;
            t.m2[i] = b2 * t.m2[i] + (1.0 - b2) * g * g;
            t.value[i] -= lr * (t.m1[i] / c1) / (std::sqrt(t.m2[i] / c2) + eps);
        }
    }
}

struct TrainResult {
    std::vector<double> loss_trace;
};

inline TrainResult train(CompatModel& model, const TrainingData& data, Rng& rng) {
    TrainResult result;
    for (int step = 1; step <= model.config.steps; ++step) {
        Minibatch batch = sample_minibatch(model, data, model.config.batch, rng);
        auto fwd = forward_batch_loss(model, batch);
        const double loss = fwd.loss->value[0];
        if (!std::isfinite(loss)) {
            throw NumericError("non-finite loss at step " + std::to_string(step));
        }
        model.zero_grad();
        fwd.ctx->tape.backward(fwd.loss);
        fwd.ctx->accumulate_grads();
        adam_step(model, model.config.lr, step);
        result.loss_trace.push_back(loss);
    }
    return result;
}

// --- gradient check ----------------------------------------------------------

struct GradCheckEntry {
    std::string tensor;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    bool pass = true;
    std::size_t checked = 0;
    GradCheckEntry worst;
};

inline void compute_batch_gradients(CompatModel& model, const Minibatch& batch,
                                    LossTerm term = LossTerm::Combined) {
    auto fwd = forward_batch_loss(model, batch, term);
    model.zero_grad();
    fwd.ctx->tape.backward(fwd.loss);
    fwd.ctx->accumulate_grads();
}

// Central-difference verification over a random parameter subset. The three
// calibration scalars are always included. With recompute_analytic = false
// the gradients already stored on the model are checked instead.
inline GradCheckReport gradient_check(CompatModel& model, const Minibatch& batch,
                                      double eps = 1e-4, double tol = 1e-4,
                                      std::size_t min_params = 200, std::uint64_t seed = 0,
                                      bool recompute_analytic = true,
                                      LossTerm term = LossTerm::Combined) {
    if (recompute_analytic) compute_batch_gradients(model, batch, term);

    std::vector<std::pair<std::string, std::size_t>> targets;
    targets.emplace_back("calib.a", 0);
    targets.emplace_back("calib.b", 0);
    targets.emplace_back("calib.logtau", 0);
    std::vector<std::string> names;
    for (const auto& [name, t] : model.tensors) names.push_back(name);
    Rng rng(seed);
    while (targets.size() < min_params) {
        const auto& name = names[rng.uniform_index(names.size())];
        targets.emplace_back(name, rng.uniform_index(model.tensor(name).value.size()));
    }

    GradCheckReport report;
    for (const auto& [name, index] : targets) {
        Tensor& t = model.tensor(name);
        const double saved = t.value[index];
        t.value[index] = saved + eps;
        const double plus = forward_batch_loss(model, batch, term).loss->value[0];
        t.value[index] = saved - eps;
        const double minus = forward_batch_loss(model, batch, term).loss->value[0];
        t.value[index] = saved;
        const double numeric = (plus - minus) / (2.0 * eps);
        const double analytic = t.grad[index];
        const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
        ++report.checked;
        if (rel > report.worst.rel_err) {
            report.worst = {name, index, analytic, numeric, rel};
        }
    }
    report.pass = report.worst.rel_err < tol;
    return report;
}

// --- serialization -------------------------------------------------------------

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ValidationError("model file truncated");
    return v;
}

}  // namespace detail

inline void save_model(const CompatModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open model file for writing: " + path);
    out.write("ITCM", 4);
    detail::write_pod<std::uint32_t>(out, kModelFormatVersion);
    nlohmann::json meta = {{"config", model.config.to_json()}, {"vocab", model.vocab}};
    const std::string meta_str = meta.dump();
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(meta_str.size()));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.tensors.size()));
    for (const auto& [name, t] : model.tensors) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (std::size_t d : t.dims) detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : t.value) detail::write_pod<float>(out, static_cast<float>(v));
    }
    if (!out) throw ValidationError("failed writing model file: " + path);
}

inline CompatModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open model file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ITCM", 4) != 0) {
        throw ValidationError("not a model file (bad magic): " + path);
    }
    const auto version = detail::read_pod<std::uint32_t>(in);
    if (version != kModelFormatVersion) {
        throw ValidationError("model format version mismatch: " + std::to_string(version));
    }
    const auto meta_len = detail::read_pod<std::uint32_t>(in);
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), meta_len);
    if (!in) throw ValidationError("model file truncated");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad model metadata: ") + e.what());
    }
    CompatModel model;
    model.config = CompatConfig::from_json(meta.at("config"));
    model.vocab = meta.at("vocab").get<std::map<std::string, std::size_t>>();
    Rng dummy(0);
    model.initialize(dummy);
    const auto count = detail::read_pod<std::uint32_t>(in);
    if (count != model.tensors.size()) {
        throw ValidationError("model tensor count mismatch");
    }
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name_len = detail::read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw ValidationError("model file truncated");
        Tensor& t = model.tensor(name);
        const auto rank = detail::read_pod<std::uint32_t>(in);
        if (rank != t.dims.size()) throw ValidationError("tensor rank mismatch: " + name);
        for (std::size_t d = 0; d < rank; ++d) {
            if (detail::read_pod<std::uint32_t>(in) != t.dims[d]) {
                throw ValidationError("tensor shape mismatch: " + name);
            }
        }
        for (double& v : t.value) v = static_cast<double>(detail::read_pod<float>(in));
    }
    return model;
}

inline MapFeatureSource load_features(const std::string& path, std::size_t d_img) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open feature file: " + path);
    std::map<std::string, std::vector<std::vector<double>>> data;
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
        auto views = j.at("views").get<std::vector<std::vector<double>>>();
        if (views.size() != kViewSlots) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 36 views");
        }
        for (const auto& v : views) {
            if (v.size() != d_img) {
                throw ValidationError(path + ":" + std::to_string(lineno) +
                                      ": feature width mismatch");
            }
        }
        data[j.at("node").get<std::string>()] = std::move(views);
    }
    return MapFeatureSource(std::move(data), d_img);
}

}  // namespace itw
