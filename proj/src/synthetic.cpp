#include "muffin/synthetic.hpp"

#include "muffin/csv.hpp"
#include "muffin/errors.hpp"
#include "muffin/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace muffin {

using nlohmann::json;

namespace {

struct PairCells {
    double p11, p10, p01, p00;
};

PairCells pair_cells(double a, double b, double rate, bool complementary) {
    PairCells c{};
    if (complementary) {
        c.p11 = (a + b - rate) / 2.0;
    } else {
        c.p11 = std::min(a, b); // maximal overlap: disagreement only |a-b|
    }
    c.p10 = a - c.p11;
    c.p01 = b - c.p11;
    c.p00 = 1.0 - c.p11 - c.p10 - c.p01;
    return c;
}

// Integer counts summing to n whose shares best match `probs`
// (largest-remainder, ties toward the earlier entry).
std::vector<std::size_t> quota_counts(std::size_t n, const std::vector<double>& probs) {
    std::vector<std::size_t> counts(probs.size());
    std::vector<double> frac(probs.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double q = probs[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
        frac[i] = q - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    for (std::size_t left = n - assigned; left > 0; --left) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < probs.size(); ++i)
            if (frac[i] > frac[best]) best = i;
        ++counts[best];
        frac[best] -= 1.0;
    }
    return counts;
}

} // namespace

void SyntheticConfig::validate() const {
    schema.validate();
    if (num_classes < 2) throw InfeasibleError("synthetic scenarios need at least 2 classes");
    if (num_samples < 1) throw InfeasibleError("num_samples must be positive");
    if (model_names.size() < 2) throw InfeasibleError("synthetic pool needs at least 2 models");
    if (strata.empty()) throw InfeasibleError("at least one stratum required");

    double total = 0.0;
    for (std::size_t s = 0; s < strata.size(); ++s) {
        const auto& st = strata[s];
        std::string where = "stratum " + std::to_string(s);
        if (st.group_by_attr.size() != schema.size())
            throw InfeasibleError(where + " must assign one group per attribute");
        for (std::size_t a = 0; a < schema.size(); ++a)
            if (st.group_by_attr[a] < 0 ||
                st.group_by_attr[a] >= static_cast<int>(schema.attributes[a].groups.size()))
                throw InfeasibleError(where + " group index out of range for attribute '" +
                                      schema.attributes[a].name + "'");
        if (st.fraction <= 0.0) throw InfeasibleError(where + " fraction must be positive");
        total += st.fraction;
        if (st.model_accuracy.size() != model_names.size())
            throw InfeasibleError(where + " must give one accuracy target per model");
        for (double acc : st.model_accuracy)
            if (acc < 0.0 || acc > 1.0)
                throw InfeasibleError(where + " accuracy target out of [0,1]");
        const double inv_m = 1.0 / static_cast<double>(num_classes);
        for (auto [lo, hi] : {std::pair{st.conf_correct_lo, st.conf_correct_hi},
                              std::pair{st.conf_wrong_lo, st.conf_wrong_hi}})
            if (!(lo <= hi) || lo <= inv_m || hi > 1.0)
                throw InfeasibleError(where + " confidence range must satisfy 1/M < lo <= hi <= 1");
        if (st.complementary) {
            double a = st.model_accuracy[0], b = st.model_accuracy[1];
            double upper = std::min(a + b, 2.0 - a - b);
            if (complementarity > upper + 1e-12)
                throw InfeasibleError("complementarity rate " + format_double(complementarity) +
                                      " exceeds min(a+b, 2-a-b) = " + format_double(upper) +
                                      " for accuracy targets a=" + format_double(a) + ", b=" +
                                      format_double(b) + " in " + where);
            if (complementarity < std::abs(a - b) - 1e-12)
                throw InfeasibleError("complementarity rate " + format_double(complementarity) +
                                      " is below |a-b| = " + format_double(std::abs(a - b)) + " in " + where);
        }
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw InfeasibleError("stratum fractions sum to " + format_double(total) + ", expected 1");
}

bool SyntheticConfig::target_group_accuracy(std::size_t model, std::size_t attr, int group,
                                            double& out) const {
    double mass = 0.0, acc = 0.0;
    for (const auto& st : strata) {
        if (st.group_by_attr[attr] != group) continue;
        mass += st.fraction;
        acc += st.fraction * st.model_accuracy[model];
    }
    if (mass <= 0.0) return false;
    out = acc / mass;
    return true;
}

bool SyntheticConfig::target_group_complementarity(std::size_t attr, int group, double& out) const {
    double mass = 0.0, rate = 0.0;
    for (const auto& st : strata) {
        if (st.group_by_attr[attr] != group) continue;
        auto cells = pair_cells(st.model_accuracy[0], st.model_accuracy[1],
                                complementarity, st.complementary);
        mass += st.fraction;
        rate += st.fraction * (cells.p10 + cells.p01);
    }
    if (mass <= 0.0) return false;
    out = rate / mass;
    return true;
}

std::pair<Dataset, ModelPool> generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t n = static_cast<std::size_t>(config.num_samples);
    const std::size_t m = static_cast<std::size_t>(config.num_classes);
    const std::size_t n_models = config.model_names.size();
    Rng rng(mix_seed(seed, 0x5f4e713cULL));

    // Population: stratum quota counts, then one global shuffle so dataset
    // order carries no stratum signal.
    std::vector<double> fractions;
    for (const auto& st : config.strata) fractions.push_back(st.fraction);
    auto stratum_counts = quota_counts(n, fractions);

    std::vector<std::size_t> stratum_of;
    stratum_of.reserve(n);
    for (std::size_t s = 0; s < config.strata.size(); ++s)
        stratum_of.insert(stratum_of.end(), stratum_counts[s], s);
    rng.shuffle(stratum_of);

    Dataset ds;
    ds.schema = config.schema;
    ds.num_classes = config.num_classes;
    ds.samples.reserve(n);
    char id_buf[32];
    for (std::size_t i = 0; i < n; ++i) {
        const auto& st = config.strata[stratum_of[i]];
        LabeledSample sample;
        std::snprintf(id_buf, sizeof(id_buf), "s%06zu", i);
        sample.sample_id = id_buf;
        sample.label = static_cast<int>(rng.index(m));
        sample.group_of = st.group_by_attr;
        ds.samples.push_back(std::move(sample));
    }

    // Correctness assignment per stratum by quota, so realized accuracies and
    // complementarity track the targets up to rounding.
    std::vector<std::vector<std::size_t>> members(config.strata.size());
    for (std::size_t i = 0; i < n; ++i) members[stratum_of[i]].push_back(i);

    // correct[model][sample]
    std::vector<std::vector<char>> correct(n_models, std::vector<char>(n, 0));
    for (std::size_t s = 0; s < config.strata.size(); ++s) {
        const auto& st = config.strata[s];
        auto& ids = members[s];
        if (ids.empty()) continue;

        auto cells = pair_cells(st.model_accuracy[0], st.model_accuracy[1],
                                config.complementarity, st.complementary);
        auto counts = quota_counts(ids.size(), {cells.p11, cells.p10, cells.p01, cells.p00});
        std::vector<int> cell_of;
        for (int c = 0; c < 4; ++c) cell_of.insert(cell_of.end(), counts[c], c);
        rng.shuffle(cell_of);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            correct[0][ids[k]] = (cell_of[k] == 0 || cell_of[k] == 1);
            correct[1][ids[k]] = (cell_of[k] == 0 || cell_of[k] == 2);
        }

        for (std::size_t mod = 2; mod < n_models; ++mod) {
            double acc = st.model_accuracy[mod];
            auto two = quota_counts(ids.size(), {acc, 1.0 - acc});
            std::vector<int> ok;
            ok.insert(ok.end(), two[0], 1);
            ok.insert(ok.end(), two[1], 0);
            rng.shuffle(ok);
            for (std::size_t k = 0; k < ids.size(); ++k)
                correct[mod][ids[k]] = static_cast<char>(ok[k]);
        }
    }

    // Score rows: argmax class gets a confidence draw, the rest share the
    // remainder. On non-complementary strata the first two models pick the
    // same wrong class when both miss, preserving consensus there.
    ModelPool pool;
    for (std::size_t mod = 0; mod < n_models; ++mod) {
        ModelEntry entry;
        entry.name = config.model_names[mod];
        entry.score_kind = ScoreKind::probability;
        entry.scores = Matrix(n, m);
        pool.entries.push_back(std::move(entry));
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto& st = config.strata[stratum_of[i]];
        const int label = ds.samples[i].label;
        int shared_wrong = -1;
        for (std::size_t mod = 0; mod < n_models; ++mod) {
            int arg;
            double conf;
            if (correct[mod][i]) {
                arg = label;
                conf = rng.uniform(st.conf_correct_lo, st.conf_correct_hi);
            } else {
                if (mod == 1 && !st.complementary && !correct[0][i] && shared_wrong >= 0) {
                    arg = shared_wrong;
                } else {
                    std::size_t pick = rng.index(m - 1);
                    arg = static_cast<int>(pick) + (static_cast<int>(pick) >= label ? 1 : 0);
                }
                if (mod == 0) shared_wrong = arg;
                conf = rng.uniform(st.conf_wrong_lo, st.conf_wrong_hi);
            }
            auto row = pool.entries[mod].scores.row(i);
            double rest = (1.0 - conf) / static_cast<double>(m - 1);
            for (std::size_t c = 0; c < m; ++c) row[c] = rest;
            row[arg] = conf;
        }
    }

    ds.validate();
    pool.validate(ds);
    return {std::move(ds), std::move(pool)};
}

// ---- presets ---------------------------------------------------------------

namespace {

AttributeSchema two_attr_schema() {
    AttributeSchema schema;
    schema.attributes.push_back({"age", {"young", "old", "elder"}, std::nullopt});
    schema.attributes.push_back({"site", {"head", "hand", "foot"}, std::nullopt});
    return schema;
}

// Two models whose complementary errors concentrate on the below-average
// groups of both attributes. The old/hand segment is unprivileged under both
// attributes at once. Disagreements come in three flavours per segment:
// an inverted-signal slice (the correct model is the less confident one),
// a normal-signal slice, and a contested slice whose confidences carry no
// information at all, so its resolution follows whichever side carries more
// training mass. That makes the proxy weights genuinely load-bearing: with
// them the doubly unprivileged slice outweighs the others.
SyntheticConfig complementary_2attr() {
    SyntheticConfig cfg;
    cfg.num_classes = 2;
    cfg.num_samples = 4000;
    cfg.schema = two_attr_schema();
    cfg.model_names = {"model-a", "model-b"};
    cfg.complementarity = 0.30;

    auto add = [&cfg](const char* age, const char* site, double frac, double acc,
                      bool comp, double ccl, double cch, double cwl, double cwh) {
        SyntheticStratum st;
        st.group_by_attr = {cfg.schema.attributes[0].group_index(age),
                            cfg.schema.attributes[1].group_index(site)};
        st.fraction = frac;
        st.model_accuracy = {acc, acc};
        st.complementary = comp;
        st.conf_correct_lo = ccl;
        st.conf_correct_hi = cch;
        st.conf_wrong_lo = cwl;
        st.conf_wrong_hi = cwh;
        cfg.strata.push_back(std::move(st));
    };

    // privileged bulk: accurate, consensual
    add("young", "head", 0.49, 0.90, false, 0.70, 0.90, 0.58, 0.78);
    // doubly unprivileged: inverted-signal and contested slices
    add("old", "hand", 0.10, 0.66, true, 0.57, 0.73, 0.73, 0.89);
    add("old", "hand", 0.05, 0.66, true, 0.60, 0.70, 0.60, 0.70);
    // singly unprivileged: normal-signal and contested slices
    add("elder", "head", 0.065, 0.66, true, 0.84, 0.96, 0.51, 0.59);
    add("young", "foot", 0.065, 0.66, true, 0.84, 0.96, 0.51, 0.59);
    add("elder", "head", 0.025, 0.66, true, 0.60, 0.70, 0.60, 0.70);
    add("young", "foot", 0.025, 0.66, true, 0.60, 0.70, 0.60, 0.70);
    // singly unprivileged consensus-only filler
    add("elder", "head", 0.09, 0.66, false, 0.70, 0.90, 0.58, 0.78);
    add("young", "foot", 0.09, 0.66, false, 0.70, 0.90, 0.58, 0.78);
    return cfg;
}

// Perfect pool, every group at accuracy 1: nothing is unprivileged, the
// proxy dataset comes out empty, and every fairness score is zero.
SyntheticConfig uniform_fair() {
    SyntheticConfig cfg;
    cfg.num_classes = 2;
    cfg.num_samples = 2000;
    AttributeSchema schema;
    schema.attributes.push_back({"age", {"young", "old"}, std::nullopt});
    schema.attributes.push_back({"site", {"head", "hand"}, std::nullopt});
    cfg.schema = schema;
    cfg.model_names = {"model-a", "model-b"};
    cfg.complementarity = 0.0;

    const char* ages[] = {"young", "old"};
    const char* sites[] = {"head", "hand"};
    for (const char* a : ages)
        for (const char* s : sites) {
            SyntheticStratum st;
            st.group_by_attr = {schema.attributes[0].group_index(a),
                                schema.attributes[1].group_index(s)};
            st.fraction = 0.25;
            st.model_accuracy = {1.0, 1.0};
            st.complementary = false;
            cfg.strata.push_back(std::move(st));
        }
    return cfg;
}

} // namespace

SyntheticConfig preset_config(const std::string& name) {
    if (name == "complementary-2attr") return complementary_2attr();
    if (name == "uniform-fair") return uniform_fair();
    throw ValidationError("unknown preset '" + name + "' (available: complementary-2attr, uniform-fair)");
}

std::vector<std::string> preset_names() { return {"complementary-2attr", "uniform-fair"}; }

SyntheticConfig synthetic_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open synthetic config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("malformed synthetic config JSON in " + path + ": " + e.what());
    }

    SyntheticConfig cfg;
    try {
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.num_samples = j.at("num_samples").get<int>();
        cfg.complementarity = j.value("complementarity", 0.0);
        for (const auto& a : j.at("attributes")) {
            Attribute attr;
            attr.name = a.at("name").get<std::string>();
            for (const auto& g : a.at("groups")) attr.groups.push_back(g.get<std::string>());
            if (a.contains("unknown_group") && !a.at("unknown_group").is_null())
                attr.unknown_group = a.at("unknown_group").get<std::string>();
            cfg.schema.attributes.push_back(std::move(attr));
        }
        for (const auto& name : j.at("models")) cfg.model_names.push_back(name.get<std::string>());
        for (const auto& s : j.at("strata")) {
            SyntheticStratum st;
            for (const auto& attr : cfg.schema.attributes) {
                std::string g = s.at("groups").at(attr.name).get<std::string>();
                int gi = attr.group_index(g);
                if (gi < 0)
                    throw ValidationError("stratum group '" + g + "' not in attribute '" + attr.name + "'");
                st.group_by_attr.push_back(gi);
            }
            st.fraction = s.at("fraction").get<double>();
            for (const auto& acc : s.at("accuracy")) st.model_accuracy.push_back(acc.get<double>());
            st.complementary = s.value("complementary", false);
            if (s.contains("conf_correct")) {
                st.conf_correct_lo = s.at("conf_correct").at(0).get<double>();
                st.conf_correct_hi = s.at("conf_correct").at(1).get<double>();
            }
            if (s.contains("conf_wrong")) {
                st.conf_wrong_lo = s.at("conf_wrong").at(0).get<double>();
                st.conf_wrong_hi = s.at("conf_wrong").at(1).get<double>();
            }
            cfg.strata.push_back(std::move(st));
        }
    } catch (const json::exception& e) {
        throw ValidationError("synthetic config " + path + " missing field: " + e.what());
    }
    return cfg;
}

} // namespace muffin
