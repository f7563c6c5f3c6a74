#include "muffin/controller.hpp"

#include "muffin/errors.hpp"
#include "muffin/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace muffin {

using nlohmann::json;

// ---- search space ----------------------------------------------------------

void SearchSpace::validate() const {
    if (n_select < 1) throw ValidationError("n_select must be >= 1");
    if (pool_size < n_select)
        throw ValidationError("n_select " + std::to_string(n_select) + " exceeds pool size " +
                              std::to_string(pool_size));
    if (depth_choices.empty() || width_choices.empty() || activation_choices.empty())
        throw ValidationError("search space choice lists must be non-empty");
    for (int d : depth_choices)
        if (d < 1) throw ValidationError("depth choices must be >= 1");
    for (int w : width_choices)
        if (w < 1) throw ValidationError("width choices must be >= 1");
    if (pinned_model >= pool_size)
        throw ValidationError("pinned model index out of pool range");
}

int SearchSpace::max_depth() const {
    return *std::max_element(depth_choices.begin(), depth_choices.end());
}

double SearchSpace::structure_count() const {
    // unordered distinct model subsets
    double subsets = 1.0;
    int free_picks = n_select - (pinned_model >= 0 ? 1 : 0);
    int candidates = pool_size - (pinned_model >= 0 ? 1 : 0);
    for (int i = 0; i < free_picks; ++i)
        subsets = subsets * static_cast<double>(candidates - i) / static_cast<double>(i + 1);
    double heads = 0.0;
    for (int d : depth_choices)
        heads += std::pow(static_cast<double>(width_choices.size()) *
                              static_cast<double>(activation_choices.size()),
                          d);
    return subsets * heads;
}

std::string FusionSpec::key() const {
    std::vector<int> models = selected_models;
    std::sort(models.begin(), models.end());
    std::ostringstream out;
    out << "m";
    for (int m : models) out << ':' << m;
    out << "|d" << depth << "|w";
    for (int w : widths) out << ':' << w;
    out << "|a";
    for (Activation a : activations) out << ':' << to_string(a);
    return out.str();
}

void FusionSpec::validate(const SearchSpace& space) const {
    if (static_cast<int>(selected_models.size()) != space.n_select)
        throw ValidationError("unrealizable spec: expected " + std::to_string(space.n_select) +
                              " selected models");
    std::vector<int> sorted = selected_models;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ValidationError("unrealizable spec: repeated model selection");
    for (int m : selected_models)
        if (m < 0 || m >= space.pool_size)
            throw ValidationError("unrealizable spec: model index out of pool range");
    if (space.pinned_model >= 0 &&
        std::find(selected_models.begin(), selected_models.end(), space.pinned_model) ==
            selected_models.end())
        throw ValidationError("unrealizable spec: pinned model not selected");
    if (std::find(space.depth_choices.begin(), space.depth_choices.end(), depth) ==
        space.depth_choices.end())
        throw ValidationError("unrealizable spec: depth not offered by the space");
    if (static_cast<int>(widths.size()) != depth || static_cast<int>(activations.size()) != depth)
        throw ValidationError("unrealizable spec: widths/activations must match depth");
    for (int w : widths)
        if (std::find(space.width_choices.begin(), space.width_choices.end(), w) ==
            space.width_choices.end())
            throw ValidationError("unrealizable spec: width not offered by the space");
    for (Activation a : activations)
        if (std::find(space.activation_choices.begin(), space.activation_choices.end(), a) ==
            space.activation_choices.end())
            throw ValidationError("unrealizable spec: activation not offered by the space");
}

FusionSpec spec_from_actions(const SearchSpace& space, std::span<const int> actions) {
    FusionSpec spec;
    std::size_t at = 0;
    for (int k = 0; k < space.n_select; ++k) spec.selected_models.push_back(actions[at++]);
    spec.depth = space.depth_choices[actions[at++]];
    for (int layer = 0; layer < spec.depth; ++layer) {
        spec.widths.push_back(space.width_choices[actions[at++]]);
        spec.activations.push_back(space.activation_choices[actions[at++]]);
    }
    return spec;
}

std::vector<int> actions_from_spec(const SearchSpace& space, const FusionSpec& spec) {
    spec.validate(space);
    std::vector<int> actions;
    std::vector<int> models = spec.selected_models;
    if (space.pinned_model >= 0 && models[0] != space.pinned_model) {
        // canonical pinned encoding keeps the pinned model first
        auto it = std::find(models.begin(), models.end(), space.pinned_model);
        std::iter_swap(models.begin(), it);
    }
    actions.insert(actions.end(), models.begin(), models.end());
    auto depth_it = std::find(space.depth_choices.begin(), space.depth_choices.end(), spec.depth);
    actions.push_back(static_cast<int>(depth_it - space.depth_choices.begin()));
    for (int layer = 0; layer < spec.depth; ++layer) {
        auto w_it = std::find(space.width_choices.begin(), space.width_choices.end(),
                              spec.widths[layer]);
        actions.push_back(static_cast<int>(w_it - space.width_choices.begin()));
        auto a_it = std::find(space.activation_choices.begin(), space.activation_choices.end(),
                              spec.activations[layer]);
        actions.push_back(static_cast<int>(a_it - space.activation_choices.begin()));
    }
    return actions;
}

SearchSpaceDriver::SearchSpaceDriver(SearchSpace space) : space_(std::move(space)) {
    space_.validate();
}

std::vector<int> SearchSpaceDriver::decoder_choices() const {
    std::vector<int> choices;
    for (int k = 0; k < space_.n_select; ++k) choices.push_back(space_.pool_size);
    choices.push_back(static_cast<int>(space_.depth_choices.size()));
    for (int layer = 0; layer < space_.max_depth(); ++layer) {
        choices.push_back(static_cast<int>(space_.width_choices.size()));
        choices.push_back(static_cast<int>(space_.activation_choices.size()));
    }
    return choices;
}

std::optional<StepDesc> SearchSpaceDriver::next_step(std::span<const int> actions) const {
    const int k = static_cast<int>(actions.size());
    StepDesc desc;
    desc.decoder = k; // realized steps are a prefix of the nominal layout

    if (k < space_.n_select) {
        desc.num_choices = space_.pool_size;
        if (k == 0 && space_.pinned_model >= 0) {
            desc.forced = space_.pinned_model;
            return desc;
        }
        desc.masked.assign(space_.pool_size, 0);
        for (int j = 0; j < k; ++j) desc.masked[actions[j]] = 1;
        return desc;
    }
    if (k == space_.n_select) {
        desc.num_choices = static_cast<int>(space_.depth_choices.size());
        return desc;
    }
    const int depth = space_.depth_choices[actions[space_.n_select]];
    const int total = space_.n_select + 1 + 2 * depth;
    if (k >= total) return std::nullopt;
    const bool width_step = ((k - space_.n_select - 1) % 2) == 0;
    desc.num_choices = width_step ? static_cast<int>(space_.width_choices.size())
                                  : static_cast<int>(space_.activation_choices.size());
    return desc;
}

// ---- controller ------------------------------------------------------------

void ControllerParams::add_scaled_tensors(const ControllerParams& grad, double scale) {
    w_input.add_scaled(grad.w_input, scale);
    w_hidden.add_scaled(grad.w_hidden, scale);
    for (std::size_t i = 0; i < b_hidden.size(); ++i) b_hidden[i] += scale * grad.b_hidden[i];
    for (std::size_t d = 0; d < decoders.size(); ++d) {
        decoders[d].weight.add_scaled(grad.decoders[d].weight, scale);
        for (std::size_t i = 0; i < decoders[d].bias.size(); ++i)
            decoders[d].bias[i] += scale * grad.decoders[d].bias[i];
    }
    embeddings.add_scaled(grad.embeddings, scale);
}

bool ControllerParams::finite() const {
    auto ok = [](const std::vector<double>& v) {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    };
    if (!ok(w_input.data()) || !ok(w_hidden.data()) || !ok(b_hidden) || !ok(embeddings.data()))
        return false;
    for (const auto& d : decoders)
        if (!ok(d.weight.data()) || !ok(d.bias)) return false;
    return true;
}

double EpisodeTrace::total_log_prob() const {
    double sum = 0.0;
    for (double lp : log_probs) sum += lp;
    return sum;
}

ControllerParams init_controller(const DecisionDriver& driver, const ControllerConfig& config,
                                 std::uint64_t seed) {
    if (config.hidden_size < 1 || config.batch_episodes < 1 || config.policy_lr <= 0.0 ||
        config.gamma <= 0.0 || config.gamma > 1.0 || config.baseline_decay < 0.0 ||
        config.baseline_decay >= 1.0)
        throw ValidationError("controller config out of range");

    const int h = config.hidden_size;
    Rng rng(mix_seed(seed, 0xc0de));
    ControllerParams params;
    params.config = config;

    auto glorot = [&rng](Matrix& m) {
        double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (double& v : m.data()) v = rng.uniform(-bound, bound);
    };

    params.w_input = Matrix(h, h);
    params.w_hidden = Matrix(h, h);
    glorot(params.w_input);
    glorot(params.w_hidden);
    params.b_hidden.assign(h, 0.0);

    int total_actions = 0;
    for (int choices : driver.decoder_choices()) {
        ControllerDecoder dec;
        dec.weight = Matrix(choices, h);
        glorot(dec.weight);
        dec.bias.assign(choices, 0.0);
        params.decoders.push_back(std::move(dec));
        params.action_offsets.push_back(total_actions);
        total_actions += choices;
    }

    params.embeddings = Matrix(1 + total_actions, h);
    for (double& v : params.embeddings.data()) v = rng.uniform(-0.1, 0.1);
    return params;
}

namespace {

struct StepRecord {
    StepDesc desc;
    int embedding_row = 0;     // row fed into the cell at this step
    std::vector<double> h;     // hidden state after this step
    std::vector<double> probs; // empty for forced steps
    int action = -1;
};

// Masked softmax of decoder(h); masked entries come out exactly zero.
std::vector<double> step_probs(const ControllerParams& params, const StepDesc& desc,
                               const std::vector<double>& h) {
    const auto& dec = params.decoders[desc.decoder];
    std::vector<double> logits = dec.bias;
    dec.weight.mul_add(h, logits);

    auto masked = [&](std::size_t j) {
        return !desc.masked.empty() && desc.masked[j];
    };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.size(); ++j)
        if (!masked(j)) mx = std::max(mx, logits[j]);
    if (!std::isfinite(mx)) throw ValidationError("all actions masked at a decision step");

    std::vector<double> probs(logits.size(), 0.0);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        if (masked(j)) continue;
        probs[j] = std::exp(logits[j] - mx);
        sum += probs[j];
    }
    for (double& p : probs) p /= sum;
    return probs;
}

// Runs one episode; `choose` returns the action for a sampled step.
template <typename Chooser>
std::vector<StepRecord> run_episode(const ControllerParams& params, const DecisionDriver& driver,
                                    Chooser&& choose) {
    const int h_size = static_cast<int>(params.b_hidden.size());
    std::vector<double> h(h_size, 0.0);
    int embedding_row = 0; // start token
    std::vector<int> actions;
    std::vector<StepRecord> steps;

    while (auto desc = driver.next_step(actions)) {
        if (desc->decoder < 0 || desc->decoder >= static_cast<int>(params.decoders.size()))
            throw ValidationError("decision step decoder out of range");
        StepRecord rec;
        rec.desc = *desc;
        rec.embedding_row = embedding_row;

        std::vector<double> h_new = params.b_hidden;
        params.w_input.mul_add(params.embeddings.row(embedding_row), h_new);
        params.w_hidden.mul_add(h, h_new);
        for (double& v : h_new) v = std::tanh(v);
        rec.h = h_new;

        if (desc->forced >= 0) {
            rec.action = desc->forced;
        } else {
            rec.probs = step_probs(params, *desc, h_new);
            rec.action = choose(steps.size(), rec);
        }
        actions.push_back(rec.action);
        embedding_row = 1 + params.action_offsets[desc->decoder] + rec.action;
        h = std::move(h_new);
        steps.push_back(std::move(rec));
    }
    return steps;
}

EpisodeTrace trace_from_steps(const std::vector<StepRecord>& steps) {
    EpisodeTrace trace;
    for (const auto& rec : steps) {
        trace.actions.push_back(rec.action);
        trace.decoder_index.push_back(rec.desc.decoder);
        trace.forced.push_back(rec.desc.forced >= 0);
        trace.log_probs.push_back(rec.desc.forced >= 0 ? 0.0 : std::log(rec.probs[rec.action]));
    }
    return trace;
}

ControllerParams zeros_like(const ControllerParams& params) {
    ControllerParams g;
    g.w_input = Matrix(params.w_input.rows(), params.w_input.cols());
    g.w_hidden = Matrix(params.w_hidden.rows(), params.w_hidden.cols());
    g.b_hidden.assign(params.b_hidden.size(), 0.0);
    for (const auto& dec : params.decoders) {
        ControllerDecoder zd;
        zd.weight = Matrix(dec.weight.rows(), dec.weight.cols());
        zd.bias.assign(dec.bias.size(), 0.0);
        g.decoders.push_back(std::move(zd));
    }
    g.embeddings = Matrix(params.embeddings.rows(), params.embeddings.cols());
    g.action_offsets = params.action_offsets;
    return g;
}

// Backpropagation through decoders, cell, and embeddings for one episode.
// coef[k] scales step k's grad-log-prob term; forced steps contribute none.
void accumulate_episode_gradient(const ControllerParams& params,
                                 const std::vector<StepRecord>& steps,
                                 const std::vector<double>& coef, ControllerParams& grad) {
    const std::size_t h_size = params.b_hidden.size();
    const std::size_t n = steps.size();
    std::vector<std::vector<double>> dh(n, std::vector<double>(h_size, 0.0));

    for (std::size_t k = 0; k < n; ++k) {
        const auto& rec = steps[k];
        if (rec.desc.forced >= 0 || coef[k] == 0.0) continue;
        const auto& dec = params.decoders[rec.desc.decoder];
        auto& gdec = grad.decoders[rec.desc.decoder];
        std::vector<double> dlogits(rec.probs.size(), 0.0);
        for (std::size_t j = 0; j < rec.probs.size(); ++j) {
            if (!rec.desc.masked.empty() && rec.desc.masked[j]) continue;
            dlogits[j] = coef[k] * ((static_cast<int>(j) == rec.action ? 1.0 : 0.0) - rec.probs[j]);
        }
        gdec.weight.add_outer(dlogits, rec.h);
        for (std::size_t j = 0; j < dlogits.size(); ++j) gdec.bias[j] += dlogits[j];
        dec.weight.mul_transpose_add(dlogits, dh[k]);
    }

    // back through time
    for (std::size_t k = n; k-- > 0;) {
        const auto& rec = steps[k];
        std::vector<double> dpre(h_size);
        bool nonzero = false;
        for (std::size_t i = 0; i < h_size; ++i) {
            dpre[i] = dh[k][i] * (1.0 - rec.h[i] * rec.h[i]);
            nonzero = nonzero || dpre[i] != 0.0;
        }
        if (!nonzero) continue;
        auto x = params.embeddings.row(rec.embedding_row);
        grad.w_input.add_outer(dpre, x);
        if (k > 0) {
            grad.w_hidden.add_outer(dpre, steps[k - 1].h);
            params.w_hidden.mul_transpose_add(dpre, dh[k - 1]);
        }
        for (std::size_t i = 0; i < h_size; ++i) grad.b_hidden[i] += dpre[i];
        auto gx = grad.embeddings.row(rec.embedding_row);
        std::vector<double> dx(h_size, 0.0);
        params.w_input.mul_transpose_add(dpre, dx);
        for (std::size_t i = 0; i < h_size; ++i) gx[i] += dx[i];
    }
}

} // namespace

EpisodeTrace sample_episode(const ControllerParams& params, const DecisionDriver& driver,
                            std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xe915));
    auto steps = run_episode(params, driver, [&rng](std::size_t, const StepRecord& rec) {
        double u = rng.uniform();
        double cum = 0.0;
        int last_valid = -1;
        for (std::size_t j = 0; j < rec.probs.size(); ++j) {
            if (rec.probs[j] <= 0.0) continue;
            last_valid = static_cast<int>(j);
            cum += rec.probs[j];
            if (u < cum) return last_valid;
        }
        return last_valid; // rounding tail
    });
    return trace_from_steps(steps);
}

double episode_logprob(const ControllerParams& params, const DecisionDriver& driver,
                       std::span<const int> actions) {
    auto steps = run_episode(params, driver, [&](std::size_t k, const StepRecord& rec) {
        if (k >= actions.size()) throw ValidationError("unrealizable spec: action sequence too short");
        int a = actions[k];
        if (a < 0 || a >= static_cast<int>(rec.probs.size()))
            throw ValidationError("unrealizable spec: action out of range");
        if (rec.probs[a] <= 0.0)
            throw ValidationError("unrealizable spec: masked action selected");
        return a;
    });
    // forced steps consumed actions too; verify the full sequence matched
    if (steps.size() != actions.size())
        throw ValidationError("unrealizable spec: action sequence length mismatch");
    for (std::size_t k = 0; k < steps.size(); ++k)
        if (steps[k].action != actions[k])
            throw ValidationError("unrealizable spec: forced action mismatch");
    return trace_from_steps(steps).total_log_prob();
}

ControllerParams policy_gradient(const ControllerParams& params, const DecisionDriver& driver,
                                 std::span<const EpisodeTrace> batch, double baseline) {
    if (batch.empty()) throw ValidationError("empty REINFORCE batch");
    ControllerParams grad = zeros_like(params);
    const double inv_m = 1.0 / static_cast<double>(batch.size());

    for (const auto& trace : batch) {
        if (!trace.has_reward) throw ValidationError("episode trace carries no reward");
        const double advantage = trace.reward - baseline;
        if (advantage == 0.0) continue;

        auto steps = run_episode(params, driver, [&](std::size_t k, const StepRecord&) {
            if (k >= trace.actions.size())
                throw ValidationError("trace does not match the decision space");
            return trace.actions[k];
        });
        if (steps.size() != trace.actions.size())
            throw ValidationError("trace does not match the decision space");

        const double t_total = static_cast<double>(steps.size());
        std::vector<double> coef(steps.size());
        for (std::size_t k = 0; k < steps.size(); ++k)
            coef[k] = std::pow(params.config.gamma, t_total - static_cast<double>(k + 1)) *
                      advantage * inv_m;
        accumulate_episode_gradient(params, steps, coef, grad);
    }
    if (!grad.finite()) throw ValidationError("non-finite policy gradient");
    return grad;
}

void reinforce_update(ControllerParams& params, const DecisionDriver& driver,
                      std::span<const EpisodeTrace> batch) {
    if (batch.empty()) throw ValidationError("empty REINFORCE batch");
    double mean_reward = 0.0;
    for (const auto& trace : batch) {
        if (!trace.has_reward) throw ValidationError("episode trace carries no reward");
        mean_reward += trace.reward;
    }
    mean_reward /= static_cast<double>(batch.size());

    if (!params.baseline_initialized) {
        params.baseline = mean_reward;
        params.baseline_initialized = true;
    }

    ControllerParams grad = policy_gradient(params, driver, batch, params.baseline);
    params.add_scaled_tensors(grad, params.config.policy_lr);
    if (!params.finite()) throw ValidationError("controller parameters diverged");

    params.baseline = params.config.baseline_decay * params.baseline +
                      (1.0 - params.config.baseline_decay) * mean_reward;
    ++params.updates_done;
}

// ---- serialization ----------------------------------------------------------

namespace {

json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.rows() * m.cols()) throw ValidationError("matrix JSON size mismatch");
    m.data() = std::move(data);
    return m;
}

} // namespace

std::string controller_to_json(const ControllerParams& params) {
    json j;
    j["w_input"] = matrix_to_json(params.w_input);
    j["w_hidden"] = matrix_to_json(params.w_hidden);
    j["b_hidden"] = params.b_hidden;
    j["decoders"] = json::array();
    for (const auto& dec : params.decoders)
        j["decoders"].push_back({{"weight", matrix_to_json(dec.weight)}, {"bias", dec.bias}});
    j["embeddings"] = matrix_to_json(params.embeddings);
    j["action_offsets"] = params.action_offsets;
    j["baseline"] = params.baseline;
    j["baseline_initialized"] = params.baseline_initialized;
    j["updates_done"] = params.updates_done;
    j["config"] = {{"hidden_size", params.config.hidden_size},
                   {"gamma", params.config.gamma},
                   {"baseline_decay", params.config.baseline_decay},
                   {"batch_episodes", params.config.batch_episodes},
                   {"policy_lr", params.config.policy_lr}};
    return j.dump(2);
}

ControllerParams controller_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed controller JSON: ") + e.what());
    }
    ControllerParams params;
    try {
        params.w_input = matrix_from_json(j.at("w_input"));
        params.w_hidden = matrix_from_json(j.at("w_hidden"));
        params.b_hidden = j.at("b_hidden").get<std::vector<double>>();
        for (const auto& d : j.at("decoders")) {
            ControllerDecoder dec;
            dec.weight = matrix_from_json(d.at("weight"));
            dec.bias = d.at("bias").get<std::vector<double>>();
            params.decoders.push_back(std::move(dec));
        }
        params.embeddings = matrix_from_json(j.at("embeddings"));
        params.action_offsets = j.at("action_offsets").get<std::vector<int>>();
        params.baseline = j.at("baseline").get<double>();
        params.baseline_initialized = j.at("baseline_initialized").get<bool>();
        params.updates_done = j.at("updates_done").get<long>();
        const auto& c = j.at("config");
        params.config.hidden_size = c.at("hidden_size").get<int>();
        params.config.gamma = c.at("gamma").get<double>();
        params.config.baseline_decay = c.at("baseline_decay").get<double>();
        params.config.batch_episodes = c.at("batch_episodes").get<int>();
        params.config.policy_lr = c.at("policy_lr").get<double>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("controller JSON missing field: ") + e.what());
    }
    return params;
}

} // namespace muffin
