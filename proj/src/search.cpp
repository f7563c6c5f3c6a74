#include "muffin/search.hpp"

#include "muffin/csv.hpp"
#include "muffin/errors.hpp"
#include "muffin/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace muffin {

using nlohmann::json;

double objective_value(const SearchRecord& record, const Objective& objective) {
    if (objective.field == "accuracy") return record.report.overall_accuracy;
    if (objective.field == "multi_unfairness") return record.report.multi_unfairness;
    if (objective.field == "reward") return record.reward;
    if (objective.field.rfind("U:", 0) == 0) {
        auto it = record.report.per_attribute_unfairness.find(objective.field.substr(2));
        if (it == record.report.per_attribute_unfairness.end())
            throw ValidationError("objective attribute '" + objective.field.substr(2) +
                                  "' not in report");
        return it->second;
    }
    throw ValidationError("unknown objective field '" + objective.field + "'");
}

std::vector<Objective> default_objectives(const Dataset& dataset) {
    std::vector<Objective> objectives;
    for (const auto& attr : dataset.schema.attributes)
        objectives.push_back({"U:" + attr.name, false});
    objectives.push_back({"accuracy", true});
    return objectives;
}

bool dominates(const SearchRecord& a, const SearchRecord& b,
               const std::vector<Objective>& objectives) {
    bool strictly = false;
    for (const auto& obj : objectives) {
        double va = objective_value(a, obj);
        double vb = objective_value(b, obj);
        double better = obj.maximize ? va - vb : vb - va;
        if (better < 0.0) return false;
        if (better > 0.0) strictly = true;
    }
    return strictly;
}

ParetoSet pareto_update(ParetoSet set, const SearchRecord& candidate,
                        const std::vector<Objective>& objectives) {
    if (objectives.empty()) throw ValidationError("pareto objectives must be non-empty");
    set.objectives = objectives;
    for (const auto& incumbent : set.records)
        if (dominates(incumbent, candidate, objectives)) return set;
    std::erase_if(set.records,
                  [&](const SearchRecord& r) { return dominates(candidate, r, objectives); });
    set.records.push_back(candidate);
    return set;
}

SearchProblem prepare_problem(const Dataset& dataset, const ModelPool& pool,
                              const SplitAssignment& split, const SearchConfigs& configs) {
    SearchProblem problem;
    problem.dataset = &dataset;
    problem.pool = &pool;
    problem.split = split;
    problem.train_idx = indices_of(dataset, split.train_ids);
    problem.val_idx = indices_of(dataset, split.val_ids);
    problem.test_idx = indices_of(dataset, split.test_ids);
    problem.configs = configs;
    if (problem.configs.objectives.empty())
        problem.configs.objectives = default_objectives(dataset);
    problem.unpriv = identify_unprivileged(dataset, pool, problem.train_idx, configs.margin,
                                           configs.exclude_unknown);
    problem.weights = compute_weights(dataset, problem.train_idx, problem.unpriv);
    return problem;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

FusionSpec canonicalize(FusionSpec spec) {
    std::sort(spec.selected_models.begin(), spec.selected_models.end());
    return spec;
}

FairnessReport zero_report(const Dataset& dataset) {
    FairnessReport report;
    for (const auto& attr : dataset.schema.attributes)
        report.per_attribute_unfairness[attr.name] = 0.0;
    return report;
}

} // namespace

EvalOutcome evaluate_candidate(const SearchProblem& problem, const FusionSpec& raw_spec,
                               std::uint64_t run_seed) {
    const auto start = std::chrono::steady_clock::now();
    EvalOutcome outcome;
    const Dataset& dataset = *problem.dataset;
    const ModelPool& pool = *problem.pool;
    FusionSpec spec = canonicalize(raw_spec);

    try {
        const UnprivilegedMap* unpriv = &problem.unpriv;
        const WeightTable* weights = &problem.weights;
        UnprivilegedMap episode_unpriv;
        WeightTable episode_weights;
        if (problem.configs.unpriv_basis == UnprivBasis::per_episode) {
            episode_unpriv = identify_unprivileged(dataset, pool, problem.train_idx,
                                                   problem.configs.margin,
                                                   problem.configs.exclude_unknown,
                                                   spec.selected_models);
            episode_weights = compute_weights(dataset, problem.train_idx, episode_unpriv);
            unpriv = &episode_unpriv;
            weights = &episode_weights;
        }

        auto proxy = build_proxy(dataset, pool, spec.selected_models, problem.train_idx,
                                 *unpriv, *weights);
        if (problem.configs.proxy_weighting == ProxyWeighting::uniform)
            for (auto& p : proxy) p.weight = 1.0;

        outcome.mlp_spec.hidden_widths = spec.widths;
        outcome.mlp_spec.activations = spec.activations;
        outcome.mlp_spec.input_width = static_cast<int>(spec.selected_models.size()) *
                                       dataset.num_classes;
        outcome.mlp_spec.output_width = dataset.num_classes;

        TrainConfig head = problem.configs.head;
        head.seed = mix_seed(run_seed, fnv1a(spec.key()));
        if (proxy.empty()) {
            // nothing unprivileged to train on; the head stays at its
            // initialization and consensus routing carries the prediction
            outcome.params = init_mlp(outcome.mlp_spec, head.seed);
        } else {
            outcome.params = train(outcome.mlp_spec, proxy, head);
        }

        auto preds = fused_predictions(pool, spec.selected_models, outcome.params,
                                       outcome.mlp_spec, problem.val_idx);
        outcome.report = full_report(preds, dataset, problem.val_idx, problem.configs.epsilon);
        outcome.reward = outcome.report.reward;
    } catch (const std::exception& e) {
        outcome.failed = true;
        outcome.error = e.what();
        outcome.report = zero_report(dataset);
        outcome.reward = 0.0;
    }
    outcome.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return outcome;
}

RunResult run_search(const SearchProblem& problem, const SearchSpace& space, long episodes,
                     std::uint64_t seed, const CheckpointHook& checkpoint) {
    if (episodes < 1) throw ValidationError("no episodes requested");
    space.validate();
    const Dataset& dataset = *problem.dataset;

    SearchSpaceDriver driver(space);
    RunResult result;
    result.controller = init_controller(driver, problem.configs.controller, seed);
    result.pareto.objectives = problem.configs.objectives;

    std::unordered_map<std::string, EvalOutcome> memo;
    std::vector<EpisodeTrace> batch_traces;
    std::vector<FusionSpec> batch_specs;
    const int batch_size = problem.configs.controller.batch_episodes;

    long best_index = -1;

    auto flush_batch = [&]() {
        if (batch_traces.empty()) return;

        // unique unevaluated structures, first-appearance order
        std::vector<std::string> keys;
        std::vector<const FusionSpec*> todo;
        for (const auto& spec : batch_specs) {
            std::string key = spec.key();
            if (memo.count(key) || std::find(keys.begin(), keys.end(), key) != keys.end())
                continue;
            keys.push_back(std::move(key));
            todo.push_back(&spec);
        }

        const int workers = std::max(1, problem.configs.workers);
        if (workers == 1 || todo.size() <= 1) {
            for (std::size_t i = 0; i < todo.size(); ++i)
                memo.emplace(keys[i], evaluate_candidate(problem, *todo[i], seed));
        } else {
            std::vector<EvalOutcome> outcomes(todo.size());
            std::atomic<std::size_t> next{0};
            auto work = [&]() {
                while (true) {
                    std::size_t i = next.fetch_add(1);
                    if (i >= todo.size()) break;
                    outcomes[i] = evaluate_candidate(problem, *todo[i], seed);
                }
            };
            std::vector<std::thread> threads;
            for (int w = 0; w < std::min<int>(workers, static_cast<int>(todo.size())); ++w)
                threads.emplace_back(work);
            for (auto& t : threads) t.join();
            for (std::size_t i = 0; i < todo.size(); ++i)
                memo.emplace(keys[i], std::move(outcomes[i]));
        }

        const long first_episode = static_cast<long>(result.history.size()) + 1;
        for (std::size_t k = 0; k < batch_traces.size(); ++k) {
            const auto& outcome = memo.at(batch_specs[k].key());
            SearchRecord record;
            record.episode = first_episode + static_cast<long>(k);
            record.spec = batch_specs[k];
            record.report = outcome.report;
            record.reward = outcome.failed ? 0.0 : outcome.reward;
            record.seconds = outcome.seconds;
            record.failed = outcome.failed;
            if (outcome.failed)
                std::cerr << "episode " << record.episode << " failed: " << outcome.error << "\n";

            batch_traces[k].reward = record.reward;
            batch_traces[k].has_reward = true;

            if (!record.failed)
                result.pareto = pareto_update(std::move(result.pareto), record,
                                              problem.configs.objectives);
            if (best_index < 0 || record.reward > result.history[best_index].reward)
                best_index = static_cast<long>(result.history.size());
            result.history.push_back(std::move(record));
        }

        reinforce_update(result.controller, driver, batch_traces);
        batch_traces.clear();
        batch_specs.clear();
    };

    for (long e = 1; e <= episodes; ++e) {
        EpisodeTrace trace = sample_episode(result.controller, driver, mix_seed(seed, 0xE0000 + e));
        FusionSpec spec = canonicalize(spec_from_actions(space, trace.actions));
        batch_traces.push_back(std::move(trace));
        batch_specs.push_back(std::move(spec));
        if (static_cast<int>(batch_traces.size()) == batch_size || e == episodes) flush_batch();
        if (checkpoint && e % 50 == 0) checkpoint(e, result.controller, result.history);
    }

    result.best = result.history[best_index];
    const auto& best_eval = memo.at(result.best.spec.key());
    result.best_params = best_eval.params;
    result.best_mlp_spec = best_eval.mlp_spec;
    if (!best_eval.failed) {
        auto test_preds = fused_predictions(*problem.pool, result.best.spec.selected_models,
                                            best_eval.params, best_eval.mlp_spec,
                                            problem.test_idx);
        result.best_test = full_report(test_preds, dataset, problem.test_idx,
                                       problem.configs.epsilon);
    } else {
        result.best_test = zero_report(dataset);
    }
    return result;
}

std::vector<FusionSpec> enumerate_specs(const SearchSpace& space) {
    space.validate();
    std::vector<FusionSpec> specs;

    // unordered model subsets, ascending; a pinned model is always included
    std::vector<int> candidates;
    for (int m = 0; m < space.pool_size; ++m)
        if (m != space.pinned_model) candidates.push_back(m);
    const int free_picks = space.n_select - (space.pinned_model >= 0 ? 1 : 0);

    std::vector<std::vector<int>> subsets;
    std::vector<int> current;
    std::function<void(std::size_t)> pick = [&](std::size_t from) {
        if (static_cast<int>(current.size()) == free_picks) {
            std::vector<int> subset = current;
            if (space.pinned_model >= 0) subset.insert(subset.begin(), space.pinned_model);
            std::sort(subset.begin(), subset.end());
            subsets.push_back(std::move(subset));
            return;
        }
        for (std::size_t i = from; i < candidates.size(); ++i) {
            current.push_back(candidates[i]);
            pick(i + 1);
            current.pop_back();
        }
    };
    pick(0);

    for (const auto& subset : subsets) {
        for (int depth : space.depth_choices) {
            // odometer over width/activation choices per layer
            std::vector<std::size_t> w_idx(depth, 0), a_idx(depth, 0);
            while (true) {
                FusionSpec spec;
                spec.selected_models = subset;
                spec.depth = depth;
                for (int l = 0; l < depth; ++l) {
                    spec.widths.push_back(space.width_choices[w_idx[l]]);
                    spec.activations.push_back(space.activation_choices[a_idx[l]]);
                }
                specs.push_back(std::move(spec));

                int pos = 0;
                for (; pos < 2 * depth; ++pos) {
                    auto& idx = (pos % 2 == 0) ? a_idx[pos / 2] : w_idx[pos / 2];
                    std::size_t limit = (pos % 2 == 0) ? space.activation_choices.size()
                                                       : space.width_choices.size();
                    if (++idx < limit) break;
                    idx = 0;
                }
                if (pos == 2 * depth) break;
            }
        }
    }
    return specs;
}

SearchRecord brute_force_oracle(const SearchProblem& problem, const SearchSpace& space,
                                std::uint64_t seed) {
    space.validate();
    double count = space.structure_count();
    if (count > 10000.0)
        throw GuardError("enumeration refused: " + format_double(count) +
                         " structures exceed the 10000-structure guard");

    auto specs = enumerate_specs(space);
    SearchRecord best;
    bool have = false;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        EvalOutcome outcome = evaluate_candidate(problem, specs[i], seed);
        if (outcome.failed) {
            std::cerr << "oracle structure " << specs[i].key() << " failed: " << outcome.error
                      << "\n";
            continue;
        }
        if (!have || outcome.reward > best.reward) {
            best.episode = static_cast<long>(i);
            best.spec = canonicalize(specs[i]);
            best.report = outcome.report;
            best.reward = outcome.reward;
            best.seconds = outcome.seconds;
            have = true;
        }
    }
    if (!have) throw ValidationError("every enumerated structure failed to evaluate");
    return best;
}

// ---- emission ---------------------------------------------------------------

namespace {

std::string join_ints(const std::vector<int>& v, char sep) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out << sep;
        out << v[i];
    }
    return out.str();
}

} // namespace

std::string history_csv_header(const Dataset& dataset) {
    std::ostringstream out;
    out << "episode,reward,accuracy";
    for (const auto& attr : dataset.schema.attributes) out << ",U_" << attr.name;
    out << ",selected_models,depth,widths,activations,seconds";
    return out.str();
}

std::string history_csv_row(const Dataset& dataset, const ModelPool& pool,
                            const SearchRecord& record) {
    std::ostringstream out;
    out << record.episode << ',' << format_double(record.reward) << ','
        << format_double(record.report.overall_accuracy);
    for (const auto& attr : dataset.schema.attributes) {
        auto it = record.report.per_attribute_unfairness.find(attr.name);
        out << ',' << format_double(it == record.report.per_attribute_unfairness.end() ? 0.0
                                                                                       : it->second);
    }
    out << ',';
    for (std::size_t i = 0; i < record.spec.selected_models.size(); ++i) {
        if (i) out << ';';
        out << pool.entries[record.spec.selected_models[i]].name;
    }
    out << ',' << record.spec.depth << ',' << join_ints(record.spec.widths, ';') << ',';
    for (std::size_t i = 0; i < record.spec.activations.size(); ++i) {
        if (i) out << ';';
        out << to_string(record.spec.activations[i]);
    }
    // whole seconds: replaying a run must reproduce this file byte for byte,
    // so sub-second timing jitter cannot be allowed into it
    out << ',' << static_cast<long>(record.seconds);
    return out.str();
}

void write_history_csv(const std::string& path, const Dataset& dataset, const ModelPool& pool,
                       const std::vector<SearchRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << history_csv_header(dataset) << '\n';
    for (const auto& record : records) out << history_csv_row(dataset, pool, record) << '\n';
}

namespace {

json report_to_json(const FairnessReport& report) {
    json j;
    j["accuracy"] = report.overall_accuracy;
    j["per_attribute_unfairness"] = report.per_attribute_unfairness;
    j["multi_unfairness"] = report.multi_unfairness;
    j["reward"] = report.reward;
    j["per_group_accuracy"] = report.per_group_accuracy;
    return j;
}

} // namespace

std::string best_record_json(const ModelPool& pool, const RunResult& result) {
    json j;
    json spec;
    json names = json::array();
    for (int m : result.best.spec.selected_models) names.push_back(pool.entries[m].name);
    spec["selected_models"] = names;
    spec["depth"] = result.best.spec.depth;
    spec["widths"] = result.best.spec.widths;
    json acts = json::array();
    for (Activation a : result.best.spec.activations) acts.push_back(to_string(a));
    spec["activations"] = acts;
    j["spec"] = spec;
    j["episode"] = result.best.episode;
    j["reward"] = result.best.reward;
    j["validation"] = report_to_json(result.best.report);
    j["test"] = report_to_json(result.best_test);
    j["mlp"] = json::parse(mlp_to_json(result.best_params));
    return j.dump(2);
}

} // namespace muffin
