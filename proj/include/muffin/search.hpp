#ifndef MUFFIN_SEARCH_HPP
#define MUFFIN_SEARCH_HPP

#include "muffin/controller.hpp"
#include "muffin/dataset.hpp"
#include "muffin/metrics.hpp"
#include "muffin/mlp.hpp"
#include "muffin/proxy.hpp"

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace muffin {

struct SearchRecord {
    long episode = 0;
    FusionSpec spec;
    FairnessReport report; // validation split
    double reward = 0.0;
    double seconds = 0.0; // candidate evaluation wall time
    bool failed = false;
};

// A report field with an optimization direction: "accuracy" and "reward"
// maximize, "multi_unfairness" and "U:<attribute>" minimize by default.
struct Objective {
    std::string field;
    bool maximize = false;
};

double objective_value(const SearchRecord& record, const Objective& objective);

// Per-attribute unfairness (minimized) plus accuracy (maximized).
std::vector<Objective> default_objectives(const Dataset& dataset);

struct ParetoSet {
    std::vector<Objective> objectives;
    std::vector<SearchRecord> records; // mutually non-dominated
};

// True when `a` is weakly better than `b` on every objective and strictly
// better on at least one.
bool dominates(const SearchRecord& a, const SearchRecord& b,
               const std::vector<Objective>& objectives);

ParetoSet pareto_update(ParetoSet set, const SearchRecord& candidate,
                        const std::vector<Objective>& objectives);

enum class UnprivBasis { pool_mean, per_episode };
enum class ProxyWeighting { algorithm, uniform };

struct SearchConfigs {
    ControllerConfig controller;
    TrainConfig head; // head.seed is ignored; seeds derive from the run seed
    double epsilon = 1e-3;
    double margin = 0.0;
    bool exclude_unknown = true;
    UnprivBasis unpriv_basis = UnprivBasis::pool_mean;
    ProxyWeighting proxy_weighting = ProxyWeighting::algorithm;
    int workers = 1;
    std::vector<Objective> objectives; // empty -> default_objectives(dataset)
};

// Everything computed once per run: split index sets plus the pool-mean
// unprivileged map and proxy weights over the training split.
struct SearchProblem {
    const Dataset* dataset = nullptr;
    const ModelPool* pool = nullptr;
    SplitAssignment split;
    std::vector<std::size_t> train_idx, val_idx, test_idx;
    UnprivilegedMap unpriv;
    WeightTable weights;
    SearchConfigs configs;
};

SearchProblem prepare_problem(const Dataset& dataset, const ModelPool& pool,
                              const SplitAssignment& split, const SearchConfigs& configs);

struct EvalOutcome {
    FairnessReport report; // validation split
    double reward = 0.0;
    MlpParams params;
    MlpSpec mlp_spec;
    double seconds = 0.0;
    bool failed = false;
    std::string error;
};

// Trains and scores one structure. Model order is canonicalized (ascending)
// and the head seed derives from (run seed, structure key), so a structure
// evaluates identically wherever it is encountered.
EvalOutcome evaluate_candidate(const SearchProblem& problem, const FusionSpec& spec,
                               std::uint64_t run_seed);

using CheckpointHook =
    std::function<void(long episode, const ControllerParams&, const std::vector<SearchRecord>&)>;

struct RunResult {
    std::vector<SearchRecord> history;
    ParetoSet pareto;
    SearchRecord best;        // max reward, earliest episode on ties
    FairnessReport best_test; // the best structure re-evaluated on the test split
    MlpParams best_params;
    MlpSpec best_mlp_spec;
    ControllerParams controller;
};

// The episode loop: sample a structure, evaluate (memoized by structure key,
// batched, optionally in parallel), reward on the validation split, update
// the controller every batch. Failed episodes log to stderr and score 0.
RunResult run_search(const SearchProblem& problem, const SearchSpace& space, long episodes,
                     std::uint64_t seed, const CheckpointHook& checkpoint = nullptr);

// Exhaustive enumeration of the space (guard: at most 10000 structures),
// evaluated exactly like run_search candidates with the same run seed.
SearchRecord brute_force_oracle(const SearchProblem& problem, const SearchSpace& space,
                                std::uint64_t seed);

std::vector<FusionSpec> enumerate_specs(const SearchSpace& space);

// ---- report/CSV emission --------------------------------------------------

std::string history_csv_header(const Dataset& dataset);
std::string history_csv_row(const Dataset& dataset, const ModelPool& pool,
                            const SearchRecord& record);
void write_history_csv(const std::string& path, const Dataset& dataset, const ModelPool& pool,
                       const std::vector<SearchRecord>& records);
std::string best_record_json(const ModelPool& pool, const RunResult& result);

} // namespace muffin

#endif
