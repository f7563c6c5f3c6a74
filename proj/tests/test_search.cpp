#include "muffin/csv.hpp"
#include "muffin/errors.hpp"
#include "muffin/search.hpp"
#include "muffin/synthetic.hpp"

#include <doctest.h>

#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace muffin;

namespace {

SearchRecord point(double unfairness, double accuracy) {
    SearchRecord r;
    r.report.overall_accuracy = accuracy;
    r.report.multi_unfairness = unfairness;
    r.report.per_attribute_unfairness["grp"] = unfairness;
    return r;
}

const std::vector<Objective> kUA = {{"multi_unfairness", false}, {"accuracy", true}};

// Small engineered scenario, quick to train on.
struct QuickProblem {
    Dataset dataset;
    ModelPool pool;
    SplitAssignment split;
    SearchProblem problem;
    SearchConfigs configs;

    explicit QuickProblem(int samples = 600, int head_epochs = 40, double head_lr = 0.05) {
        SyntheticConfig cfg = preset_config("complementary-2attr");
        cfg.num_samples = samples;
        auto generated = generate_synthetic(cfg, 5);
        dataset = std::move(generated.first);
        pool = std::move(generated.second);
        split = split_dataset(dataset, 5);
        configs.head.epochs = head_epochs;
        configs.head.learning_rate = head_lr;
        configs.controller.hidden_size = 16;
        problem = prepare_problem(dataset, pool, split, configs);
    }

    SearchSpace space(std::vector<int> depths = {1}, std::vector<int> widths = {8, 12},
                      std::vector<Activation> acts = {Activation::relu, Activation::tanh}) const {
        SearchSpace s;
        s.n_select = 2;
        s.pool_size = static_cast<int>(pool.size());
        s.depth_choices = std::move(depths);
        s.width_choices = std::move(widths);
        s.activation_choices = std::move(acts);
        return s;
    }
};

std::string history_text(const Dataset& ds, const ModelPool& pool,
                         const std::vector<SearchRecord>& records) {
    std::string text = history_csv_header(ds) + "\n";
    for (const auto& r : records) text += history_csv_row(ds, pool, r) + "\n";
    return text;
}

} // namespace

TEST_SUITE("search") {

TEST_CASE("pareto keeps non-dominated points") {
    ParetoSet set;
    set = pareto_update(set, point(0.2, 0.8), kUA);
    CHECK(set.records.size() == 1);

    // dominated candidate is rejected
    set = pareto_update(set, point(0.3, 0.7), kUA);
    CHECK(set.records.size() == 1);
    CHECK(set.records[0].report.multi_unfairness == doctest::Approx(0.2));

    // incomparable pair is kept
    ParetoSet two;
    two = pareto_update(two, point(0.2, 0.7), kUA);
    two = pareto_update(two, point(0.3, 0.8), kUA);
    CHECK(two.records.size() == 2);

    // a dominating candidate evicts incumbents
    two = pareto_update(two, point(0.1, 0.9), kUA);
    CHECK(two.records.size() == 1);
}

TEST_CASE("pareto soundness under random streams") {
    Rng rng(6);
    ParetoSet set;
    for (int k = 0; k < 300; ++k) {
        set = pareto_update(set, point(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)), kUA);
        for (std::size_t i = 0; i < set.records.size(); ++i)
            for (std::size_t j = 0; j < set.records.size(); ++j)
                if (i != j) CHECK_FALSE(dominates(set.records[i], set.records[j], kUA));
    }
}

TEST_CASE("structure counting and enumeration agree") {
    SearchSpace space;
    space.n_select = 2;
    space.pool_size = 3;
    space.depth_choices = {1};
    space.width_choices = {8, 16};
    space.activation_choices = {Activation::relu};
    CHECK(space.structure_count() == doctest::Approx(6.0));
    auto specs = enumerate_specs(space);
    CHECK(specs.size() == 6);
    std::set<std::string> keys;
    for (const auto& s : specs) keys.insert(s.key());
    CHECK(keys.size() == 6);
}

TEST_CASE("enumeration honours a pinned model") {
    SearchSpace space;
    space.n_select = 2;
    space.pool_size = 4;
    space.pinned_model = 2;
    space.depth_choices = {1};
    space.width_choices = {8};
    space.activation_choices = {Activation::relu};
    CHECK(space.structure_count() == doctest::Approx(3.0));
    auto specs = enumerate_specs(space);
    REQUIRE(specs.size() == 3);
    for (const auto& spec : specs)
        CHECK(std::find(spec.selected_models.begin(), spec.selected_models.end(), 2) !=
              spec.selected_models.end());
}

TEST_CASE("the oracle refuses oversized spaces with the computed count") {
    QuickProblem qp;
    SearchSpace space;
    space.n_select = 4;
    space.pool_size = 10;
    try {
        brute_force_oracle(qp.problem, space, 1);
        FAIL("expected guard error");
    } catch (const GuardError& e) {
        CHECK(std::string(e.what()).find("759150") != std::string::npos);
    }
}

TEST_CASE("zero episodes is an error") {
    QuickProblem qp;
    CHECK_THROWS_WITH_AS(run_search(qp.problem, qp.space(), 0, 1), "no episodes requested",
                         ValidationError);
}

TEST_CASE("search history is deterministic per seed and worker count") {
    QuickProblem qp(400, 25);
    SearchSpace space = qp.space();

    RunResult a = run_search(qp.problem, space, 12, 3);
    RunResult b = run_search(qp.problem, space, 12, 3);
    CHECK(history_text(qp.dataset, qp.pool, a.history) == history_text(qp.dataset, qp.pool, b.history));

    SearchProblem parallel = qp.problem;
    parallel.configs.workers = 2;
    RunResult c = run_search(parallel, space, 12, 3);
    CHECK(history_text(qp.dataset, qp.pool, a.history) == history_text(qp.dataset, qp.pool, c.history));

    RunResult d = run_search(qp.problem, space, 12, 4);
    CHECK(history_text(qp.dataset, qp.pool, a.history) != history_text(qp.dataset, qp.pool, d.history));
}

TEST_CASE("records stay consistent with their reports") {
    QuickProblem qp(400, 25);
    RunResult result = run_search(qp.problem, qp.space(), 15, 9);
    CHECK(result.history.size() == 15);
    for (const auto& record : result.history) {
        double recomputed = record.failed
            ? 0.0
            : reward(record.report.overall_accuracy, record.report.per_attribute_unfairness,
                     qp.configs.epsilon);
        CHECK(std::abs(record.reward - recomputed) < 1e-9);
        CHECK(std::abs(record.report.multi_unfairness -
                       multi_unfairness(record.report.per_attribute_unfairness)) < 1e-12);
    }
    // repeated structures reuse their first evaluation
    std::map<std::string, double> seen;
    for (const auto& record : result.history) {
        auto [it, inserted] = seen.emplace(record.spec.key(), record.reward);
        if (!inserted) CHECK(it->second == record.reward);
    }
    // best is the max-reward record re-evaluated on test
    double best = 0.0;
    for (const auto& r : result.history) best = std::max(best, r.reward);
    CHECK(result.best.reward == best);
    CHECK(result.best_test.overall_accuracy >= 0.0);
}

TEST_CASE("oracle reward dominates search rewards on the same space") {
    QuickProblem qp(400, 25);
    SearchSpace space = qp.space({1}, {8, 12}, {Activation::relu});
    SearchRecord oracle = brute_force_oracle(qp.problem, space, 6);
    RunResult searched = run_search(qp.problem, space, 30, 6);
    for (const auto& record : searched.history)
        CHECK(oracle.reward >= record.reward - 1e-12);
    // when the search happened to visit every structure, the maxima agree
    std::set<std::string> visited;
    for (const auto& record : searched.history) visited.insert(record.spec.key());
    if (visited.size() == enumerate_specs(space).size())
        CHECK(searched.best.reward == doctest::Approx(oracle.reward).epsilon(1e-12));
}

TEST_CASE("fused search beats the best single model on the engineered scenario") {
    QuickProblem qp(1600, 300, 0.1);
    RunResult result = run_search(qp.problem, qp.space({1, 2}, {8, 16}), 30, 2);

    double best_single = 0.0;
    for (const auto& entry : qp.pool.entries) {
        auto preds = model_predictions(entry, qp.problem.val_idx);
        auto report = full_report(preds, qp.dataset, qp.problem.val_idx, qp.configs.epsilon);
        best_single = std::max(best_single, report.reward);
    }
    CHECK(result.best.reward > best_single);
}

TEST_CASE("per-episode unprivileged basis recomputes weights from the selection") {
    QuickProblem qp(400, 20);
    SearchProblem per_episode = qp.problem;
    per_episode.configs.unpriv_basis = UnprivBasis::per_episode;
    RunResult result = run_search(per_episode, qp.space(), 6, 11);
    CHECK(result.history.size() == 6);
    for (const auto& record : result.history) CHECK_FALSE(record.failed);
}

TEST_CASE("a perfectly fair pool searches without a proxy") {
    SyntheticConfig cfg = preset_config("uniform-fair");
    cfg.num_samples = 600;
    auto [ds, pool] = generate_synthetic(cfg, 9);
    SplitAssignment split = split_dataset(ds, 9);
    SearchConfigs configs;
    configs.controller.hidden_size = 16;
    SearchProblem problem = prepare_problem(ds, pool, split, configs);
    CHECK_FALSE(problem.unpriv.any());

    SearchSpace space;
    space.n_select = 2;
    space.pool_size = 2;
    space.depth_choices = {1};
    space.width_choices = {8};
    space.activation_choices = {Activation::relu};
    RunResult result = run_search(problem, space, 5, 9);
    for (const auto& record : result.history) {
        CHECK_FALSE(record.failed);
        CHECK(record.report.overall_accuracy == 1.0);
        CHECK(record.report.multi_unfairness == 0.0);
        // every unfairness term rides the epsilon clamp
        CHECK(record.reward == doctest::Approx(2.0 / configs.epsilon));
    }
}

TEST_CASE("history csv rows parse back to the record") {
    QuickProblem qp(400, 20);
    RunResult result = run_search(qp.problem, qp.space(), 6, 13);
    std::string header = history_csv_header(qp.dataset);
    CHECK(header ==
          "episode,reward,accuracy,U_age,U_site,selected_models,depth,widths,activations,seconds");
    for (const auto& record : result.history) {
        auto fields = split_csv_line(history_csv_row(qp.dataset, qp.pool, record));
        REQUIRE(fields.size() == 10);
        CHECK(std::stol(fields[0]) == record.episode);
        CHECK(std::stod(fields[1]) == doctest::Approx(record.reward).epsilon(1e-12));
        CHECK(std::stod(fields[2]) == doctest::Approx(record.report.overall_accuracy));
        CHECK(fields[6] == std::to_string(record.spec.depth));
    }
}

} // TEST_SUITE
