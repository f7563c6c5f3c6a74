#include "muffin/controller.hpp"
#include "muffin/csv.hpp"
#include "muffin/dataset.hpp"
#include "muffin/errors.hpp"
#include "muffin/metrics.hpp"
#include "muffin/mlp.hpp"
#include "muffin/proxy.hpp"
#include "muffin/search.hpp"
#include "muffin/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace muffin;

namespace {

// Flat run configuration; config-file values load first, command-line flags
// override field by field.
struct RunConfig {
    std::string dataset, schema, pool, out = ".";
    long episodes = 500;
    std::uint64_t seed = 0;
    int workers = 1;

    int n_select = 2;
    std::vector<int> depth_choices = {1, 2, 3};
    std::vector<int> width_choices = {8, 10, 12, 16, 18};
    std::vector<std::string> activation_choices = {"relu", "tanh", "sigmoid"};
    std::string pin_model;

    int hidden_size = 64;
    double gamma = 0.99;
    double baseline_decay = 0.9;
    int batch_episodes = 5;
    double policy_lr = 0.01;

    double head_lr = 0.05;
    int head_epochs = 200;
    int head_batch = 32;

    double epsilon = 1e-3;
    double margin = 0.0;
    bool exclude_unknown = true;
    std::string unpriv_basis = "pool_mean";   // pool_mean | per_episode
    std::string proxy_weights = "algorithm";  // algorithm | uniform
};

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("malformed config JSON in " + path + ": " + e.what());
    }
    cfg.dataset = j.value("dataset", cfg.dataset);
    cfg.schema = j.value("schema", cfg.schema);
    cfg.pool = j.value("pool", cfg.pool);
    cfg.out = j.value("out", cfg.out);
    cfg.episodes = j.value("episodes", cfg.episodes);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.n_select = j.value("n_select", cfg.n_select);
    cfg.depth_choices = j.value("depth_choices", cfg.depth_choices);
    cfg.width_choices = j.value("width_choices", cfg.width_choices);
    cfg.activation_choices = j.value("activation_choices", cfg.activation_choices);
    cfg.pin_model = j.value("pin_model", cfg.pin_model);
    cfg.hidden_size = j.value("hidden_size", cfg.hidden_size);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.baseline_decay = j.value("baseline_decay", cfg.baseline_decay);
    cfg.batch_episodes = j.value("batch_episodes", cfg.batch_episodes);
    cfg.policy_lr = j.value("policy_lr", cfg.policy_lr);
    cfg.head_lr = j.value("head_lr", cfg.head_lr);
    cfg.head_epochs = j.value("head_epochs", cfg.head_epochs);
    cfg.head_batch = j.value("head_batch", cfg.head_batch);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.margin = j.value("margin", cfg.margin);
    cfg.exclude_unknown = j.value("exclude_unknown", cfg.exclude_unknown);
    cfg.unpriv_basis = j.value("unpriv_basis", cfg.unpriv_basis);
    cfg.proxy_weights = j.value("proxy_weights", cfg.proxy_weights);
}

json config_to_json(const RunConfig& cfg) {
    return json{{"dataset", cfg.dataset},
                {"schema", cfg.schema},
                {"pool", cfg.pool},
                {"out", cfg.out},
                {"episodes", cfg.episodes},
                {"seed", cfg.seed},
                {"workers", cfg.workers},
                {"n_select", cfg.n_select},
                {"depth_choices", cfg.depth_choices},
                {"width_choices", cfg.width_choices},
                {"activation_choices", cfg.activation_choices},
                {"pin_model", cfg.pin_model},
                {"hidden_size", cfg.hidden_size},
                {"gamma", cfg.gamma},
                {"baseline_decay", cfg.baseline_decay},
                {"batch_episodes", cfg.batch_episodes},
                {"policy_lr", cfg.policy_lr},
                {"head_lr", cfg.head_lr},
                {"head_epochs", cfg.head_epochs},
                {"head_batch", cfg.head_batch},
                {"epsilon", cfg.epsilon},
                {"margin", cfg.margin},
                {"exclude_unknown", cfg.exclude_unknown},
                {"unpriv_basis", cfg.unpriv_basis},
                {"proxy_weights", cfg.proxy_weights}};
}

SearchConfigs search_configs(const RunConfig& cfg) {
    SearchConfigs configs;
    configs.controller.hidden_size = cfg.hidden_size;
    configs.controller.gamma = cfg.gamma;
    configs.controller.baseline_decay = cfg.baseline_decay;
    configs.controller.batch_episodes = cfg.batch_episodes;
    configs.controller.policy_lr = cfg.policy_lr;
    configs.head.learning_rate = cfg.head_lr;
    configs.head.epochs = cfg.head_epochs;
    configs.head.batch_size = cfg.head_batch;
    configs.epsilon = cfg.epsilon;
    configs.margin = cfg.margin;
    configs.exclude_unknown = cfg.exclude_unknown;
    if (cfg.unpriv_basis == "pool_mean")
        configs.unpriv_basis = UnprivBasis::pool_mean;
    else if (cfg.unpriv_basis == "per_episode")
        configs.unpriv_basis = UnprivBasis::per_episode;
    else
        throw ValidationError("unpriv_basis must be 'pool_mean' or 'per_episode'");
    if (cfg.proxy_weights == "algorithm")
        configs.proxy_weighting = ProxyWeighting::algorithm;
    else if (cfg.proxy_weights == "uniform")
        configs.proxy_weighting = ProxyWeighting::uniform;
    else
        throw ValidationError("proxy_weights must be 'algorithm' or 'uniform'");
    configs.workers = cfg.workers;
    return configs;
}

SearchSpace search_space(const RunConfig& cfg, const ModelPool& pool) {
    SearchSpace space;
    space.n_select = cfg.n_select;
    space.pool_size = static_cast<int>(pool.size());
    space.depth_choices = cfg.depth_choices;
    space.width_choices = cfg.width_choices;
    space.activation_choices.clear();
    for (const auto& a : cfg.activation_choices)
        space.activation_choices.push_back(parse_activation(a));
    if (!cfg.pin_model.empty()) {
        int idx = pool.entry_index(cfg.pin_model);
        if (idx < 0) throw ValidationError("pinned model '" + cfg.pin_model + "' not in pool");
        space.pinned_model = idx;
    }
    space.validate();
    return space;
}

struct LoadedData {
    Dataset dataset;
    ModelPool pool;
};

LoadedData load_inputs(const RunConfig& cfg) {
    if (cfg.dataset.empty() || cfg.schema.empty() || cfg.pool.empty())
        throw ValidationError("dataset, schema, and pool paths are required");
    LoadedData data;
    data.dataset = load_dataset(cfg.dataset, cfg.schema);
    data.pool = load_pool(cfg.pool, data.dataset);
    return data;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << text;
}

// ---- synth -----------------------------------------------------------------

int cmd_synth(const std::string& preset, const std::string& synth_config, std::uint64_t seed,
              const std::string& out_dir) {
    SyntheticConfig config = synth_config.empty() ? preset_config(preset)
                                                  : synthetic_config_from_json_file(synth_config);
    auto [dataset, pool] = generate_synthetic(config, seed);

    fs::create_directories(out_dir);
    fs::path out(out_dir);
    write_dataset((out / "dataset.csv").string(), dataset);
    write_schema((out / "schema.json").string(), dataset);
    write_pool((out / "pool.json").string(), dataset, pool);

    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);
    auto labels = split_labels(dataset, all);
    std::cout << "wrote " << (2 + pool.size() + 1) << " files to " << out_dir << "\n";
    for (const auto& entry : pool.entries) {
        auto preds = model_predictions(entry, all);
        std::cout << entry.name << ": overall " << format_double(accuracy(preds, labels)) << "\n";
        for (std::size_t attr = 0; attr < dataset.schema.size(); ++attr) {
            const auto& attribute = dataset.schema.attributes[attr];
            std::vector<std::vector<std::size_t>> members(attribute.groups.size());
            for (std::size_t i = 0; i < dataset.size(); ++i)
                members[dataset.samples[i].group_of[attr]].push_back(i);
            for (std::size_t g = 0; g < attribute.groups.size(); ++g) {
                if (members[g].empty()) continue;
                std::cout << "  " << attribute.name << "/" << attribute.groups[g] << " "
                          << format_double(accuracy(preds, labels, members[g])) << "\n";
            }
        }
    }
    return 0;
}

// ---- metrics ----------------------------------------------------------------

std::string report_csv_header(const Dataset& dataset) {
    std::ostringstream out;
    out << "model,split,accuracy,multi_unfairness,reward";
    for (const auto& attr : dataset.schema.attributes) out << ",U_" << attr.name;
    for (const auto& attr : dataset.schema.attributes)
        for (const auto& group : attr.groups) out << ",acc_" << attr.name << "_" << group;
    return out.str();
}

std::string report_csv_row(const Dataset& dataset, const std::string& model,
                           const std::string& split, const FairnessReport& report) {
    std::ostringstream out;
    out << model << ',' << split << ',' << format_double(report.overall_accuracy) << ','
        << format_double(report.multi_unfairness) << ',' << format_double(report.reward);
    for (const auto& attr : dataset.schema.attributes)
        out << ',' << format_double(report.per_attribute_unfairness.at(attr.name));
    for (const auto& attr : dataset.schema.attributes) {
        auto group_map = report.per_group_accuracy.find(attr.name);
        for (const auto& group : attr.groups) {
            out << ',';
            if (group_map != report.per_group_accuracy.end()) {
                auto it = group_map->second.find(group);
                if (it != group_map->second.end()) out << format_double(it->second);
            }
        }
    }
    return out.str();
}

int cmd_metrics(const RunConfig& cfg) {
    auto data = load_inputs(cfg);
    const Dataset& dataset = data.dataset;
    const ModelPool& pool = data.pool;
    fs::create_directories(cfg.out);
    fs::path out(cfg.out);

    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);

    std::vector<std::pair<std::string, std::vector<std::size_t>>> splits;
    splits.emplace_back("all", all);
    if (dataset.size() >= 5) {
        SplitAssignment split = split_dataset(dataset, cfg.seed);
        splits.emplace_back("train", indices_of(dataset, split.train_ids));
        splits.emplace_back("val", indices_of(dataset, split.val_ids));
        splits.emplace_back("test", indices_of(dataset, split.test_ids));
    }

    std::ostringstream metrics_csv;
    metrics_csv << report_csv_header(dataset) << '\n';
    for (const auto& entry : pool.entries)
        for (const auto& [name, idx] : splits) {
            auto preds = model_predictions(entry, idx);
            auto report = full_report(preds, dataset, idx, cfg.epsilon);
            metrics_csv << report_csv_row(dataset, entry.name, name, report) << '\n';
        }
    write_file((out / "baseline_metrics.csv").string(), metrics_csv.str());

    // pairwise breakdowns over the whole dataset, one row per (pair, group)
    const auto& train_idx = splits.size() > 1 ? splits[1].second : all;
    auto unpriv = identify_unprivileged(dataset, pool, train_idx, cfg.margin, cfg.exclude_unknown);

    auto labels = split_labels(dataset, all);
    std::ostringstream breakdown_csv;
    breakdown_csv << "model_a,model_b,attribute,group,unprivileged,both_wrong,only_a,only_b,both_right\n";
    for (std::size_t a = 0; a < pool.size(); ++a)
        for (std::size_t b = a + 1; b < pool.size(); ++b) {
            auto preds_a = model_predictions(pool.entries[a], all);
            auto preds_b = model_predictions(pool.entries[b], all);
            for (std::size_t attr = 0; attr < dataset.schema.size(); ++attr) {
                const auto& attribute = dataset.schema.attributes[attr];
                std::vector<std::vector<std::size_t>> members(attribute.groups.size());
                for (std::size_t i = 0; i < dataset.size(); ++i)
                    members[dataset.samples[i].group_of[attr]].push_back(i);
                for (std::size_t g = 0; g < attribute.groups.size(); ++g) {
                    if (members[g].empty()) continue;
                    auto bd = disagreement_breakdown(preds_a, preds_b, labels, members[g]);
                    breakdown_csv << pool.entries[a].name << ',' << pool.entries[b].name << ','
                                  << attribute.name << ',' << attribute.groups[g] << ','
                                  << (unpriv.flagged(attribute.name, static_cast<int>(g)) ? 1 : 0)
                                  << ',' << format_double(bd.both_wrong) << ','
                                  << format_double(bd.only_a) << ',' << format_double(bd.only_b)
                                  << ',' << format_double(bd.both_right) << '\n';
                }
            }
        }
    write_file((out / "breakdown.csv").string(), breakdown_csv.str());
    std::cout << "wrote baseline_metrics.csv and breakdown.csv to " << cfg.out << "\n";
    return 0;
}

// ---- search / oracle ---------------------------------------------------------

int cmd_search(const RunConfig& cfg) {
    auto data = load_inputs(cfg);
    fs::create_directories(cfg.out);
    fs::path out(cfg.out);

    SplitAssignment split = split_dataset(data.dataset, cfg.seed);
    SearchConfigs configs = search_configs(cfg);
    SearchProblem problem = prepare_problem(data.dataset, data.pool, split, configs);
    SearchSpace space = search_space(cfg, data.pool);

    write_file((out / "run_config.json").string(), config_to_json(cfg).dump(2) + "\n");
    write_weight_tables((out / "weights_groups.csv").string(),
                        (out / "weights_samples.csv").string(), problem.weights);

    CheckpointHook checkpoint = [&](long episode, const ControllerParams& controller,
                                    const std::vector<SearchRecord>& history) {
        write_file((out / "checkpoint.json").string(), controller_to_json(controller));
        write_history_csv((out / "history.csv").string(), data.dataset, data.pool, history);
        (void)episode;
    };

    RunResult result = run_search(problem, space, cfg.episodes, cfg.seed, checkpoint);

    write_history_csv((out / "history.csv").string(), data.dataset, data.pool, result.history);
    write_history_csv((out / "pareto.csv").string(), data.dataset, data.pool,
                      result.pareto.records);
    write_file((out / "best.json").string(), best_record_json(data.pool, result) + "\n");
    write_file((out / "checkpoint.json").string(), controller_to_json(result.controller));

    std::cout << "best episode " << result.best.episode << " reward "
              << format_double(result.best.reward) << " validation accuracy "
              << format_double(result.best.report.overall_accuracy) << " test accuracy "
              << format_double(result.best_test.overall_accuracy) << "\n";
    std::cout << "pareto frontier size " << result.pareto.records.size() << "\n";
    return 0;
}

int cmd_oracle(const RunConfig& cfg) {
    auto data = load_inputs(cfg);
    fs::create_directories(cfg.out);
    fs::path out(cfg.out);

    SplitAssignment split = split_dataset(data.dataset, cfg.seed);
    SearchConfigs configs = search_configs(cfg);
    SearchProblem problem = prepare_problem(data.dataset, data.pool, split, configs);
    SearchSpace space = search_space(cfg, data.pool);

    SearchRecord best = brute_force_oracle(problem, space, cfg.seed);

    json j;
    json names = json::array();
    for (int m : best.spec.selected_models) names.push_back(data.pool.entries[m].name);
    j["spec"] = {{"selected_models", names},
                 {"depth", best.spec.depth},
                 {"widths", best.spec.widths}};
    json acts = json::array();
    for (Activation a : best.spec.activations) acts.push_back(to_string(a));
    j["spec"]["activations"] = acts;
    j["reward"] = best.reward;
    j["structure_index"] = best.episode;
    j["structures_total"] = space.structure_count();
    j["validation"] = {{"accuracy", best.report.overall_accuracy},
                       {"multi_unfairness", best.report.multi_unfairness},
                       {"per_attribute_unfairness", best.report.per_attribute_unfairness}};
    write_file((out / "oracle_best.json").string(), j.dump(2) + "\n");
    std::cout << "oracle best reward " << format_double(best.reward) << " over "
              << format_double(space.structure_count()) << " structures\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"muffin: fairness-aware fusion of frozen classifier pools"};
    app.require_subcommand(1);

    // shared option storage; each subcommand binds what it uses
    std::string config_path, preset, synth_config, out_dir = ".";
    RunConfig cfg;
    std::optional<std::string> opt_dataset, opt_schema, opt_pool, opt_out, opt_pin, opt_basis,
        opt_proxy_weights;
    std::optional<long> opt_episodes;
    std::optional<std::uint64_t> opt_seed;
    std::optional<int> opt_workers, opt_n_select, opt_hidden, opt_batch_episodes, opt_head_epochs,
        opt_head_batch;
    std::optional<double> opt_gamma, opt_baseline_decay, opt_policy_lr, opt_head_lr, opt_epsilon,
        opt_margin;
    std::optional<bool> opt_exclude_unknown;
    std::vector<int> opt_depths, opt_widths;
    std::vector<std::string> opt_activations;

    auto add_common = [&](CLI::App* cmd, bool with_space) {
        cmd->add_option("--config", config_path, "JSON config file; flags override its values");
        cmd->add_option("--seed", opt_seed, "run seed");
        cmd->add_option("--out", opt_out, "output directory");
        cmd->add_option("--workers", opt_workers, "parallel candidate evaluations (1 = serial)");
        cmd->add_option("--dataset", opt_dataset, "dataset CSV path");
        cmd->add_option("--schema", opt_schema, "schema JSON path");
        cmd->add_option("--pool", opt_pool, "pool manifest JSON path");
        cmd->add_option("--epsilon", opt_epsilon, "reward denominator clamp");
        cmd->add_option("--margin", opt_margin, "unprivileged threshold margin");
        cmd->add_option("--exclude-unknown", opt_exclude_unknown,
                        "skip unknown groups when flagging unprivileged groups");
        if (with_space) {
            cmd->add_option("--episodes", opt_episodes, "search episode budget");
            cmd->add_option("--n-select", opt_n_select, "models united per structure");
            cmd->add_option("--depth-choices", opt_depths, "head depth choices")->delimiter(',');
            cmd->add_option("--width-choices", opt_widths, "head width choices")->delimiter(',');
            cmd->add_option("--activation-choices", opt_activations, "head activation choices")
                ->delimiter(',');
            cmd->add_option("--pin-model", opt_pin, "always include this pool model");
            cmd->add_option("--hidden-size", opt_hidden, "controller hidden size");
            cmd->add_option("--gamma", opt_gamma, "policy gradient discount");
            cmd->add_option("--baseline-decay", opt_baseline_decay, "reward baseline decay");
            cmd->add_option("--batch-episodes", opt_batch_episodes, "episodes per policy update");
            cmd->add_option("--policy-lr", opt_policy_lr, "controller learning rate");
            cmd->add_option("--head-lr", opt_head_lr, "fusion head learning rate");
            cmd->add_option("--head-epochs", opt_head_epochs, "fusion head training epochs");
            cmd->add_option("--head-batch", opt_head_batch, "fusion head batch size");
            cmd->add_option("--unpriv-basis", opt_basis,
                            "unprivileged basis: pool_mean or per_episode");
            cmd->add_option("--proxy-weights", opt_proxy_weights,
                            "proxy weighting: algorithm or uniform");
        }
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset and model pool");
    synth->add_option("--preset", preset, "built-in scenario: complementary-2attr or uniform-fair");
    synth->add_option("--synth-config", synth_config, "custom scenario JSON");
    add_common(synth, false);

    CLI::App* metrics = app.add_subcommand("metrics", "standalone pool metrics and breakdowns");
    add_common(metrics, false);

    CLI::App* search = app.add_subcommand("search", "run the fusion structure search");
    add_common(search, true);

    CLI::App* oracle = app.add_subcommand("oracle", "enumerate every structure (guarded)");
    add_common(oracle, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (!config_path.empty()) load_config_file(cfg, config_path);
        if (opt_dataset) cfg.dataset = *opt_dataset;
        if (opt_schema) cfg.schema = *opt_schema;
        if (opt_pool) cfg.pool = *opt_pool;
        if (opt_out) cfg.out = *opt_out;
        if (opt_seed) cfg.seed = *opt_seed;
        if (opt_workers) cfg.workers = *opt_workers;
        if (opt_episodes) cfg.episodes = *opt_episodes;
        if (opt_n_select) cfg.n_select = *opt_n_select;
        if (!opt_depths.empty()) cfg.depth_choices = opt_depths;
        if (!opt_widths.empty()) cfg.width_choices = opt_widths;
        if (!opt_activations.empty()) cfg.activation_choices = opt_activations;
        if (opt_pin) cfg.pin_model = *opt_pin;
        if (opt_hidden) cfg.hidden_size = *opt_hidden;
        if (opt_gamma) cfg.gamma = *opt_gamma;
        if (opt_baseline_decay) cfg.baseline_decay = *opt_baseline_decay;
        if (opt_batch_episodes) cfg.batch_episodes = *opt_batch_episodes;
        if (opt_policy_lr) cfg.policy_lr = *opt_policy_lr;
        if (opt_head_lr) cfg.head_lr = *opt_head_lr;
        if (opt_head_epochs) cfg.head_epochs = *opt_head_epochs;
        if (opt_head_batch) cfg.head_batch = *opt_head_batch;
        if (opt_epsilon) cfg.epsilon = *opt_epsilon;
        if (opt_margin) cfg.margin = *opt_margin;
        if (opt_exclude_unknown) cfg.exclude_unknown = *opt_exclude_unknown;
        if (opt_basis) cfg.unpriv_basis = *opt_basis;
        if (opt_proxy_weights) cfg.proxy_weights = *opt_proxy_weights;

        if (synth->parsed()) {
            if (preset.empty() && synth_config.empty())
                throw ValidationError("synth needs --preset or --synth-config");
            return cmd_synth(preset, synth_config, cfg.seed, cfg.out);
        }
        if (metrics->parsed()) return cmd_metrics(cfg);
        if (search->parsed()) return cmd_search(cfg);
        if (oracle->parsed()) return cmd_oracle(cfg);
    } catch (const GuardError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const InfeasibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
