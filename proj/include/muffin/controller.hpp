#ifndef MUFFIN_CONTROLLER_HPP
#define MUFFIN_CONTROLLER_HPP

#include "muffin/matrix.hpp"
#include "muffin/mlp.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace muffin {

// The fusion search space: which models to unite and the head architecture
// grid. `pinned_model`, when set, forces that pool entry as the first
// selection and the policy chooses only the remaining ones.
struct SearchSpace {
    int n_select = 2;
    int pool_size = 0;
    std::vector<int> depth_choices = {1, 2, 3};
    std::vector<int> width_choices = {8, 10, 12, 16, 18};
    std::vector<Activation> activation_choices = {Activation::relu, Activation::tanh,
                                                  Activation::sigmoid};
    int pinned_model = -1;

    void validate() const;
    int max_depth() const;
    // n_select model steps, one depth step, then width/activation per layer.
    int max_steps() const { return n_select + 1 + 2 * max_depth(); }
    // Count of distinct structures (unordered model subsets x head grid).
    double structure_count() const;
};

// One point of the search space.
struct FusionSpec {
    std::vector<int> selected_models;
    int depth = 0;
    std::vector<int> widths;
    std::vector<Activation> activations;

    // Canonical memo key; model order is irrelevant to it.
    std::string key() const;
    void validate(const SearchSpace& space) const;
};

FusionSpec spec_from_actions(const SearchSpace& space, std::span<const int> actions);
std::vector<int> actions_from_spec(const SearchSpace& space, const FusionSpec& spec);

// ---- generic sequential decision problem ---------------------------------

// One decision: which decoder scores it, how many actions exist, which are
// masked to probability zero, and whether the action is forced (probability
// one, no decoder involved).
struct StepDesc {
    int decoder = 0;
    int num_choices = 0;
    std::vector<char> masked; // empty = nothing masked
    int forced = -1;
};

// Produces the decision sequence one step at a time given the actions taken
// so far; nullopt terminates the episode. Implemented by the fusion search
// space and by the toy problems in the tests.
class DecisionDriver {
public:
    virtual ~DecisionDriver() = default;
    virtual std::vector<int> decoder_choices() const = 0; // choices per decoder slot
    virtual std::optional<StepDesc> next_step(std::span<const int> actions) const = 0;
};

class SearchSpaceDriver final : public DecisionDriver {
public:
    explicit SearchSpaceDriver(SearchSpace space);
    std::vector<int> decoder_choices() const override;
    std::optional<StepDesc> next_step(std::span<const int> actions) const override;
    const SearchSpace& space() const { return space_; }

private:
    SearchSpace space_;
};

// ---- controller -----------------------------------------------------------

struct ControllerConfig {
    int hidden_size = 64;
    double gamma = 0.99;          // per-step discount in the policy gradient
    double baseline_decay = 0.9;  // exponential moving average factor
    int batch_episodes = 5;       // m of the estimator
    double policy_lr = 0.01;
};

struct ControllerDecoder {
    Matrix weight; // choices x hidden
    std::vector<double> bias;
};

// tanh recurrent cell plus per-step affine decoders and learned action
// embeddings (row 0 of the table is the start token).
struct ControllerParams {
    Matrix w_input;  // hidden x hidden, consumes the previous action's embedding
    Matrix w_hidden; // hidden x hidden
    std::vector<double> b_hidden;
    std::vector<ControllerDecoder> decoders;
    Matrix embeddings;               // (1 + total actions) x hidden
    std::vector<int> action_offsets; // decoder slot -> first embedding row - 1

    double baseline = 0.0;
    bool baseline_initialized = false;
    long updates_done = 0;
    ControllerConfig config;

    void add_scaled_tensors(const ControllerParams& grad, double scale);
    bool finite() const;
};

struct EpisodeTrace {
    std::vector<int> actions;
    std::vector<int> decoder_index;
    std::vector<char> forced;
    std::vector<double> log_probs; // 0 for forced steps
    double reward = 0.0;
    bool has_reward = false;

    double total_log_prob() const;
};

ControllerParams init_controller(const DecisionDriver& driver, const ControllerConfig& config,
                                 std::uint64_t seed);

// Pure given (params, seed): already-taken model choices are masked to exact
// probability zero before normalization.
EpisodeTrace sample_episode(const ControllerParams& params, const DecisionDriver& driver,
                            std::uint64_t seed);

// Log-probability of a fixed action sequence under the current policy.
// Throws when the sequence is not realizable in the driver's space.
double episode_logprob(const ControllerParams& params, const DecisionDriver& driver,
                       std::span<const int> actions);

// Batch REINFORCE gradient (ascent direction) at a fixed baseline:
// (1/m) sum_k sum_t gamma^(T-t) grad log pi(a_t | .) (R_k - b).
ControllerParams policy_gradient(const ControllerParams& params, const DecisionDriver& driver,
                                 std::span<const EpisodeTrace> batch, double baseline);

// Gradient-ascent step followed by the baseline update
// b <- decay * b + (1 - decay) * mean(R). The first batch initializes the
// baseline to its mean reward before computing advantages.
void reinforce_update(ControllerParams& params, const DecisionDriver& driver,
                      std::span<const EpisodeTrace> batch);

std::string controller_to_json(const ControllerParams& params);
ControllerParams controller_from_json(const std::string& text);

} // namespace muffin

#endif
