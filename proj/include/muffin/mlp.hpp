#ifndef MUFFIN_MLP_HPP
#define MUFFIN_MLP_HPP

#include "muffin/dataset.hpp"
#include "muffin/matrix.hpp"
#include "muffin/metrics.hpp"
#include "muffin/proxy.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace muffin {

enum class Activation { relu, tanh, sigmoid };

Activation parse_activation(const std::string& s);
std::string to_string(Activation a);

// Architecture of the fusion head. Hidden layers apply an affine map plus the
// layer's activation; an implicit output layer of width `output_width` (the
// class count) applies an affine map plus softmax.
struct MlpSpec {
    std::vector<int> hidden_widths;
    std::vector<Activation> activations; // one per hidden layer
    int input_width = 0;
    int output_width = 0;

    void validate() const;
    std::size_t depth() const { return hidden_widths.size(); }
};

struct MlpLayer {
    Matrix weight; // out x in
    std::vector<double> bias;

    bool operator==(const MlpLayer& o) const = default;
};

struct MlpParams {
    std::vector<MlpLayer> layers; // hidden layers then the output layer

    void add_scaled(const MlpParams& other, double scale);
    void fill(double v);
    bool operator==(const MlpParams& o) const = default;
};

struct TrainConfig {
    double learning_rate = 0.05;
    int epochs = 200;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

// Glorot-uniform weights, zero biases; deterministic per seed.
MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed);

// Probability vector of length output_width (softmax output).
std::vector<double> forward(const MlpParams& params, const MlpSpec& spec,
                            std::span<const double> input);

// Mean over samples of weight * (sum of squared output errors) / output_width.
double loss(const MlpParams& params, const MlpSpec& spec, std::span<const ProxySample> proxy);

// Analytic gradient of `loss` over the batch, same shape as the parameters.
MlpParams gradient(const MlpParams& params, const MlpSpec& spec, std::span<const ProxySample> batch);

// Mini-batch gradient descent at a fixed learning rate; order reshuffled each
// epoch from config.seed. Throws "training diverged at epoch e" on non-finite
// loss.
MlpParams train(const MlpSpec& spec, std::span<const ProxySample> proxy, const TrainConfig& config);

// Consensus routing: when every selected model predicts the same class, that
// class is returned untouched; otherwise the head decides. Ties in any argmax
// break toward the lowest class index.
int fused_predict(const ModelPool& pool, std::span<const int> selected, const MlpParams& params,
                  const MlpSpec& spec, std::size_t sample_index);

Predictions fused_predictions(const ModelPool& pool, std::span<const int> selected,
                              const MlpParams& params, const MlpSpec& spec,
                              std::span<const std::size_t> split);

std::string mlp_to_json(const MlpParams& params);
MlpParams mlp_from_json(const std::string& text);

} // namespace muffin

#endif
