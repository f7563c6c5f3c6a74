#include "muffin/mlp.hpp"

#include "muffin/errors.hpp"
#include "muffin/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace muffin {

using nlohmann::json;

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ValidationError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    default: return "sigmoid";
    }
}

void MlpSpec::validate() const {
    if (input_width < 1 || output_width < 1)
        throw ValidationError("MLP input/output widths must be positive");
    if (activations.size() != hidden_widths.size())
        throw ValidationError("one activation per hidden layer required");
    for (int w : hidden_widths)
        if (w < 1) throw ValidationError("hidden widths must be positive");
}

void MlpParams::add_scaled(const MlpParams& other, double scale) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].weight.add_scaled(other.layers[l].weight, scale);
        for (std::size_t i = 0; i < layers[l].bias.size(); ++i)
            layers[l].bias[i] += scale * other.layers[l].bias[i];
    }
}

void MlpParams::fill(double v) {
    for (auto& layer : layers) {
        layer.weight.fill(v);
        std::fill(layer.bias.begin(), layer.bias.end(), v);
    }
}

MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(mix_seed(seed, 0x31f0));
    MlpParams params;
    int in = spec.input_width;
    std::vector<int> widths = spec.hidden_widths;
    widths.push_back(spec.output_width);
    for (int out : widths) {
        MlpLayer layer;
        layer.weight = Matrix(out, in);
        double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
        layer.bias.assign(out, 0.0);
        params.layers.push_back(std::move(layer));
        in = out;
    }
    return params;
}

namespace {

double activate(Activation a, double z) {
    switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    default: return 1.0 / (1.0 + std::exp(-z));
    }
}

// Derivative written in terms of the activation output.
double activate_grad(Activation a, double out, double z) {
    switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - out * out;
    default: return out * (1.0 - out);
    }
}

void softmax_inplace(std::vector<double>& v) {
    double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

// Full forward pass keeping pre-activations and activations per layer.
struct ForwardTrace {
    std::vector<std::vector<double>> pre;  // z per layer
    std::vector<std::vector<double>> post; // activation output per layer; last is softmax
};

ForwardTrace forward_trace(const MlpParams& params, const MlpSpec& spec,
                           std::span<const double> input) {
    ForwardTrace trace;
    std::vector<double> cur(input.begin(), input.end());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        std::vector<double> z = layer.bias;
        layer.weight.mul_add(cur, z);
        trace.pre.push_back(z);
        if (l + 1 < params.layers.size()) {
            Activation act = spec.activations[l];
            for (double& v : z) v = activate(act, v);
        } else {
            softmax_inplace(z);
        }
        trace.post.push_back(z);
        cur = trace.post.back();
    }
    return trace;
}

MlpParams zeros_like(const MlpParams& params) {
    MlpParams g;
    for (const auto& layer : params.layers) {
        MlpLayer zl;
        zl.weight = Matrix(layer.weight.rows(), layer.weight.cols());
        zl.bias.assign(layer.bias.size(), 0.0);
        g.layers.push_back(std::move(zl));
    }
    return g;
}

// Accumulates the gradient of one sample's contribution into `grad` and
// returns the sample's weighted squared error (before the batch mean).
double backprop_sample(const MlpParams& params, const MlpSpec& spec, const ProxySample& sample,
                       double batch_scale, MlpParams& grad) {
    auto trace = forward_trace(params, spec, sample.input);
    const auto& out = trace.post.back();
    const std::size_t m = out.size();

    double sq = 0.0;
    std::vector<double> dl_ds(m);
    for (std::size_t j = 0; j < m; ++j) {
        double e = out[j] - sample.target[j];
        sq += e * e;
        dl_ds[j] = 2.0 * sample.weight * e / (static_cast<double>(m)) * batch_scale;
    }

    // softmax jacobian: dz_k = s_k (g_k - sum_j g_j s_j)
    double dot = 0.0;
    for (std::size_t j = 0; j < m; ++j) dot += dl_ds[j] * out[j];
    std::vector<double> dz(m);
    for (std::size_t k = 0; k < m; ++k) dz[k] = out[k] * (dl_ds[k] - dot);

    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& layer = params.layers[li];
        std::span<const double> below = li == 0
            ? std::span<const double>(sample.input)
            : std::span<const double>(trace.post[li - 1]);
        grad.layers[li].weight.add_outer(dz, below);
        for (std::size_t i = 0; i < dz.size(); ++i) grad.layers[li].bias[i] += dz[i];
        if (li == 0) break;
        std::vector<double> da(layer.weight.cols(), 0.0);
        layer.weight.mul_transpose_add(dz, da);
        Activation act = spec.activations[li - 1];
        dz.assign(da.size(), 0.0);
        for (std::size_t i = 0; i < da.size(); ++i)
            dz[i] = da[i] * activate_grad(act, trace.post[li - 1][i], trace.pre[li - 1][i]);
    }
    return sample.weight * sq / static_cast<double>(m);
}

} // namespace

std::vector<double> forward(const MlpParams& params, const MlpSpec& spec,
                            std::span<const double> input) {
    if (input.size() != static_cast<std::size_t>(spec.input_width))
        throw ValidationError("MLP input length " + std::to_string(input.size()) +
                              " does not match spec input width " + std::to_string(spec.input_width));
    return forward_trace(params, spec, input).post.back();
}

double loss(const MlpParams& params, const MlpSpec& spec, std::span<const ProxySample> proxy) {
    if (proxy.empty()) throw ValidationError("loss over an empty proxy undefined");
    double total = 0.0;
    for (const auto& sample : proxy) {
        auto out = forward(params, spec, sample.input);
        double sq = 0.0;
        for (std::size_t j = 0; j < out.size(); ++j) {
            double e = out[j] - sample.target[j];
            sq += e * e;
        }
        total += sample.weight * sq / static_cast<double>(out.size());
    }
    return total / static_cast<double>(proxy.size());
}

MlpParams gradient(const MlpParams& params, const MlpSpec& spec, std::span<const ProxySample> batch) {
    if (batch.empty()) throw ValidationError("gradient over an empty batch undefined");
    MlpParams grad = zeros_like(params);
    double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& sample : batch) backprop_sample(params, spec, sample, scale, grad);
    return grad;
}

MlpParams train(const MlpSpec& spec, std::span<const ProxySample> proxy, const TrainConfig& config) {
    if (proxy.empty()) throw ValidationError("cannot train on an empty proxy dataset");
    if (config.learning_rate <= 0.0 || config.epochs < 1 || config.batch_size < 1)
        throw ValidationError("train config fields must be positive");

    MlpParams params = init_mlp(spec, config.seed);
    Rng shuffle_rng(mix_seed(config.seed, 0x7e61));
    std::vector<std::size_t> order(proxy.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
    std::vector<ProxySample> batch;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::size_t end = std::min(order.size(), start + batch_size);
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(proxy[order[k]]);

            MlpParams grad = zeros_like(params);
            double batch_loss = 0.0;
            double scale = 1.0 / static_cast<double>(batch.size());
            for (const auto& sample : batch)
                batch_loss += backprop_sample(params, spec, sample, scale, grad);
            epoch_loss += batch_loss;
            params.add_scaled(grad, -config.learning_rate);
        }
        if (!std::isfinite(epoch_loss))
            throw ValidationError("training diverged at epoch " + std::to_string(epoch));
    }
    return params;
}

int fused_predict(const ModelPool& pool, std::span<const int> selected, const MlpParams& params,
                  const MlpSpec& spec, std::size_t sample_index) {
    if (selected.empty()) throw ValidationError("no models selected");
    int consensus = pool.entries[selected[0]].predicted_class(sample_index);
    bool agree = true;
    for (std::size_t k = 1; k < selected.size(); ++k) {
        if (pool.entries[selected[k]].predicted_class(sample_index) != consensus) {
            agree = false;
            break;
        }
    }
    if (agree) return consensus;

    std::vector<double> input;
    input.reserve(selected.size() * pool.entries[selected[0]].scores.cols());
    for (int m : selected) {
        auto row = pool.entries[m].scores.row(sample_index);
        input.insert(input.end(), row.begin(), row.end());
    }
    auto out = forward(params, spec, input);
    int best = 0;
    for (std::size_t c = 1; c < out.size(); ++c)
        if (out[c] > out[best]) best = static_cast<int>(c);
    return best;
}

Predictions fused_predictions(const ModelPool& pool, std::span<const int> selected,
                              const MlpParams& params, const MlpSpec& spec,
                              std::span<const std::size_t> split) {
    Predictions preds;
    preds.reserve(split.size());
    for (std::size_t i : split) preds.push_back(fused_predict(pool, selected, params, spec, i));
    return preds;
}

std::string mlp_to_json(const MlpParams& params) {
    json layers = json::array();
    for (const auto& layer : params.layers) {
        json l;
        l["rows"] = layer.weight.rows();
        l["cols"] = layer.weight.cols();
        l["weights"] = layer.weight.data();
        l["bias"] = layer.bias;
        layers.push_back(std::move(l));
    }
    return json{{"layers", layers}}.dump(2);
}

MlpParams mlp_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed MLP JSON: ") + e.what());
    }
    MlpParams params;
    for (const auto& l : j.at("layers")) {
        MlpLayer layer;
        std::size_t rows = l.at("rows").get<std::size_t>();
        std::size_t cols = l.at("cols").get<std::size_t>();
        layer.weight = Matrix(rows, cols);
        auto weights = l.at("weights").get<std::vector<double>>();
        if (weights.size() != rows * cols) throw ValidationError("MLP JSON weight count mismatch");
        layer.weight.data() = std::move(weights);
        layer.bias = l.at("bias").get<std::vector<double>>();
        if (layer.bias.size() != rows) throw ValidationError("MLP JSON bias count mismatch");
        params.layers.push_back(std::move(layer));
    }
    return params;
}

} // namespace muffin
