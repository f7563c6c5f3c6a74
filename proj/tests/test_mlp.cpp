#include "muffin/errors.hpp"
#include "muffin/mlp.hpp"
#include "muffin/random.hpp"

#include <doctest.h>

#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace muffin;

namespace {

MlpSpec make_spec(std::vector<int> hidden, std::vector<Activation> acts, int in, int out) {
    MlpSpec spec;
    spec.hidden_widths = std::move(hidden);
    spec.activations = std::move(acts);
    spec.input_width = in;
    spec.output_width = out;
    return spec;
}

std::vector<ProxySample> random_proxy(Rng& rng, std::size_t n, int in, int out,
                                      bool unit_weights = false) {
    std::vector<ProxySample> proxy;
    for (std::size_t i = 0; i < n; ++i) {
        ProxySample p;
        p.sample_id = "p" + std::to_string(i);
        for (int k = 0; k < in; ++k) p.input.push_back(rng.uniform());
        p.target.assign(out, 0.0);
        p.target[rng.index(out)] = 1.0;
        p.weight = unit_weights ? 1.0 : rng.uniform(0.5, 2.0);
        proxy.push_back(std::move(p));
    }
    return proxy;
}

// Central finite differences of the loss with respect to every parameter.
MlpParams fd_gradient(const MlpParams& params, const MlpSpec& spec,
                      std::span<const ProxySample> batch, double step) {
    MlpParams fd = params;
    MlpParams probe = params;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (std::size_t i = 0; i < params.layers[l].weight.data().size(); ++i) {
            double saved = probe.layers[l].weight.data()[i];
            probe.layers[l].weight.data()[i] = saved + step;
            double up = loss(probe, spec, batch);
            probe.layers[l].weight.data()[i] = saved - step;
            double down = loss(probe, spec, batch);
            probe.layers[l].weight.data()[i] = saved;
            fd.layers[l].weight.data()[i] = (up - down) / (2.0 * step);
        }
        for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i) {
            double saved = probe.layers[l].bias[i];
            probe.layers[l].bias[i] = saved + step;
            double up = loss(probe, spec, batch);
            probe.layers[l].bias[i] = saved - step;
            double down = loss(probe, spec, batch);
            probe.layers[l].bias[i] = saved;
            fd.layers[l].bias[i] = (up - down) / (2.0 * step);
        }
    }
    return fd;
}

double max_relative_error(const MlpParams& a, const MlpParams& b) {
    double worst = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        auto span_err = [&worst](const std::vector<double>& x, const std::vector<double>& y) {
            for (std::size_t i = 0; i < x.size(); ++i) {
                double denom = std::max({std::abs(x[i]), std::abs(y[i]), 1e-8});
                worst = std::max(worst, std::abs(x[i] - y[i]) / denom);
            }
        };
        span_err(a.layers[l].weight.data(), b.layers[l].weight.data());
        span_err(a.layers[l].bias, b.layers[l].bias);
    }
    return worst;
}

} // namespace

TEST_SUITE("mlp") {

TEST_CASE("initialization is deterministic and shaped by the spec") {
    MlpSpec spec = make_spec({4}, {Activation::relu}, 6, 3);
    MlpParams a = init_mlp(spec, 17);
    MlpParams b = init_mlp(spec, 17);
    CHECK(a == b);
    CHECK(init_mlp(spec, 18) != a);

    REQUIRE(a.layers.size() == 2);
    CHECK(a.layers[0].weight.rows() == 4);
    CHECK(a.layers[0].weight.cols() == 6);
    CHECK(a.layers[0].bias.size() == 4);
    CHECK(a.layers[1].weight.rows() == 3);
    CHECK(a.layers[1].weight.cols() == 4);
    CHECK(a.layers[1].bias.size() == 3);
    for (double bias : a.layers[0].bias) CHECK(bias == 0.0);
}

TEST_CASE("initial weights are centered uniform draws within the stated bound") {
    MlpSpec spec = make_spec({64}, {Activation::tanh}, 64, 8);
    double bound = std::sqrt(6.0 / (64.0 + 64.0));
    double sum = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        MlpParams params = init_mlp(spec, seed);
        for (double w : params.layers[0].weight.data()) {
            CHECK(std::abs(w) <= bound);
            sum += w;
            ++count;
        }
    }
    // mean of n uniform(-b, b) draws has sd b/sqrt(3n)
    double se = bound / std::sqrt(3.0 * static_cast<double>(count));
    CHECK(std::abs(sum / static_cast<double>(count)) < 3.0 * se);
}

TEST_CASE("forward of all-zero parameters is the uniform distribution") {
    MlpSpec spec = make_spec({5}, {Activation::sigmoid}, 4, 4);
    MlpParams params = init_mlp(spec, 1);
    params.fill(0.0);
    auto out = forward(params, spec, std::vector<double>{0.3, 0.1, 0.9, 0.5});
    for (double v : out) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("forward reproduces a hand-computed softmax") {
    // identity-like weights: hidden = relu(x) = (1, 0); output logits = (1, 0)
    MlpSpec spec = make_spec({2}, {Activation::relu}, 2, 2);
    MlpParams params = init_mlp(spec, 1);
    params.fill(0.0);
    params.layers[0].weight(0, 0) = 1.0;
    params.layers[0].weight(1, 1) = 1.0;
    params.layers[1].weight(0, 0) = 1.0;
    params.layers[1].weight(1, 1) = 1.0;
    auto out = forward(params, spec, std::vector<double>{1.0, 0.0});
    CHECK(out[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(out[1] == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("forward output is a probability vector") {
    Rng rng(3);
    MlpSpec spec = make_spec({7, 5}, {Activation::tanh, Activation::relu}, 6, 3);
    MlpParams params = init_mlp(spec, 3);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> input;
        for (int k = 0; k < 6; ++k) input.push_back(rng.uniform(-2.0, 2.0));
        auto out = forward(params, spec, input);
        double sum = std::accumulate(out.begin(), out.end(), 0.0);
        CHECK(std::abs(sum - 1.0) < 1e-9);
        for (double v : out) CHECK(v >= 0.0);
    }
    CHECK_THROWS_AS(forward(params, spec, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("loss matches hand arithmetic") {
    MlpSpec spec = make_spec({}, {}, 2, 2);
    MlpParams params = init_mlp(spec, 1);
    params.fill(0.0); // output is (0.5, 0.5) for any input

    ProxySample p;
    p.input = {0.4, 0.6};
    p.target = {1.0, 0.0};
    p.weight = 2.0;
    std::vector<ProxySample> proxy = {p};
    CHECK(loss(params, spec, proxy) == doctest::Approx(0.5).epsilon(1e-12));

    // perfect output gives zero loss
    ProxySample q = p;
    q.weight = 1.0;
    params.layers[0].weight(0, 0) = 60.0;
    params.layers[0].weight(1, 1) = 60.0;
    q.input = {1.0, 0.0};
    std::vector<ProxySample> sharp = {q};
    CHECK(loss(params, spec, sharp) < 1e-12);
}

TEST_CASE("doubling the weights doubles the loss") {
    Rng rng(9);
    MlpSpec spec = make_spec({6}, {Activation::tanh}, 4, 3);
    MlpParams params = init_mlp(spec, 5);
    auto proxy = random_proxy(rng, 40, 4, 3);
    double base = loss(params, spec, proxy);
    for (auto& p : proxy) p.weight *= 2.0;
    CHECK(loss(params, spec, proxy) == doctest::Approx(2.0 * base).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central finite differences") {
    Rng rng(123);
    const Activation acts[] = {Activation::relu, Activation::tanh, Activation::sigmoid};
    for (int config = 0; config < 20; ++config) {
        int in = 2 + static_cast<int>(rng.index(6));
        int out = 2 + static_cast<int>(rng.index(3));
        int depth = 1 + static_cast<int>(rng.index(2));
        std::vector<int> hidden;
        std::vector<Activation> activations;
        for (int l = 0; l < depth; ++l) {
            hidden.push_back(2 + static_cast<int>(rng.index(6)));
            activations.push_back(acts[(config + l) % 3]);
        }
        MlpSpec spec = make_spec(hidden, activations, in, out);
        MlpParams params = init_mlp(spec, 1000 + config);
        auto batch = random_proxy(rng, 3 + rng.index(5), in, out);

        MlpParams analytic = gradient(params, spec, batch);
        MlpParams fd = fd_gradient(params, spec, batch, 1e-5);
        CHECK(max_relative_error(analytic, fd) < 1e-4);
    }
}

TEST_CASE("zero-weight samples contribute nothing to the gradient") {
    Rng rng(8);
    MlpSpec spec = make_spec({4}, {Activation::relu}, 4, 2);
    MlpParams params = init_mlp(spec, 2);
    auto base = random_proxy(rng, 10, 4, 2);
    MlpParams g1 = gradient(params, spec, base);

    auto padded = base;
    auto extra = random_proxy(rng, 5, 4, 2);
    for (auto& p : extra) {
        p.weight = 0.0;
        padded.push_back(p);
    }
    MlpParams g2 = gradient(params, spec, padded);
    // same sum of per-sample terms, averaged over a larger batch
    double scale = static_cast<double>(padded.size()) / static_cast<double>(base.size());
    for (std::size_t l = 0; l < g1.layers.size(); ++l)
        for (std::size_t i = 0; i < g1.layers[l].weight.data().size(); ++i)
            CHECK(g2.layers[l].weight.data()[i] * scale ==
                  doctest::Approx(g1.layers[l].weight.data()[i]).epsilon(1e-9));
}

TEST_CASE("training reduces the loss") {
    Rng rng(44);
    MlpSpec spec = make_spec({8}, {Activation::tanh}, 4, 2);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto proxy = random_proxy(rng, 60, 4, 2);
        TrainConfig cfg;
        cfg.epochs = 30;
        cfg.seed = seed;
        double before = loss(init_mlp(spec, seed), spec, proxy);
        MlpParams trained = train(spec, proxy, cfg);
        CHECK(loss(trained, spec, proxy) <= before);
    }
}

TEST_CASE("training is deterministic") {
    Rng rng(45);
    MlpSpec spec = make_spec({6}, {Activation::relu}, 4, 2);
    auto proxy = random_proxy(rng, 32, 4, 2);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 7;
    CHECK(train(spec, proxy, cfg) == train(spec, proxy, cfg));
}

TEST_CASE("an eight-wide head learns xor") {
    std::vector<ProxySample> xor_proxy;
    const double pts[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (int i = 0; i < 4; ++i) {
        ProxySample p;
        p.input = {pts[i][0], pts[i][1]};
        int cls = (static_cast<int>(pts[i][0]) ^ static_cast<int>(pts[i][1]));
        p.target = {cls == 0 ? 1.0 : 0.0, cls == 1 ? 1.0 : 0.0};
        p.weight = 1.0;
        xor_proxy.push_back(std::move(p));
    }
    MlpSpec spec = make_spec({8}, {Activation::tanh}, 2, 2);
    int solved = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TrainConfig cfg;
        cfg.learning_rate = 0.5;
        cfg.epochs = 200;
        cfg.batch_size = 4;
        cfg.seed = seed;
        if (loss(train(spec, xor_proxy, cfg), spec, xor_proxy) < 0.05) ++solved;
    }
    CHECK(solved >= 8);
}

TEST_CASE("the gradient vanishes at a trained minimum of a separable toy") {
    std::vector<ProxySample> toy;
    for (int i = 0; i < 2; ++i) {
        ProxySample p;
        p.input = {i == 0 ? 1.0 : -1.0, i == 0 ? -1.0 : 1.0};
        p.target = {i == 0 ? 1.0 : 0.0, i == 0 ? 0.0 : 1.0};
        p.weight = 1.0;
        toy.push_back(std::move(p));
    }
    MlpSpec spec = make_spec({4}, {Activation::tanh}, 2, 2);
    TrainConfig cfg;
    cfg.learning_rate = 2.0;
    cfg.epochs = 200000;
    cfg.batch_size = 2;
    cfg.seed = 5;
    MlpParams trained = train(spec, toy, cfg);
    MlpParams g = gradient(trained, spec, toy);
    double norm = 0.0;
    for (const auto& layer : g.layers) {
        for (double v : layer.weight.data()) norm += v * v;
        for (double v : layer.bias) norm += v * v;
    }
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("training rejects an empty proxy") {
    MlpSpec spec = make_spec({4}, {Activation::relu}, 2, 2);
    TrainConfig cfg;
    CHECK_THROWS_AS(train(spec, {}, cfg), ValidationError);
}

TEST_CASE("consensus routing bypasses the head") {
    Rng rng(66);
    Dataset ds = test::random_dataset(rng, 10, 3, {2});
    ModelPool pool = test::random_pool(rng, ds, {1.0, 1.0}); // identical argmaxes
    MlpSpec spec = make_spec({4}, {Activation::relu}, 6, 3);
    MlpParams garbage = init_mlp(spec, 9);
    for (auto& layer : garbage.layers)
        for (double& w : layer.weight.data()) w *= 50.0;
    std::vector<int> selected = {0, 1};
    for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(fused_predict(pool, selected, garbage, spec, i) ==
              pool.entries[0].predicted_class(i));
}

TEST_CASE("disagreements route through the head") {
    Dataset ds;
    ds.num_classes = 3;
    Attribute attr{"grp", {"g0", "g1"}, std::nullopt};
    ds.schema.attributes.push_back(attr);
    LabeledSample s;
    s.sample_id = "s0";
    s.label = 0;
    s.group_of = {0};
    ds.samples.push_back(s);

    ModelPool pool;
    for (int k = 0; k < 2; ++k) {
        ModelEntry entry;
        entry.name = "m" + std::to_string(k);
        entry.scores = Matrix(1, 3);
        entry.scores(0, k) = 0.9; // model 0 argmax 0, model 1 argmax 1
        entry.scores(0, 2) = 0.1;
        pool.entries.push_back(std::move(entry));
    }

    MlpSpec spec = make_spec({}, {}, 6, 3);
    MlpParams params = init_mlp(spec, 1);
    params.fill(0.0);
    params.layers[0].bias = {std::log(0.1), std::log(0.8), std::log(0.1)};
    std::vector<int> selected = {0, 1};
    CHECK(fused_predict(pool, selected, params, spec, 0) == 1);

    // a single selected model is trivially consensual
    std::vector<int> solo = {0};
    CHECK(fused_predict(pool, solo, params, spec, 0) == 0);
}

TEST_CASE("consensus preservation over random pools") {
    Rng rng(71);
    for (int trial = 0; trial < 10; ++trial) {
        Dataset ds = test::random_dataset(rng, 60, 3, {2});
        ModelPool pool = test::random_pool(rng, ds, {0.7, 0.6, 0.5});
        std::vector<int> selected = {0, 1, 2};
        MlpSpec spec = make_spec({5}, {Activation::sigmoid}, 9, 3);
        MlpParams params = init_mlp(spec, trial);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            int c0 = pool.entries[0].predicted_class(i);
            bool consensus = c0 == pool.entries[1].predicted_class(i) &&
                             c0 == pool.entries[2].predicted_class(i);
            if (consensus) CHECK(fused_predict(pool, selected, params, spec, i) == c0);
        }
    }
}

TEST_CASE("mlp parameters round-trip through json") {
    MlpSpec spec = make_spec({5, 3}, {Activation::relu, Activation::tanh}, 4, 2);
    MlpParams params = init_mlp(spec, 12);
    MlpParams back = mlp_from_json(mlp_to_json(params));
    CHECK(params == back);
}

} // TEST_SUITE
