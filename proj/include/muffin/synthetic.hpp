#ifndef MUFFIN_SYNTHETIC_HPP
#define MUFFIN_SYNTHETIC_HPP

#include "muffin/dataset.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace muffin {

// One population segment of a synthetic scenario. A stratum pins one group
// per attribute, a population share, and per-model accuracy targets.
// Complementary strata realize the configured pairwise complementarity rate
// between the first two models; non-complementary strata couple the pair
// with maximal overlap, so two equally accurate models never disagree there.
struct SyntheticStratum {
    std::vector<int> group_by_attr;      // one group index per schema attribute
    double fraction = 0.0;               // population share, strata sum to 1
    std::vector<double> model_accuracy;  // one target per pool model
    bool complementary = false;

    // Confidence of the argmax class in generated score rows. Drawn uniformly
    // from [lo, hi]; separate ranges for correct and wrong predictions let a
    // scenario control how informative model confidence is about correctness.
    double conf_correct_lo = 0.70, conf_correct_hi = 0.90;
    double conf_wrong_lo = 0.58, conf_wrong_hi = 0.78;
};

struct SyntheticConfig {
    int num_classes = 2;
    int num_samples = 2000;
    AttributeSchema schema;
    std::vector<std::string> model_names;
    std::vector<SyntheticStratum> strata;
    // P(exactly one of the first two models is correct) on complementary strata.
    double complementarity = 0.0;

    // Throws InfeasibleError when the scenario cannot be realized, e.g. a
    // complementarity rate outside [|a-b|, min(a+b, 2-a-b)] for the accuracy
    // targets of some complementary stratum.
    void validate() const;

    // Accuracy a generated group converges to: the fraction-weighted mean of
    // the strata containing the group. Returns false when the group is empty.
    bool target_group_accuracy(std::size_t model, std::size_t attr, int group, double& out) const;
    // Same, for the exactly-one-correct rate of the first two models.
    bool target_group_complementarity(std::size_t attr, int group, double& out) const;
};

// Deterministic per seed. Realized per-group accuracies and complementarity
// rates are assigned by per-stratum quotas, so they match the targets up to
// rounding (well inside +-2 points at 2000+ samples).
std::pair<Dataset, ModelPool> generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

// Built-in scenarios:
//   complementary-2attr  two models with complementary errors concentrated on
//                        below-average groups of two attributes
//   uniform-fair         perfectly accurate pool, no below-average group
SyntheticConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

SyntheticConfig synthetic_config_from_json_file(const std::string& path);

} // namespace muffin

#endif
