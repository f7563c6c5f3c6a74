#ifndef MUFFIN_PROXY_HPP
#define MUFFIN_PROXY_HPP

#include "muffin/dataset.hpp"

#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace muffin {

// Groups whose pool-mean accuracy on the training split falls below the
// overall pool-mean accuracy minus `margin`.
struct UnprivilegedMap {
    std::map<std::string, std::set<int>> groups; // attribute name -> flagged group indices
    double basis_accuracy = 0.0;                 // the threshold's overall accuracy
    double margin = 0.0;

    bool flagged(const std::string& attribute, int group) const;
    bool any() const;
};

struct WeightTable {
    // First pass: how many flagged groups (over all attributes) contain the
    // sample. Zero for train samples outside every flagged group.
    std::map<std::string, int> sample_weight;
    // Second pass: mean sample weight over the group's train-split members.
    std::map<std::pair<std::string, std::string>, double> group_weight;
};

// One training record for the fusion head: concatenated probability rows of
// the selected models, a one-hot target, and the sample's group weight.
struct ProxySample {
    std::string sample_id;
    std::vector<double> input;
    std::vector<double> target;
    double weight = 0.0;
};

// Flags below-average groups once per run. `model_subset` restricts the pool
// mean to the given entries (used by the per-episode basis mode); empty means
// the whole pool. Unknown groups are never flagged when exclude_unknown.
UnprivilegedMap identify_unprivileged(const Dataset& dataset, const ModelPool& pool,
                                      std::span<const std::size_t> train_split, double margin,
                                      bool exclude_unknown,
                                      std::span<const int> model_subset = {});

// Two-pass weight computation. Throws when a flagged group has no members
// inside the training split.
WeightTable compute_weights(const Dataset& dataset, std::span<const std::size_t> train_split,
                            const UnprivilegedMap& unpriv);

// One proxy sample per train-split member of at least one flagged group.
// A sample in several flagged groups takes the maximum of their group weights.
std::vector<ProxySample> build_proxy(const Dataset& dataset, const ModelPool& pool,
                                     std::span<const int> selected,
                                     std::span<const std::size_t> train_split,
                                     const UnprivilegedMap& unpriv, const WeightTable& weights);

void write_weight_tables(const std::string& group_csv_path, const std::string& sample_csv_path,
                         const WeightTable& weights);

} // namespace muffin

#endif
