#ifndef MUFFIN_METRICS_HPP
#define MUFFIN_METRICS_HPP

#include "muffin/dataset.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace muffin {

// Predicted class per sample of a split, aligned to the split's index order.
using Predictions = std::vector<int>;

struct FairnessReport {
    double overall_accuracy = 0.0;
    std::map<std::string, double> per_attribute_unfairness;
    double multi_unfairness = 0.0;
    double reward = 0.0;
    // (attribute, group) -> accuracy, groups empty within the split omitted.
    std::map<std::string, std::map<std::string, double>> per_group_accuracy;
};

struct DisagreementBreakdown {
    double both_wrong = 0.0; // 00
    double only_a = 0.0;     // a correct, b wrong
    double only_b = 0.0;
    double both_right = 0.0; // 11
};

// Fraction of `subset` positions where predicted == label. With an empty
// subset span, all positions count. Throws on an empty evaluation set.
double accuracy(std::span<const int> predicted, std::span<const int> labels,
                std::span<const std::size_t> subset = {});

// L1 sum over the attribute's non-empty groups of |group accuracy - overall
// split accuracy|. `split` holds dataset indices; `predicted` aligns to it.
double unfairness(const Predictions& predicted, const Dataset& dataset,
                  std::span<const std::size_t> split, const std::string& attribute);

double multi_unfairness(const std::map<std::string, double>& per_attribute);

// Sum over attributes of overall_accuracy / max(unfairness, epsilon).
double reward(double overall_accuracy, const std::map<std::string, double>& per_attribute_unfairness,
              double epsilon = 1e-3);

DisagreementBreakdown disagreement_breakdown(const Predictions& model_a, const Predictions& model_b,
                                             std::span<const int> labels,
                                             std::span<const std::size_t> subset);

FairnessReport full_report(const Predictions& predicted, const Dataset& dataset,
                           std::span<const std::size_t> split, double epsilon = 1e-3);

// Labels of the split's samples, aligned to the split order.
std::vector<int> split_labels(const Dataset& dataset, std::span<const std::size_t> split);

// Argmax predictions of one pool entry over a split, aligned to the split order.
Predictions model_predictions(const ModelEntry& entry, std::span<const std::size_t> split);

} // namespace muffin

#endif
