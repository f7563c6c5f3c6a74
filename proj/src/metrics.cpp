#include "muffin/metrics.hpp"

#include "muffin/errors.hpp"

#include <algorithm>
#include <cmath>

namespace muffin {

double accuracy(std::span<const int> predicted, std::span<const int> labels,
                std::span<const std::size_t> subset) {
    if (predicted.size() != labels.size())
        throw ValidationError("predictions and labels differ in length");
    std::size_t total = subset.empty() ? predicted.size() : subset.size();
    if (total == 0) throw ValidationError("accuracy of empty group undefined");
    std::size_t hits = 0;
    if (subset.empty()) {
        for (std::size_t i = 0; i < predicted.size(); ++i)
            if (predicted[i] == labels[i]) ++hits;
    } else {
        for (std::size_t i : subset) {
            if (i >= predicted.size()) throw ValidationError("subset index out of range");
            if (predicted[i] == labels[i]) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

double unfairness(const Predictions& predicted, const Dataset& dataset,
                  std::span<const std::size_t> split, const std::string& attribute) {
    int attr = dataset.schema.attribute_index(attribute);
    if (attr < 0) throw ValidationError("attribute '" + attribute + "' not in schema");
    if (predicted.size() != split.size())
        throw ValidationError("predictions are not aligned to the split");

    auto labels = split_labels(dataset, split);
    double overall = accuracy(predicted, labels);

    const auto& groups = dataset.schema.attributes[attr].groups;
    std::vector<std::vector<std::size_t>> members(groups.size());
    for (std::size_t pos = 0; pos < split.size(); ++pos)
        members[dataset.samples[split[pos]].group_of[attr]].push_back(pos);

    double u = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (members[g].empty()) continue; // group absent from this split contributes nothing
        u += std::abs(accuracy(predicted, labels, members[g]) - overall);
    }
    return u;
}

double multi_unfairness(const std::map<std::string, double>& per_attribute) {
    if (per_attribute.empty())
        throw ValidationError("multi_unfairness of an empty attribute map undefined");
    double sum = 0.0;
    for (const auto& [name, u] : per_attribute) sum += u;
    return sum;
}

double reward(double overall_accuracy, const std::map<std::string, double>& per_attribute_unfairness,
              double epsilon) {
    if (epsilon <= 0.0) throw ValidationError("epsilon must be positive");
    if (overall_accuracy < 0.0) throw ValidationError("negative accuracy");
    double r = 0.0;
    for (const auto& [name, u] : per_attribute_unfairness) {
        if (u < 0.0) throw ValidationError("negative unfairness for attribute '" + name + "'");
        r += overall_accuracy / std::max(u, epsilon);
    }
    return r;
}

DisagreementBreakdown disagreement_breakdown(const Predictions& model_a, const Predictions& model_b,
                                             std::span<const int> labels,
                                             std::span<const std::size_t> subset) {
    if (model_a.size() != labels.size() || model_b.size() != labels.size())
        throw ValidationError("disagreement inputs are not aligned");
    if (subset.empty()) throw ValidationError("disagreement breakdown of empty subset undefined");
    std::size_t counts[4] = {0, 0, 0, 0};
    for (std::size_t i : subset) {
        if (i >= labels.size()) throw ValidationError("subset index out of range");
        bool a_ok = model_a[i] == labels[i];
        bool b_ok = model_b[i] == labels[i];
        ++counts[(a_ok ? 2 : 0) + (b_ok ? 1 : 0)];
    }
    const double n = static_cast<double>(subset.size());
    return {static_cast<double>(counts[0]) / n, static_cast<double>(counts[2]) / n,
            static_cast<double>(counts[1]) / n, static_cast<double>(counts[3]) / n};
}

FairnessReport full_report(const Predictions& predicted, const Dataset& dataset,
                           std::span<const std::size_t> split, double epsilon) {
    if (predicted.size() != split.size())
        throw ValidationError("predictions are not aligned to the split");
    FairnessReport report;
    auto labels = split_labels(dataset, split);
    report.overall_accuracy = accuracy(predicted, labels);

    for (std::size_t attr = 0; attr < dataset.schema.size(); ++attr) {
        const auto& attribute = dataset.schema.attributes[attr];
        report.per_attribute_unfairness[attribute.name] =
            unfairness(predicted, dataset, split, attribute.name);

        std::vector<std::vector<std::size_t>> members(attribute.groups.size());
        for (std::size_t pos = 0; pos < split.size(); ++pos)
            members[dataset.samples[split[pos]].group_of[attr]].push_back(pos);
        for (std::size_t g = 0; g < attribute.groups.size(); ++g) {
            if (members[g].empty()) continue;
            report.per_group_accuracy[attribute.name][attribute.groups[g]] =
                accuracy(predicted, labels, members[g]);
        }
    }
    report.multi_unfairness = multi_unfairness(report.per_attribute_unfairness);
    report.reward = reward(report.overall_accuracy, report.per_attribute_unfairness, epsilon);
    return report;
}

std::vector<int> split_labels(const Dataset& dataset, std::span<const std::size_t> split) {
    std::vector<int> labels;
    labels.reserve(split.size());
    for (std::size_t i : split) {
        if (i >= dataset.size()) throw ValidationError("split index out of range");
        labels.push_back(dataset.samples[i].label);
    }
    return labels;
}

Predictions model_predictions(const ModelEntry& entry, std::span<const std::size_t> split) {
    Predictions preds;
    preds.reserve(split.size());
    for (std::size_t i : split) preds.push_back(entry.predicted_class(i));
    return preds;
}

} // namespace muffin
