#include "muffin/proxy.hpp"

#include "muffin/csv.hpp"
#include "muffin/errors.hpp"
#include "muffin/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace muffin {

bool UnprivilegedMap::flagged(const std::string& attribute, int group) const {
    auto it = groups.find(attribute);
    return it != groups.end() && it->second.count(group) > 0;
}

bool UnprivilegedMap::any() const {
    for (const auto& [attr, set] : groups)
        if (!set.empty()) return true;
    return false;
}

UnprivilegedMap identify_unprivileged(const Dataset& dataset, const ModelPool& pool,
                                      std::span<const std::size_t> train_split, double margin,
                                      bool exclude_unknown, std::span<const int> model_subset) {
    if (pool.entries.empty()) throw ValidationError("model pool is empty");
    if (margin < 0.0) throw ValidationError("margin must be non-negative");
    if (train_split.empty()) throw ValidationError("training split is empty");

    std::vector<int> models(model_subset.begin(), model_subset.end());
    if (models.empty()) {
        models.resize(pool.size());
        std::iota(models.begin(), models.end(), 0);
    }
    for (int m : models)
        if (m < 0 || m >= static_cast<int>(pool.size()))
            throw ValidationError("model index " + std::to_string(m) + " out of pool range");

    auto labels = split_labels(dataset, train_split);
    std::vector<Predictions> preds;
    preds.reserve(models.size());
    for (int m : models) preds.push_back(model_predictions(pool.entries[m], train_split));

    double overall_mean = 0.0;
    for (const auto& p : preds) overall_mean += accuracy(p, labels);
    overall_mean /= static_cast<double>(preds.size());

    UnprivilegedMap unpriv;
    unpriv.basis_accuracy = overall_mean;
    unpriv.margin = margin;

    for (std::size_t attr = 0; attr < dataset.schema.size(); ++attr) {
        const auto& attribute = dataset.schema.attributes[attr];
        const int unknown = attribute.unknown_group_index();
        std::vector<std::vector<std::size_t>> members(attribute.groups.size());
        for (std::size_t pos = 0; pos < train_split.size(); ++pos)
            members[dataset.samples[train_split[pos]].group_of[attr]].push_back(pos);

        auto& flagged = unpriv.groups[attribute.name];
        for (std::size_t g = 0; g < attribute.groups.size(); ++g) {
            if (members[g].empty()) continue;
            if (exclude_unknown && static_cast<int>(g) == unknown) continue;
            double group_mean = 0.0;
            for (const auto& p : preds)
                group_mean += accuracy(p, labels, members[g]);
            group_mean /= static_cast<double>(preds.size());
            if (group_mean < overall_mean - margin) flagged.insert(static_cast<int>(g));
        }
    }
    return unpriv;
}

WeightTable compute_weights(const Dataset& dataset, std::span<const std::size_t> train_split,
                            const UnprivilegedMap& unpriv) {
    WeightTable table;

    // pass 1: per-image counts of flagged-group memberships
    std::vector<int> w_img(train_split.size(), 0);
    for (std::size_t pos = 0; pos < train_split.size(); ++pos) {
        const auto& sample = dataset.samples[train_split[pos]];
        for (std::size_t attr = 0; attr < dataset.schema.size(); ++attr)
            if (unpriv.flagged(dataset.schema.attributes[attr].name, sample.group_of[attr]))
                ++w_img[pos];
        table.sample_weight[sample.sample_id] = w_img[pos];
    }

    // pass 2: per-group mean of the member image weights
    for (std::size_t attr = 0; attr < dataset.schema.size(); ++attr) {
        const auto& attribute = dataset.schema.attributes[attr];
        auto it = unpriv.groups.find(attribute.name);
        if (it == unpriv.groups.end()) continue;
        for (int g : it->second) {
            long sum = 0;
            std::size_t count = 0;
            for (std::size_t pos = 0; pos < train_split.size(); ++pos) {
                if (dataset.samples[train_split[pos]].group_of[attr] == g) {
                    sum += w_img[pos];
                    ++count;
                }
            }
            if (count == 0)
                throw ValidationError("weight undefined: flagged group '" + attribute.groups[g] +
                                      "' of attribute '" + attribute.name +
                                      "' has no members in the training split");
            table.group_weight[{attribute.name, attribute.groups[g]}] =
                static_cast<double>(sum) / static_cast<double>(count);
        }
    }
    return table;
}

std::vector<ProxySample> build_proxy(const Dataset& dataset, const ModelPool& pool,
                                     std::span<const int> selected,
                                     std::span<const std::size_t> train_split,
                                     const UnprivilegedMap& unpriv, const WeightTable& weights) {
    if (selected.empty()) throw ValidationError("no models selected");
    for (int m : selected)
        if (m < 0 || m >= static_cast<int>(pool.size()))
            throw ValidationError("selected model index " + std::to_string(m) + " out of pool range");

    const std::size_t m_classes = static_cast<std::size_t>(dataset.num_classes);
    std::vector<ProxySample> proxy;
    for (std::size_t idx : train_split) {
        const auto& sample = dataset.samples[idx];
        double weight = -1.0;
        for (std::size_t attr = 0; attr < dataset.schema.size(); ++attr) {
            const auto& attribute = dataset.schema.attributes[attr];
            int g = sample.group_of[attr];
            if (!unpriv.flagged(attribute.name, g)) continue;
            auto it = weights.group_weight.find({attribute.name, attribute.groups[g]});
            if (it == weights.group_weight.end())
                throw ValidationError("no weight computed for flagged group '" +
                                      attribute.groups[g] + "' of attribute '" + attribute.name + "'");
            weight = std::max(weight, it->second);
        }
        if (weight < 0.0) continue; // privileged-only sample

        ProxySample p;
        p.sample_id = sample.sample_id;
        p.weight = weight;
        p.input.reserve(selected.size() * m_classes);
        for (int m : selected) {
            auto row = pool.entries[m].scores.row(idx);
            p.input.insert(p.input.end(), row.begin(), row.end());
        }
        p.target.assign(m_classes, 0.0);
        p.target[sample.label] = 1.0;
        proxy.push_back(std::move(p));
    }
    return proxy;
}

void write_weight_tables(const std::string& group_csv_path, const std::string& sample_csv_path,
                         const WeightTable& weights) {
    std::ofstream g(group_csv_path, std::ios::binary);
    if (!g) throw ValidationError("cannot open file for writing: " + group_csv_path);
    g << "attribute,group,weight\n";
    for (const auto& [key, w] : weights.group_weight)
        g << key.first << ',' << key.second << ',' << format_double(w) << '\n';

    std::ofstream s(sample_csv_path, std::ios::binary);
    if (!s) throw ValidationError("cannot open file for writing: " + sample_csv_path);
    s << "sample_id,weight\n";
    for (const auto& [id, w] : weights.sample_weight) s << id << ',' << w << '\n';
}

} // namespace muffin
