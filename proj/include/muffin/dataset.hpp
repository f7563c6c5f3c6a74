#ifndef MUFFIN_DATASET_HPP
#define MUFFIN_DATASET_HPP

#include "muffin/matrix.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace muffin {

// A sensitive attribute: a name plus the ordered list of group names that
// partition the dataset under it. `unknown_group`, when set, marks the group
// holding samples whose real membership is unrecorded.
struct Attribute {
    std::string name;
    std::vector<std::string> groups;
    std::optional<std::string> unknown_group;

    int group_index(const std::string& group) const;
    int unknown_group_index() const; // -1 when unset
};

struct AttributeSchema {
    std::vector<Attribute> attributes;

    int attribute_index(const std::string& name) const; // -1 when absent
    std::size_t size() const { return attributes.size(); }

    // Throws ValidationError on duplicate names, < 2 groups, or an
    // unknown_group that is not a listed group.
    void validate() const;
};

struct LabeledSample {
    std::string sample_id;
    int label = 0;
    std::vector<int> group_of; // one group index per schema attribute, schema order
};

struct Dataset {
    AttributeSchema schema;
    int num_classes = 0;
    std::vector<LabeledSample> samples;

    std::size_t size() const { return samples.size(); }
    std::unordered_map<std::string, std::size_t> id_index() const;
    void validate() const;
};

enum class ScoreKind { probability, raw };

ScoreKind parse_score_kind(const std::string& s);
std::string to_string(ScoreKind k);

// One frozen pool member: an N x M matrix of class scores, row-aligned to
// Dataset.samples. Rows are always probabilities in memory; raw score files
// are pushed through softmax at load time.
struct ModelEntry {
    std::string name;
    ScoreKind score_kind = ScoreKind::probability; // as declared by the source file
    Matrix scores;

    // Argmax of a score row, ties broken toward the lowest class index.
    int predicted_class(std::size_t row) const;
};

struct ModelPool {
    std::vector<ModelEntry> entries;

    std::size_t size() const { return entries.size(); }
    int entry_index(const std::string& name) const; // -1 when absent
    void validate(const Dataset& dataset) const;
};

struct SplitAssignment {
    std::vector<std::string> train_ids, val_ids, test_ids;
    std::uint64_t seed = 0;
};

// Dataset indices of the given sample ids, ascending. Throws on unknown ids.
std::vector<std::size_t> indices_of(const Dataset& dataset, const std::vector<std::string>& ids);

// ---- file I/O ----------------------------------------------------------

Dataset load_dataset(const std::string& dataset_path, const std::string& schema_path);
ModelEntry load_model_outputs(const std::string& path, const Dataset& dataset,
                              const std::string& name, ScoreKind score_kind);
// Manifest format: [{"name":..., "path":..., "score_kind":"probability"|"raw"}].
// Relative paths resolve against the manifest's directory.
ModelPool load_pool(const std::string& manifest_path, const Dataset& dataset);

void write_schema(const std::string& path, const Dataset& dataset);
void write_dataset(const std::string& path, const Dataset& dataset);
void write_model_outputs(const std::string& path, const Dataset& dataset, const ModelEntry& entry);
// Writes one score CSV per entry next to the manifest and the manifest itself.
// Returns the paths written, manifest last.
std::vector<std::string> write_pool(const std::string& manifest_path, const Dataset& dataset,
                                    const ModelPool& pool);

// ---- splitting ---------------------------------------------------------

// Deterministic 64/16/20 split, stratified by class label. Within each class
// the three counts come from largest-remainder apportionment with ties
// resolved toward train. Throws on datasets that cannot yield three
// non-empty splits.
SplitAssignment split_dataset(const Dataset& dataset, std::uint64_t seed);

} // namespace muffin

#endif
