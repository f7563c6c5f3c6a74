#include "muffin/dataset.hpp"

#include "muffin/csv.hpp"
#include "muffin/errors.hpp"
#include "muffin/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace muffin {

using nlohmann::json;

int Attribute::group_index(const std::string& group) const {
    for (std::size_t i = 0; i < groups.size(); ++i)
        if (groups[i] == group) return static_cast<int>(i);
    return -1;
}

int Attribute::unknown_group_index() const {
    return unknown_group ? group_index(*unknown_group) : -1;
}

int AttributeSchema::attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i].name == name) return static_cast<int>(i);
    return -1;
}

void AttributeSchema::validate() const {
    std::set<std::string> names;
    for (const auto& attr : attributes) {
        if (!names.insert(attr.name).second)
            throw ValidationError("duplicate attribute name '" + attr.name + "'");
        if (attr.groups.size() < 2)
            throw ValidationError("attribute '" + attr.name + "' needs at least 2 groups");
        std::set<std::string> groups;
        for (const auto& g : attr.groups)
            if (!groups.insert(g).second)
                throw ValidationError("duplicate group '" + g + "' in attribute '" + attr.name + "'");
        if (attr.unknown_group && attr.group_index(*attr.unknown_group) < 0)
            throw ValidationError("unknown_group '" + *attr.unknown_group +
                                  "' is not a group of attribute '" + attr.name + "'");
    }
}

std::unordered_map<std::string, std::size_t> Dataset::id_index() const {
    std::unordered_map<std::string, std::size_t> map;
    map.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) map.emplace(samples[i].sample_id, i);
    return map;
}

void Dataset::validate() const {
    schema.validate();
    if (num_classes < 1) throw ValidationError("num_classes must be positive");
    std::set<std::string> ids;
    for (const auto& s : samples) {
        if (!ids.insert(s.sample_id).second)
            throw ValidationError("duplicate sample_id '" + s.sample_id + "'");
        if (s.label < 0 || s.label >= num_classes)
            throw ValidationError("sample '" + s.sample_id + "' label " + std::to_string(s.label) +
                                  " out of range [0," + std::to_string(num_classes) + ")");
        if (s.group_of.size() != schema.size())
            throw ValidationError("sample '" + s.sample_id + "' has " +
                                  std::to_string(s.group_of.size()) + " group entries, expected " +
                                  std::to_string(schema.size()));
        for (std::size_t a = 0; a < schema.size(); ++a) {
            int g = s.group_of[a];
            if (g < 0 || g >= static_cast<int>(schema.attributes[a].groups.size()))
                throw ValidationError("sample '" + s.sample_id + "' group index out of range for attribute '" +
                                      schema.attributes[a].name + "'");
        }
    }
}

ScoreKind parse_score_kind(const std::string& s) {
    if (s == "probability") return ScoreKind::probability;
    if (s == "raw") return ScoreKind::raw;
    throw ValidationError("unknown score_kind '" + s + "' (expected 'probability' or 'raw')");
}

std::string to_string(ScoreKind k) {
    return k == ScoreKind::probability ? "probability" : "raw";
}

int ModelEntry::predicted_class(std::size_t row) const {
    auto r = scores.row(row);
    int best = 0;
    for (std::size_t c = 1; c < r.size(); ++c)
        if (r[c] > r[best]) best = static_cast<int>(c);
    return best;
}

int ModelPool::entry_index(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return static_cast<int>(i);
    return -1;
}

void ModelPool::validate(const Dataset& dataset) const {
    if (entries.size() < 2)
        throw ValidationError("model pool needs at least 2 entries, got " + std::to_string(entries.size()));
    std::set<std::string> names;
    for (const auto& e : entries) {
        if (!names.insert(e.name).second)
            throw ValidationError("duplicate model name '" + e.name + "'");
        if (e.scores.rows() != dataset.size() || e.scores.cols() != static_cast<std::size_t>(dataset.num_classes))
            throw ValidationError("model '" + e.name + "' score matrix is not aligned to the dataset");
    }
}

std::vector<std::size_t> indices_of(const Dataset& dataset, const std::vector<std::string>& ids) {
    auto index = dataset.id_index();
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) throw ValidationError("unknown sample_id '" + id + "'");
        out.push_back(it->second);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---- loading -------------------------------------------------------------

static AttributeSchema schema_from_json(const json& j) {
    AttributeSchema schema;
    for (const auto& a : j.at("attributes")) {
        Attribute attr;
        attr.name = a.at("name").get<std::string>();
        for (const auto& g : a.at("groups")) attr.groups.push_back(g.get<std::string>());
        if (a.contains("unknown_group") && !a.at("unknown_group").is_null())
            attr.unknown_group = a.at("unknown_group").get<std::string>();
        schema.attributes.push_back(std::move(attr));
    }
    return schema;
}

Dataset load_dataset(const std::string& dataset_path, const std::string& schema_path) {
    std::ifstream sin(schema_path);
    if (!sin) throw ValidationError("cannot open schema file: " + schema_path);
    json sj;
    try {
        sin >> sj;
    } catch (const json::exception& e) {
        throw ValidationError("malformed schema JSON in " + schema_path + ": " + e.what());
    }

    Dataset ds;
    try {
        ds.num_classes = sj.at("num_classes").get<int>();
        ds.schema = schema_from_json(sj);
    } catch (const json::exception& e) {
        throw ValidationError("schema " + schema_path + " missing field: " + e.what());
    }
    ds.schema.validate();
    if (ds.num_classes < 1) throw ValidationError("num_classes must be positive");

    auto rows = read_csv(dataset_path);
    if (rows.empty()) throw ValidationError("dataset file is empty: " + dataset_path);

    const auto& header = rows[0];
    std::size_t expected_cols = 2 + ds.schema.size();
    if (header.size() != expected_cols || header[0] != "sample_id" || header[1] != "label")
        throw ValidationError("dataset header must be 'sample_id,label,<attributes...>' in " + dataset_path);
    for (std::size_t a = 0; a < ds.schema.size(); ++a)
        if (header[2 + a] != ds.schema.attributes[a].name)
            throw ValidationError("dataset column '" + header[2 + a] + "' does not match schema attribute '" +
                                  ds.schema.attributes[a].name + "'");

    std::set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        std::string where = "at line " + std::to_string(r + 1);
        if (row.size() != expected_cols)
            throw ValidationError("malformed row (" + std::to_string(row.size()) + " fields, expected " +
                                  std::to_string(expected_cols) + ") " + where);
        LabeledSample s;
        s.sample_id = row[0];
        if (s.sample_id.empty()) throw ValidationError("empty sample_id " + where);
        if (!seen.insert(s.sample_id).second)
            throw ValidationError("duplicate sample_id '" + s.sample_id + "' " + where);
        long label = parse_long(row[1], where);
        if (label < 0 || label >= ds.num_classes)
            throw ValidationError("label " + std::to_string(label) + " out of range [0," +
                                  std::to_string(ds.num_classes) + ") " + where);
        s.label = static_cast<int>(label);
        for (std::size_t a = 0; a < ds.schema.size(); ++a) {
            int g = ds.schema.attributes[a].group_index(row[2 + a]);
            if (g < 0)
                throw ValidationError("unknown group '" + row[2 + a] + "' for attribute '" +
                                      ds.schema.attributes[a].name + "' " + where);
            s.group_of.push_back(g);
        }
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

static void softmax_row(std::span<double> row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : row) v /= sum;
}

ModelEntry load_model_outputs(const std::string& path, const Dataset& dataset,
                              const std::string& name, ScoreKind score_kind) {
    auto rows = read_csv(path);
    if (rows.empty()) throw ValidationError("model output file is empty: " + path);
    const std::size_t m = static_cast<std::size_t>(dataset.num_classes);

    const auto& header = rows[0];
    if (header.size() != m + 1 || header[0] != "sample_id")
        throw ValidationError("model output header must be 'sample_id,score_0,...,score_" +
                              std::to_string(m - 1) + "' in " + path);

    auto index = dataset.id_index();
    ModelEntry entry;
    entry.name = name;
    entry.score_kind = score_kind;
    entry.scores = Matrix(dataset.size(), m);

    std::vector<bool> filled(dataset.size(), false);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        std::string where = "at line " + std::to_string(r + 1) + " of " + path;
        if (row.size() != m + 1)
            throw ValidationError("malformed row (" + std::to_string(row.size()) + " fields) " + where);
        auto it = index.find(row[0]);
        if (it == index.end())
            throw ValidationError("extra outputs for unknown sample '" + row[0] + "' " + where);
        if (filled[it->second])
            throw ValidationError("duplicate outputs for sample '" + row[0] + "' " + where);
        filled[it->second] = true;
        auto target = entry.scores.row(it->second);
        double sum = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            double v = parse_double(row[1 + c], where);
            target[c] = v;
            sum += v;
        }
        if (score_kind == ScoreKind::probability) {
            for (std::size_t c = 0; c < m; ++c)
                if (target[c] < 0.0 || target[c] > 1.0)
                    throw ValidationError("probability score out of [0,1] for sample '" + row[0] + "' " + where);
            if (std::abs(sum - 1.0) > 1e-6)
                throw ValidationError("scores for sample '" + row[0] + "' sum to " + format_double(sum) +
                                      ", expected 1 within 1e-6");
        } else {
            softmax_row(target);
        }
    }
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (!filled[i])
            throw ValidationError("missing outputs for sample " + dataset.samples[i].sample_id);
    return entry;
}

ModelPool load_pool(const std::string& manifest_path, const Dataset& dataset) {
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("cannot open pool manifest: " + manifest_path);
    json mj;
    try {
        in >> mj;
    } catch (const json::exception& e) {
        throw ValidationError("malformed pool manifest JSON in " + manifest_path + ": " + e.what());
    }
    if (!mj.is_array()) throw ValidationError("pool manifest must be a JSON array");

    auto base = std::filesystem::path(manifest_path).parent_path();
    ModelPool pool;
    for (const auto& e : mj) {
        std::string name, rel, kind;
        try {
            name = e.at("name").get<std::string>();
            rel = e.at("path").get<std::string>();
            kind = e.at("score_kind").get<std::string>();
        } catch (const json::exception& ex) {
            throw ValidationError("pool manifest entry missing field: " + std::string(ex.what()));
        }
        std::filesystem::path p(rel);
        if (p.is_relative()) p = base / p;
        pool.entries.push_back(load_model_outputs(p.string(), dataset, name, parse_score_kind(kind)));
    }
    pool.validate(dataset);
    return pool;
}

// ---- writing -------------------------------------------------------------

static void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << text;
    if (!out) throw ValidationError("write failed: " + path);
}

void write_schema(const std::string& path, const Dataset& dataset) {
    json j;
    j["num_classes"] = dataset.num_classes;
    j["attributes"] = json::array();
    for (const auto& attr : dataset.schema.attributes) {
        json a;
        a["name"] = attr.name;
        a["groups"] = attr.groups;
        a["unknown_group"] = attr.unknown_group ? json(*attr.unknown_group) : json(nullptr);
        j["attributes"].push_back(a);
    }
    write_text(path, j.dump(2) + "\n");
}

void write_dataset(const std::string& path, const Dataset& dataset) {
    std::ostringstream out;
    out << "sample_id,label";
    for (const auto& attr : dataset.schema.attributes) out << ',' << attr.name;
    out << '\n';
    for (const auto& s : dataset.samples) {
        out << s.sample_id << ',' << s.label;
        for (std::size_t a = 0; a < dataset.schema.size(); ++a)
            out << ',' << dataset.schema.attributes[a].groups[s.group_of[a]];
        out << '\n';
    }
    write_text(path, out.str());
}

void write_model_outputs(const std::string& path, const Dataset& dataset, const ModelEntry& entry) {
    std::ostringstream out;
    out << "sample_id";
    for (int c = 0; c < dataset.num_classes; ++c) out << ",score_" << c;
    out << '\n';
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        out << dataset.samples[i].sample_id;
        auto row = entry.scores.row(i);
        for (double v : row) out << ',' << format_double(v);
        out << '\n';
    }
    write_text(path, out.str());
}

std::vector<std::string> write_pool(const std::string& manifest_path, const Dataset& dataset,
                                    const ModelPool& pool) {
    auto base = std::filesystem::path(manifest_path).parent_path();
    std::vector<std::string> written;
    json manifest = json::array();
    for (const auto& entry : pool.entries) {
        std::string file = entry.name + ".csv";
        write_model_outputs((base / file).string(), dataset, entry);
        written.push_back((base / file).string());
        // In-memory scores are always probabilities, so that is what we declare.
        manifest.push_back({{"name", entry.name}, {"path", file}, {"score_kind", "probability"}});
    }
    write_text(manifest_path, manifest.dump(2) + "\n");
    written.push_back(manifest_path);
    return written;
}

// ---- splitting -----------------------------------------------------------

SplitAssignment split_dataset(const Dataset& dataset, std::uint64_t seed) {
    if (dataset.size() < 5)
        throw ValidationError("cannot realize three non-empty splits with " +
                              std::to_string(dataset.size()) + " samples (need at least 5)");

    std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
    for (std::size_t i = 0; i < dataset.size(); ++i)
        by_class[dataset.samples[i].label].push_back(i);

    SplitAssignment split;
    split.seed = seed;
    Rng rng(mix_seed(seed, 0x51017));

    for (auto& members : by_class) {
        if (members.empty()) continue;
        const double n = static_cast<double>(members.size());
        const double quota[3] = {0.64 * n, 0.16 * n, 0.20 * n};
        std::size_t count[3];
        double frac[3];
        std::size_t assigned = 0;
        for (int b = 0; b < 3; ++b) {
            count[b] = static_cast<std::size_t>(std::floor(quota[b]));
            frac[b] = quota[b] - static_cast<double>(count[b]);
            assigned += count[b];
        }
        // Largest-remainder apportionment; ties resolve toward train (bucket
        // order is already train, val, test, so a stable max does it).
        for (std::size_t left = members.size() - assigned; left > 0; --left) {
            int best = 0;
            for (int b = 1; b < 3; ++b)
                if (frac[b] > frac[best]) best = b;
            ++count[best];
            frac[best] -= 1.0;
        }
        rng.shuffle(members);
        std::size_t at = 0;
        for (std::size_t k = 0; k < count[0]; ++k) split.train_ids.push_back(dataset.samples[members[at++]].sample_id);
        for (std::size_t k = 0; k < count[1]; ++k) split.val_ids.push_back(dataset.samples[members[at++]].sample_id);
        for (std::size_t k = 0; k < count[2]; ++k) split.test_ids.push_back(dataset.samples[members[at++]].sample_id);
    }

    if (split.train_ids.empty() || split.val_ids.empty() || split.test_ids.empty())
        throw ValidationError("cannot realize three non-empty splits for this class distribution");
    return split;
}

} // namespace muffin
