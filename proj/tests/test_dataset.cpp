#include "muffin/dataset.hpp"
#include "muffin/errors.hpp"
#include "muffin/random.hpp"

#include <doctest.h>

#include "test_util.hpp"

#include <algorithm>
#include <set>

using namespace muffin;
using muffin::test::TempDir;

namespace {

const char* kSchema = R"({
  "num_classes": 2,
  "attributes": [
    {"name": "age", "groups": ["young", "old"], "unknown_group": null},
    {"name": "site", "groups": ["head", "hand"], "unknown_group": null}
  ]
})";

const char* kRows =
    "sample_id,label,age,site\n"
    "s1,1,young,head\n"
    "s2,0,old,hand\n"
    "s3,1,young,hand\n";

Dataset write_and_load(const TempDir& dir, const std::string& rows) {
    test::write_file(dir.file("schema.json"), kSchema);
    test::write_file(dir.file("data.csv"), rows);
    return load_dataset(dir.file("data.csv"), dir.file("schema.json"));
}

} // namespace

TEST_SUITE("dataset") {

TEST_CASE("loads a small dataset in file order") {
    TempDir dir;
    Dataset ds = write_and_load(dir, kRows);
    CHECK(ds.num_classes == 2);
    REQUIRE(ds.samples.size() == 3);
    CHECK(ds.samples[0].sample_id == "s1");
    CHECK(ds.samples[1].sample_id == "s2");
    CHECK(ds.samples[2].sample_id == "s3");
    CHECK(ds.samples[1].label == 0);
    CHECK(ds.samples[1].group_of == std::vector<int>{1, 1});
    CHECK(ds.samples[2].group_of == std::vector<int>{0, 1});
}

TEST_CASE("rejects unknown group names with the offending line") {
    TempDir dir;
    std::string rows =
        "sample_id,label,age,site\n"
        "s1,1,elder,head\n";
    try {
        write_and_load(dir, rows);
        FAIL("expected load error");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("unknown group 'elder' for attribute 'age'") != std::string::npos);
        CHECK(msg.find("at line 2") != std::string::npos);
    }
}

TEST_CASE("rejects out-of-range labels naming line and label") {
    TempDir dir;
    std::string rows =
        "sample_id,label,age,site\n"
        "s1,1,young,head\n"
        "s2,5,old,hand\n";
    try {
        write_and_load(dir, rows);
        FAIL("expected load error");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("label 5") != std::string::npos);
        CHECK(msg.find("line 3") != std::string::npos);
    }
}

TEST_CASE("rejects duplicate sample ids and malformed rows") {
    TempDir dir;
    CHECK_THROWS_AS(write_and_load(dir, "sample_id,label,age,site\ns1,1,young,head\ns1,0,old,hand\n"),
                    ValidationError);
    CHECK_THROWS_AS(write_and_load(dir, "sample_id,label,age,site\ns1,1,young\n"), ValidationError);
    CHECK_THROWS_AS(write_and_load(dir, "sample_id,label,age,site\ns1,x,young,head\n"),
                    ValidationError);
}

TEST_CASE("model outputs align rows by sample_id") {
    TempDir dir;
    Dataset ds = write_and_load(dir, kRows);
    // file order deliberately scrambled
    test::write_file(dir.file("m.csv"),
                     "sample_id,score_0,score_1\n"
                     "s3,0.2,0.8\n"
                     "s1,0.7,0.3\n"
                     "s2,0.6,0.4\n");
    ModelEntry entry = load_model_outputs(dir.file("m.csv"), ds, "m", ScoreKind::probability);
    CHECK(entry.scores(0, 0) == doctest::Approx(0.7));
    CHECK(entry.scores(1, 0) == doctest::Approx(0.6));
    CHECK(entry.scores(2, 1) == doctest::Approx(0.8));
}

TEST_CASE("model output errors: row sum, missing and extra samples") {
    TempDir dir;
    Dataset ds = write_and_load(dir, kRows);

    test::write_file(dir.file("bad_sum.csv"),
                     "sample_id,score_0,score_1\ns1,0.7,0.3\ns2,0.8,0.4\ns3,0.5,0.5\n");
    try {
        load_model_outputs(dir.file("bad_sum.csv"), ds, "m", ScoreKind::probability);
        FAIL("expected row-sum error");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("s2") != std::string::npos);
        CHECK(msg.find("1.2") != std::string::npos);
    }

    test::write_file(dir.file("missing.csv"), "sample_id,score_0,score_1\ns1,0.7,0.3\ns3,0.5,0.5\n");
    try {
        load_model_outputs(dir.file("missing.csv"), ds, "m", ScoreKind::probability);
        FAIL("expected missing-sample error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("missing outputs for sample s2") != std::string::npos);
    }

    test::write_file(dir.file("extra.csv"),
                     "sample_id,score_0,score_1\ns1,0.7,0.3\ns2,0.6,0.4\ns3,0.5,0.5\ns9,1,0\n");
    CHECK_THROWS_AS(load_model_outputs(dir.file("extra.csv"), ds, "m", ScoreKind::probability),
                    ValidationError);
}

TEST_CASE("raw scores are converted to probabilities by softmax") {
    TempDir dir;
    Dataset ds = write_and_load(dir, kRows);
    test::write_file(dir.file("raw.csv"),
                     "sample_id,score_0,score_1\ns1,0,0\ns2,2,2\ns3,1,0\n");
    ModelEntry entry = load_model_outputs(dir.file("raw.csv"), ds, "m", ScoreKind::raw);
    CHECK(entry.scores(0, 0) == doctest::Approx(0.5));
    CHECK(entry.scores(1, 0) == doctest::Approx(0.5));
    CHECK(entry.scores(2, 0) == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)));
    double sum = entry.scores(2, 0) + entry.scores(2, 1);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dataset and pool round-trip through files unchanged") {
    Rng rng(99);
    Dataset ds = test::random_dataset(rng, 60, 3, {2, 3});
    ModelPool pool = test::random_pool(rng, ds, {0.8, 0.6});

    TempDir dir;
    write_dataset(dir.file("d.csv"), ds);
    write_schema(dir.file("s.json"), ds);
    auto written = write_pool(dir.file("pool.json"), ds, pool);
    CHECK(written.size() == pool.size() + 1);

    Dataset back = load_dataset(dir.file("d.csv"), dir.file("s.json"));
    CHECK(back.num_classes == ds.num_classes);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].sample_id == ds.samples[i].sample_id);
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].group_of == ds.samples[i].group_of);
    }
    ModelPool pool_back = load_pool(dir.file("pool.json"), back);
    REQUIRE(pool_back.size() == pool.size());
    for (std::size_t k = 0; k < pool.size(); ++k) {
        CHECK(pool_back.entries[k].name == pool.entries[k].name);
        CHECK(pool_back.entries[k].scores.data() == pool.entries[k].scores.data());
    }
}

TEST_CASE("split is deterministic, seed-sensitive, and 64/16/20") {
    Rng rng(5);
    Dataset ds = test::random_dataset(rng, 100, 2, {2});
    SplitAssignment a = split_dataset(ds, 7);
    SplitAssignment b = split_dataset(ds, 7);
    SplitAssignment c = split_dataset(ds, 8);

    CHECK(a.train_ids.size() == 64);
    CHECK(a.val_ids.size() == 16);
    CHECK(a.test_ids.size() == 20);
    CHECK(a.train_ids == b.train_ids);
    CHECK(a.val_ids == b.val_ids);
    CHECK(a.test_ids == b.test_ids);
    CHECK(c.train_ids.size() == 64);
    CHECK(a.train_ids != c.train_ids);
}

TEST_CASE("split partitions the dataset") {
    Rng rng(11);
    Dataset ds = test::random_dataset(rng, 83, 4, {3});
    SplitAssignment split = split_dataset(ds, 3);
    std::set<std::string> seen;
    for (const auto* ids : {&split.train_ids, &split.val_ids, &split.test_ids})
        for (const auto& id : *ids) CHECK(seen.insert(id).second);
    CHECK(seen.size() == ds.size());
}

TEST_CASE("split rounds toward train: 25 one-class samples give 16/4/5") {
    Rng rng(1);
    Dataset ds = test::random_dataset(rng, 25, 1, {2});
    SplitAssignment split = split_dataset(ds, 42);
    CHECK(split.train_ids.size() == 16);
    CHECK(split.val_ids.size() == 4);
    CHECK(split.test_ids.size() == 5);
}

TEST_CASE("split is stratified by class") {
    Rng rng(2);
    Dataset ds = test::random_dataset(rng, 200, 2, {2});
    // force exact class counts 150/50
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        ds.samples[i].label = i < 150 ? 0 : 1;
    SplitAssignment split = split_dataset(ds, 9);
    auto idx = ds.id_index();
    std::size_t train_minority = 0;
    for (const auto& id : split.train_ids)
        if (ds.samples[idx.at(id)].label == 1) ++train_minority;
    CHECK(train_minority == 32); // 64% of 50
}

TEST_CASE("split refuses datasets that cannot fill three splits") {
    Rng rng(3);
    Dataset tiny = test::random_dataset(rng, 4, 2, {2});
    CHECK_THROWS_AS(split_dataset(tiny, 1), ValidationError);
}

} // TEST_SUITE
