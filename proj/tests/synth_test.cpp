#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fixtures.hpp"
#include "gram/synth.hpp"
#include "gram/training.hpp"

using namespace gram;

namespace {

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.num_leaves = 40;
    cfg.branching = {5, 2};
    cfg.num_patients = 120;
    cfg.visits_min = 3;
    cfg.visits_max = 7;
    cfg.codes_min = 1;
    cfg.codes_max = 3;
    cfg.rarity_exponent = 1.0;
    cfg.seed = 7;
    return cfg;
}

// group of a visit: all codes share one level-1 subtree by construction
int visit_group(const Visit& visit, const GroupMap& groups) {
    int grp = groups.group_of[size_t(visit.codes.front())];
    for (ConceptId code : visit.codes)
        REQUIRE(groups.group_of[size_t(code)] == grp);
    return grp;
}

double same_group_rate(const SynthDataset& data) {
    int64_t same = 0, pairs = 0;
    for (const PatientRecord& rec : data.records)
        for (size_t v = 0; v + 1 < rec.visits.size(); ++v) {
            ++pairs;
            if (visit_group(rec.visits[v], data.groups) ==
                visit_group(rec.visits[v + 1], data.groups))
                ++same;
        }
    return double(same) / double(pairs);
}

}  // namespace

TEST_CASE("config validation catches impossible shapes") {
    SynthConfig cfg = small_config();
    cfg.num_leaves = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);

    cfg = small_config();
    cfg.branching = {4};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("two internal levels"), Error);

    cfg = small_config();
    cfg.num_leaves = 10;
    cfg.branching = {5, 3};  // 15 bottom subtrees for 10 leaves
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("bottom-level"), Error);

    cfg = small_config();
    cfg.visits_min = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    cfg.visits_min = 5;
    cfg.visits_max = 4;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    cfg.codes_min = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    cfg.coherence = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    cfg.label_noise = -0.1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    cfg.rarity_exponent = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);

    // 8 leaves over 4 level-1 subtrees leaves 2 codes per subtree at most
    cfg = small_config();
    cfg.num_leaves = 8;
    cfg.branching = {4, 2};
    cfg.codes_max = 3;
    CHECK_THROWS_WITH_AS(generate(cfg), doctest::Contains("smallest subtree"), Error);
}

TEST_CASE("generated tree and labels have the advertised shape") {
    SynthConfig cfg = small_config();
    cfg.num_leaves = 12;
    cfg.branching = {3, 2};
    cfg.num_patients = 25;
    cfg.codes_max = 2;
    SynthDataset data = generate(cfg);

    CHECK(data.dag.num_leaves == 12);
    CHECK(data.dag.num_nodes() == 12 + 3 + 6 + 1);
    CHECK(data.edges.size() == 3 + 6 + 12);
    CHECK(data.groups.group_names == std::vector<std::string>{"g1_00", "g1_01", "g1_02"});
    // contiguous leaf ranges per level-1 subtree
    for (int leaf = 0; leaf < 12; ++leaf)
        CHECK(data.groups.group_of[size_t(leaf)] == leaf / 4);

    CHECK(data.records.size() == 25);
    CHECK(data.flags.size() == 25);
    std::set<std::string> ids;
    for (size_t i = 0; i < data.records.size(); ++i) {
        const PatientRecord& rec = data.records[i];
        ids.insert(rec.patient_id);
        CHECK(rec.patient_id == data.flags[i].first);
        CHECK(rec.visits.size() >= size_t(cfg.visits_min));
        CHECK(rec.visits.size() <= size_t(cfg.visits_max));
        for (const Visit& visit : rec.visits) {
            CHECK(visit.codes.size() >= size_t(cfg.codes_min));
            CHECK(visit.codes.size() <= size_t(cfg.codes_max));
            CHECK(std::is_sorted(visit.codes.begin(), visit.codes.end()));
            for (ConceptId code : visit.codes) {
                CHECK(code >= 0);
                CHECK(code < 12);
            }
        }
    }
    CHECK(ids.size() == 25);  // patient ids are unique
}

TEST_CASE("all codes within a visit come from one subtree") {
    SynthConfig cfg = small_config();
    cfg.coherence = 0.5;
    SynthDataset data = generate(cfg);
    for (const PatientRecord& rec : data.records)
        for (const Visit& visit : rec.visits) visit_group(visit, data.groups);
}

TEST_CASE("coherence controls how often the subtree persists") {
    SynthConfig cfg = small_config();
    cfg.num_patients = 300;

    cfg.coherence = 1.0;
    SynthDataset sticky = generate(cfg);
    CHECK(same_group_rate(sticky) == 1.0);
    for (const PatientRecord& rec : sticky.records) {
        int grp = visit_group(rec.visits.front(), sticky.groups);
        for (const Visit& visit : rec.visits)
            CHECK(visit_group(visit, sticky.groups) == grp);
    }

    cfg.coherence = 0.9;
    double high = same_group_rate(generate(cfg));
    cfg.coherence = 0.0;
    double low = same_group_rate(generate(cfg));
    CHECK(high > 0.8);
    CHECK(low < 0.5);
    CHECK(high > low + 0.3);
}

TEST_CASE("the rarity exponent skews code popularity") {
    SynthConfig cfg = small_config();
    cfg.num_patients = 300;

    auto leaf_counts = [&](double exponent) {
        cfg.rarity_exponent = exponent;
        SynthDataset data = generate(cfg);
        std::vector<int64_t> counts(40, 0);
        for (const PatientRecord& rec : data.records)
            for (const Visit& visit : rec.visits)
                for (ConceptId code : visit.codes) counts[size_t(code)]++;
        return counts;
    };

    // flat exponent: every leaf lands within a loose band of the mean
    auto flat = leaf_counts(0.0);
    int64_t lo = *std::min_element(flat.begin(), flat.end());
    int64_t hi = *std::max_element(flat.begin(), flat.end());
    CHECK(lo > 0);
    CHECK(double(hi) / double(lo) < 3.0);

    // steep exponent: the head dwarfs the tail
    auto steep = leaf_counts(1.5);
    int64_t head = 0, tail = 0;
    for (int i = 0; i < 4; ++i) head += steep[size_t(i)];
    for (int i = 36; i < 40; ++i) tail += steep[size_t(i)];
    CHECK(head > 3 * std::max<int64_t>(tail, 1));
}

TEST_CASE("binary flags track the case subtree exactly when noise is off") {
    SynthConfig cfg = small_config();
    cfg.label_noise = 0.0;
    SynthDataset data = generate(cfg);
    const int case_group = cfg.branching[0] / 3;

    int positives = 0;
    for (size_t i = 0; i < data.records.size(); ++i) {
        bool case_seen = false;
        for (const Visit& visit : data.records[i].visits)
            case_seen = case_seen || visit_group(visit, data.groups) == case_group;
        CHECK(data.flags[i].second == int(case_seen));
        positives += data.flags[i].second;
    }
    CHECK(positives > 0);
    CHECK(positives < int(data.records.size()));

    // full noise inverts every label
    cfg.label_noise = 1.0;
    SynthDataset flipped = generate(cfg);
    for (size_t i = 0; i < flipped.records.size(); ++i) {
        bool case_seen = false;
        for (const Visit& visit : flipped.records[i].visits)
            case_seen = case_seen || visit_group(visit, flipped.groups) == case_group;
        CHECK(flipped.flags[i].second == int(!case_seen));
    }
}

TEST_CASE("describe reports plain corpus statistics") {
    std::vector<PatientRecord> records = {
        {"p1", {{{0}}, {{1, 2}}}},
        {"p2", {{{0}}, {{0}}, {{3}}}},
    };
    auto stats = describe(records);
    CHECK(stats["num_patients"] == 2);
    CHECK(stats["num_visits"] == 5);
    CHECK(stats["avg_visits_per_patient"].get<double>() == 2.5);
    CHECK(stats["num_unique_codes"] == 4);
    CHECK(stats["total_code_occurrences"] == 6);
    CHECK(stats["avg_codes_per_visit"].get<double>() == 1.2);
    CHECK(stats["max_codes_per_visit"] == 2);

    auto empty = describe({});
    CHECK(empty["num_patients"] == 0);
    CHECK(empty["avg_visits_per_patient"].get<double>() == 0.0);
    CHECK(empty["avg_codes_per_visit"].get<double>() == 0.0);
}

TEST_CASE("generation is byte-stable for a fixed seed") {
    SynthConfig cfg = small_config();
    testutil::TempDir tmp;
    write_dataset(generate(cfg), tmp.file("a"));
    write_dataset(generate(cfg), tmp.file("b"));
    cfg.seed = 8;
    write_dataset(generate(cfg), tmp.file("c"));

    for (const char* name : {"ontology.tsv", "records.csv", "groups.csv", "flags.csv",
                             "labels.tsv", "stats.json"}) {
        CHECK(testutil::read_file(tmp.file("a") + "/" + name) ==
              testutil::read_file(tmp.file("b") + "/" + name));
    }
    CHECK(testutil::read_file(tmp.file("a") + "/records.csv") !=
          testutil::read_file(tmp.file("c") + "/records.csv"));
}

TEST_CASE("written datasets load back faithfully") {
    SynthConfig cfg = small_config();
    cfg.num_patients = 40;
    SynthDataset data = generate(cfg);

    testutil::TempDir tmp;
    write_dataset(data, tmp.file("ds"));
    Dataset loaded = load_dataset(tmp.file("ds"));

    CHECK(loaded.dag.num_leaves == data.dag.num_leaves);
    CHECK(loaded.dag.num_nodes() == data.dag.num_nodes());
    CHECK(loaded.groups.num_groups() == cfg.branching[0]);
    CHECK(loaded.flags.size() == data.flags.size());
    CHECK(loaded.dropped_single_visit == 0);  // visits_min is 3

    // leaf names sort identically, so code ids survive the round trip
    REQUIRE(loaded.records.size() == data.records.size());
    for (size_t i = 0; i < data.records.size(); ++i) {
        CHECK(loaded.records[i].patient_id == data.records[i].patient_id);
        REQUIRE(loaded.records[i].visits.size() == data.records[i].visits.size());
        for (size_t v = 0; v < data.records[i].visits.size(); ++v)
            CHECK(loaded.records[i].visits[v].codes == data.records[i].visits[v].codes);
    }
    for (const auto& [pid, flag] : data.flags) CHECK(loaded.flags.at(pid) == flag);

    auto stats = nlohmann::json::parse(testutil::read_file(tmp.file("ds") + "/stats.json"));
    CHECK(stats["num_patients"] == 40);
}
