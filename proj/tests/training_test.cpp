#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gram/synth.hpp"
#include "gram/training.hpp"

using namespace gram;

namespace {

// Small in-memory dataset over the shared test DAG: two label groups, a
// binary flag per patient.
Dataset toy_dataset() {
    Dataset data;
    data.dag = testutil::small_dag();
    data.groups.group_names = {"g_left", "g_right"};
    data.groups.group_of = {0, 0, 1, 1, 1};  // c_d,c_e left; c_h,c_i,c_k right

    Rng rng(4242);
    for (int i = 0; i < 24; ++i) {
        PatientRecord rec{"p" + std::to_string(i), {}};
        int T = 2 + int(rng.below(4));
        for (int t = 0; t < T; ++t) {
            auto picks = rng.sample_without_replacement(5, 1 + int(rng.below(2)));
            std::sort(picks.begin(), picks.end());
            rec.visits.push_back({{picks.begin(), picks.end()}});
        }
        data.records.push_back(rec);
        data.flags[rec.patient_id] = int(rng.below(2));
    }
    return data;
}

Dataset from_synth(const SynthDataset& s) {
    Dataset data;
    data.dag = s.dag;
    data.records = s.records;
    data.groups = s.groups;
    for (const auto& [pid, flag] : s.flags) data.flags[pid] = flag;
    return data;
}

std::vector<double> valid_curve(const TrainReport& report) {
    std::vector<double> out;
    for (const auto& e : report.epochs) out.push_back(e.valid_loss);
    return out;
}

}  // namespace

TEST_CASE("enum names round-trip and reject junk") {
    for (auto mode : {InitMode::random, InitMode::glove_augmented, InitMode::glove_leaf_only})
        CHECK(parse_init_mode(to_string(mode)) == mode);
    for (auto kind : {ModelKind::gram, ModelKind::random_dag, ModelKind::rnn,
                      ModelKind::simple_rollup, ModelKind::rollup_rare})
        CHECK(parse_model_kind(to_string(kind)) == kind);
    for (auto task : {Task::sequential, Task::binary})
        CHECK(parse_task(to_string(task)) == task);
    CHECK_THROWS_AS(parse_init_mode("glove"), Error);
    CHECK_THROWS_AS(parse_model_kind("lstm"), Error);
    CHECK_THROWS_AS(parse_task("both"), Error);
}

TEST_CASE("default configuration values") {
    TrainConfig cfg;
    CHECK(cfg.m == 100);
    CHECK(cfg.r == 100);
    CHECK(cfg.l == 100);
    CHECK(cfg.batch_size == 100);
    CHECK(cfg.patience == 5);
    CHECK(cfg.dropout_rate == 0.2);
    CHECK(cfg.l2_coeff == 0.001);
    CHECK(cfg.train_ratio == 0.75);
    CHECK(cfg.valid_ratio == 0.10);
    CHECK(cfg.test_ratio == 0.15);
    cfg.validate();  // defaults are self-consistent
}

TEST_CASE("config parsing: overrides win, junk rejected") {
    TrainConfig base;
    TrainConfig cfg = config_from_kv({{"m", "64"}, {"dropout_rate", "0.4"},
                                      {"model_kind", "rnn"}, {"seed", "9"}},
                                     base);
    CHECK(cfg.m == 64);
    CHECK(cfg.dropout_rate == 0.4);
    CHECK(cfg.model_kind == ModelKind::rnn);
    CHECK(cfg.seed == 9);
    CHECK(cfg.r == base.r);  // untouched fields keep base values

    CHECK_THROWS_WITH_AS(config_from_kv({{"width", "3"}}, base),
                         doctest::Contains("unknown config key"), Error);
    CHECK_THROWS_AS(config_from_kv({{"m", "abc"}}, base), Error);
    CHECK_THROWS_AS(config_from_kv({{"l2_coeff", "1x"}}, base), Error);
}

TEST_CASE("config files: comments, whitespace, duplicates") {
    testutil::TempDir tmp;
    testutil::write_file(tmp.file("train.cfg"),
                         "# comment\n"
                         "  m = 32   # trailing comment\n"
                         "task=binary\n"
                         "\n");
    TrainConfig cfg = load_config_file(tmp.file("train.cfg"));
    CHECK(cfg.m == 32);
    CHECK(cfg.task == Task::binary);

    // flag-style overrides applied on top of the file win
    TrainConfig merged = config_from_kv({{"m", "48"}}, cfg);
    CHECK(merged.m == 48);
    CHECK(merged.task == Task::binary);

    testutil::write_file(tmp.file("dup.cfg"), "m=3\nm=4\n");
    CHECK_THROWS_WITH_AS(load_config_file(tmp.file("dup.cfg")),
                         doctest::Contains("duplicate key"), Error);
    testutil::write_file(tmp.file("noeq.cfg"), "just words\n");
    CHECK_THROWS_AS(load_config_file(tmp.file("noeq.cfg")), Error);
}

TEST_CASE("config serialization round-trips") {
    TrainConfig cfg;
    cfg.m = 47;
    cfg.l2_coeff = 0.0025;
    cfg.model_kind = ModelKind::rollup_rare;
    cfg.rollup_threshold = 12;
    cfg.task = Task::binary;
    cfg.seed = 321;

    testutil::TempDir tmp;
    testutil::write_file(tmp.file("cfg.txt"), config_to_kv(cfg));
    TrainConfig back = load_config_file(tmp.file("cfg.txt"));
    CHECK(config_to_kv(back) == config_to_kv(cfg));
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.m = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.l2_coeff = -0.1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("simple rollup replaces codes with direct parents") {
    OntologyDag dag = testutil::small_dag();
    // parent of c_d and c_e is c_b; of c_h and c_i is c_g; of c_k is c_j
    std::vector<PatientRecord> records = {
        {"p", {{{dag.id_of("c_d"), dag.id_of("c_e")}}, {{dag.id_of("c_k")}}}}};

    RollupResult rolled = rollup_simple(records, dag);
    CHECK(rolled.remap.vocab_names == std::vector<std::string>{"c_b", "c_g", "c_j"});
    CHECK(rolled.remap.vocab_names.size() < size_t(dag.num_leaves));

    // the sibling visit collapses to the single parent c_b
    REQUIRE(rolled.records.size() == 1);
    CHECK(rolled.records[0].visits[0].codes == std::vector<ConceptId>{0});
    CHECK(rolled.records[0].visits[1].codes == std::vector<ConceptId>{2});
}

TEST_CASE("rollup tie-break picks the smallest-id parent") {
    OntologyDag dag = build_dag({{"x", "pa"}, {"x", "pb"}, {"y", "pb"},
                                 {"pa", "r"}, {"pb", "r"}});
    CodeRemap remap = simple_rollup_map(dag);
    // x has two parents; pa sorts before pb, so it wins
    CHECK(remap.vocab_names[remap.leaf_target[dag.id_of("x")]] == "pa");
    CHECK(remap.vocab_names[remap.leaf_target[dag.id_of("y")]] == "pb");
}

TEST_CASE("rolling up twice climbs to grandparents") {
    OntologyDag dag = build_dag({{"leaf1", "mid"}, {"leaf2", "mid"}, {"other", "top"},
                                 {"mid", "top"}});
    std::vector<PatientRecord> records = {{"p", {{{dag.id_of("leaf1")}},
                                                 {{dag.id_of("leaf2")}}}}};
    RollupResult once = rollup_simple(records, dag);
    CHECK(once.remap.vocab_names[once.records[0].visits[0].codes[0]] == "mid");

    // promote the parent vocabulary to leaves and roll again: mid -> top
    OntologyDag promoted = promote_observed_ancestors(dag, {"mid"});
    std::vector<PatientRecord> mid_records = {
        {"p", {{{promoted.id_of("mid")}}, {{promoted.id_of("mid")}}}}};
    RollupResult again = rollup_simple(mid_records, promoted);
    CHECK(again.remap.vocab_names[again.records[0].visits[0].codes[0]] == "top");
}

TEST_CASE("rare rollup: threshold 0 is the identity") {
    OntologyDag dag = testutil::small_dag();
    std::vector<PatientRecord> records = {
        {"p1", {{{0, 2}}, {{1}}}},
        {"p2", {{{4}}, {{0, 3}}}},
    };
    RollupResult rolled = rollup_rare(records, dag, 0);
    REQUIRE(rolled.records.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i)
        for (size_t t = 0; t < records[i].visits.size(); ++t)
            CHECK(rolled.records[i].visits[t].codes == records[i].visits[t].codes);
    std::vector<std::string> leaf_names(dag.names.begin(), dag.names.begin() + dag.num_leaves);
    CHECK(rolled.remap.vocab_names == leaf_names);
    for (ConceptId leaf = 0; leaf < dag.num_leaves; ++leaf)
        CHECK(rolled.remap.leaf_target[leaf] == leaf);
}

TEST_CASE("rare rollup: an infinite threshold equals the simple rollup") {
    OntologyDag dag = testutil::small_dag();
    std::vector<PatientRecord> records = {
        {"p1", {{{0, 1}}, {{4}}}},
        {"p2", {{{2}}, {{3}}}},
    };
    RollupResult rare = rollup_rare(records, dag, std::numeric_limits<int64_t>::max());
    RollupResult simple = rollup_simple(records, dag);
    CHECK(rare.remap.vocab_names == simple.remap.vocab_names);
    CHECK(rare.remap.leaf_target == simple.remap.leaf_target);
    for (size_t i = 0; i < records.size(); ++i)
        for (size_t t = 0; t < records[i].visits.size(); ++t)
            CHECK(rare.records[i].visits[t].codes == simple.records[i].visits[t].codes);
}

TEST_CASE("rare rollup keeps frequent codes and lifts the rest") {
    OntologyDag dag = testutil::small_dag();
    ConceptId cd = dag.id_of("c_d"), ci = dag.id_of("c_i"), ck = dag.id_of("c_k");
    std::vector<PatientRecord> records = {
        {"p1", {{{cd}}, {{cd}}}},
        {"p2", {{{cd, ci}}, {{ci}}}},
        {"p3", {{{ck}}, {{ci}}}},
    };
    // per-visit frequencies: c_d 3, c_i 3, c_k 1, c_e 0, c_h 0
    auto freq = code_frequencies(records, dag.num_leaves);
    CHECK(freq[cd] == 3);
    CHECK(freq[ci] == 3);
    CHECK(freq[ck] == 1);

    RollupResult rolled = rollup_rare(records, dag, 2);
    // kept: c_d, c_i; lifted: c_e -> c_b, c_h -> c_g, c_k -> c_j
    CHECK(rolled.remap.vocab_names ==
          std::vector<std::string>{"c_b", "c_d", "c_g", "c_i", "c_j"});
    const auto& p3 = rolled.records[2];
    CHECK(rolled.remap.vocab_names[p3.visits[0].codes[0]] == "c_j");
    CHECK(rolled.remap.vocab_names[p3.visits[1].codes[0]] == "c_i");
}

TEST_CASE("random DAG rewiring gives every leaf exactly five ancestors") {
    Rng rng(77);
    OntologyDag source = testutil::random_dag(rng, 12, 9);
    OntologyDag shuffled = make_random_dag(source, 5);

    CHECK(shuffled.num_leaves == source.num_leaves);
    for (ConceptId leaf = 0; leaf < source.num_leaves; ++leaf)
        CHECK(shuffled.names[leaf] == source.names[leaf]);

    std::set<std::string> internals;
    for (ConceptId id = source.num_leaves; id < source.num_nodes(); ++id)
        internals.insert(source.names[id]);

    for (ConceptId leaf = 0; leaf < shuffled.num_leaves; ++leaf) {
        auto anc = ancestors(shuffled, leaf);
        CHECK(anc.size() == 6);  // self + five
        for (size_t k = 1; k < anc.size(); ++k)
            CHECK(internals.count(shuffled.names[anc[k]]) == 1);
    }
}

TEST_CASE("random DAG rewiring is seed-deterministic") {
    Rng rng(78);
    OntologyDag source = testutil::random_dag(rng, 10, 8);
    OntologyDag a = make_random_dag(source, 11);
    OntologyDag b = make_random_dag(source, 11);
    CHECK(a.names == b.names);
    CHECK(a.parents == b.parents);

    OntologyDag c = make_random_dag(source, 12);
    CHECK(a.parents != c.parents);
}

TEST_CASE("random DAG rewiring needs enough internals") {
    OntologyDag tiny = build_dag({{"a", "r"}, {"b", "r"}});
    CHECK_THROWS_AS(make_random_dag(tiny, 1), Error);
}

TEST_CASE("prepare wires dimensions per model kind") {
    Dataset data = toy_dataset();
    TrainConfig cfg;
    cfg.m = 8;
    cfg.r = 6;
    cfg.l = 5;
    cfg.batch_size = 8;

    cfg.model_kind = ModelKind::gram;
    PreparedData gram_prep = prepare(cfg, data);
    CHECK(gram_prep.dims.attention);
    CHECK(gram_prep.dims.num_nodes == data.dag.num_nodes());
    CHECK(gram_prep.dims.num_leaves == data.dag.num_leaves);
    CHECK(gram_prep.dims.num_outputs == 2);
    CHECK(gram_prep.train.size() == 18);  // 24 patients at .75/.10/.15
    CHECK(gram_prep.valid.size() == 2);
    CHECK(gram_prep.test.size() == 4);
    for (const auto& ex : gram_prep.train)
        CHECK(ex.step_groups.size() == ex.visits.size() - 1);

    cfg.model_kind = ModelKind::rnn;
    PreparedData rnn_prep = prepare(cfg, data);
    CHECK(!rnn_prep.dims.attention);
    CHECK(rnn_prep.dims.num_nodes == data.dag.num_leaves);

    cfg.model_kind = ModelKind::simple_rollup;
    PreparedData roll_prep = prepare(cfg, data);
    CHECK(roll_prep.dims.num_leaves == 3);  // {c_b, c_g, c_j}
    CHECK(roll_prep.input_names == std::vector<std::string>{"c_b", "c_g", "c_j"});

    cfg.model_kind = ModelKind::gram;
    cfg.task = Task::binary;
    PreparedData bin_prep = prepare(cfg, data);
    CHECK(bin_prep.dims.num_outputs == 1);

    data.flags.clear();
    CHECK_THROWS_WITH_AS(prepare(cfg, data), doctest::Contains("no binary label"), Error);
}

TEST_CASE("patience zero with one epoch runs exactly one epoch") {
    Dataset data = toy_dataset();
    TrainConfig cfg;
    cfg.m = cfg.r = cfg.l = 6;
    cfg.batch_size = 8;
    cfg.max_epochs = 1;
    cfg.patience = 0;
    cfg.dropout_rate = 0.0;

    TrainOutcome out = train(cfg, data);
    CHECK(out.report.epochs.size() == 1);
    CHECK(out.report.best_epoch == 0);
    CHECK(out.best.epoch == 1);
    CHECK(!out.report.diverged);
}

TEST_CASE("training twice with a fixed seed gives identical curves") {
    Dataset data = toy_dataset();
    TrainConfig cfg;
    cfg.m = cfg.r = cfg.l = 6;
    cfg.batch_size = 8;
    cfg.max_epochs = 4;
    cfg.dropout_rate = 0.0;

    TrainOutcome a = train(cfg, data);
    TrainOutcome b = train(cfg, data);
    REQUIRE(a.report.epochs.size() == b.report.epochs.size());
    for (size_t e = 0; e < a.report.epochs.size(); ++e) {
        CHECK(a.report.epochs[e].train_loss == b.report.epochs[e].train_loss);
        CHECK(a.report.epochs[e].valid_loss == b.report.epochs[e].valid_loss);
    }
    CHECK(a.report.best_epoch == b.report.best_epoch);

    // nonzero dropout draws masks from the seeded stream, so it repeats too
    cfg.dropout_rate = 0.4;
    TrainOutcome c = train(cfg, data);
    TrainOutcome d = train(cfg, data);
    REQUIRE(c.report.epochs.size() == d.report.epochs.size());
    for (size_t e = 0; e < c.report.epochs.size(); ++e)
        CHECK(c.report.epochs[e].train_loss == d.report.epochs[e].train_loss);
}

TEST_CASE("the best checkpoint is the validation-loss argmin") {
    Dataset data = toy_dataset();
    TrainConfig cfg;
    cfg.m = cfg.r = cfg.l = 6;
    cfg.batch_size = 8;
    cfg.max_epochs = 8;
    cfg.patience = 7;
    cfg.dropout_rate = 0.3;

    TrainOutcome out = train(cfg, data);
    auto curve = valid_curve(out.report);
    REQUIRE(!curve.empty());
    size_t argmin = size_t(std::min_element(curve.begin(), curve.end()) - curve.begin());
    CHECK(size_t(out.report.best_epoch) == argmin);
    CHECK(out.best.epoch == int64_t(argmin) + 1);
}

TEST_CASE("an exploding penalty aborts as divergence") {
    Dataset data = toy_dataset();
    TrainConfig cfg;
    cfg.m = cfg.r = cfg.l = 6;
    cfg.batch_size = 8;
    cfg.l2_coeff = 1e308;  // gradients overflow on the first batch
    CHECK_THROWS_WITH_AS(train(cfg, data), doctest::Contains("diverged"), Error);
}

TEST_CASE("attention beats the plain RNN on coherent synthetic data") {
    SynthConfig synth;
    synth.num_leaves = 200;
    synth.branching = {20, 4};
    synth.num_patients = 300;
    synth.visits_min = 4;
    synth.visits_max = 8;
    synth.codes_min = 1;
    synth.codes_max = 3;
    synth.rarity_exponent = 1.2;
    synth.coherence = 0.8;
    synth.seed = 99;
    Dataset data = from_synth(generate(synth));

    TrainConfig gram_cfg;
    gram_cfg.m = gram_cfg.r = gram_cfg.l = 32;
    gram_cfg.batch_size = 50;
    gram_cfg.max_epochs = 40;
    gram_cfg.patience = 8;
    gram_cfg.dropout_rate = 0.2;
    gram_cfg.l2_coeff = 1e-4;
    gram_cfg.model_kind = ModelKind::gram;
    gram_cfg.init_mode = InitMode::glove_augmented;
    gram_cfg.glove_epochs = 40;

    TrainConfig rnn_cfg = gram_cfg;
    rnn_cfg.model_kind = ModelKind::rnn;
    rnn_cfg.init_mode = InitMode::random;
    // widen the embedding until the budgets match
    int64_t gram_params = parameter_count(prepare(gram_cfg, data).dims);
    for (rnn_cfg.m = 8; rnn_cfg.m < 400; ++rnn_cfg.m)
        if (parameter_count(prepare(rnn_cfg, data).dims) >= gram_params) break;
    int64_t rnn_params = parameter_count(prepare(rnn_cfg, data).dims);
    CHECK(double(std::max(gram_params, rnn_params)) /
              double(std::min(gram_params, rnn_params)) < 1.25);

    int gram_wins = 0;
    for (uint64_t seed : {1, 2, 3}) {
        gram_cfg.seed = seed;
        rnn_cfg.seed = seed;
        TrainOutcome gram_out = train(gram_cfg, data);
        TrainOutcome rnn_out = train(rnn_cfg, data);
        double gram_best = gram_out.report.epochs[size_t(gram_out.report.best_epoch)].valid_loss;
        double rnn_best = rnn_out.report.epochs[size_t(rnn_out.report.best_epoch)].valid_loss;
        if (gram_best <= rnn_best) ++gram_wins;
    }
    CHECK(gram_wins >= 2);
}

TEST_CASE("datasets load from a directory layout") {
    testutil::TempDir tmp;
    std::string body;
    for (const auto& [c, p] : testutil::small_dag_edges()) body += c + "\t" + p + "\n";
    testutil::write_file(tmp.file("ontology.tsv"), body);
    testutil::write_file(tmp.file("records.csv"),
                         "patient_id,visit_index,code\n"
                         "p1,0,c_d\np1,1,c_e\n"
                         "p2,0,c_k\np2,1,c_i\n"
                         "solo,0,c_d\n");
    testutil::write_file(tmp.file("groups.csv"),
                         "code,group_name\nc_d,a\nc_e,a\nc_h,b\nc_i,b\nc_k,b\n");

    Dataset data = load_dataset(tmp.path().string());
    CHECK(data.records.size() == 2);
    CHECK(data.dropped_single_visit == 1);
    CHECK(data.groups.num_groups() == 2);
    CHECK(data.flags.empty());  // flags.csv absent is fine

    testutil::write_file(tmp.file("flags.csv"), "patient_id,label\np1,1\np2,0\n");
    Dataset with_flags = load_dataset(tmp.path().string());
    CHECK(with_flags.flags.size() == 2);
}

TEST_CASE("train log format") {
    TrainReport report;
    report.epochs.push_back({1.5, 2.5, 0.125});
    report.epochs.push_back({1.25, 2.25, 0.0625});
    report.best_epoch = 1;

    testutil::TempDir tmp;
    write_train_log(report, tmp.file("log.csv"));
    std::string text = testutil::read_file(tmp.file("log.csv"));
    CHECK(text.find("epoch,train_loss,valid_loss,seconds\n") == 0);
    CHECK(text.find("\n1,1.5,2.5,0.125\n") != std::string::npos);
    CHECK(text.find("\n2,1.25,2.25,0.062\n") != std::string::npos);
}
