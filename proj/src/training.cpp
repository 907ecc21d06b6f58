#include "gram/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "gram/cooccurrence.hpp"
#include "gram/glove.hpp"

namespace gram {

InitMode parse_init_mode(const std::string& s) {
    if (s == "random") return InitMode::random;
    if (s == "glove_augmented") return InitMode::glove_augmented;
    if (s == "glove_leaf_only") return InitMode::glove_leaf_only;
    fail("unknown init mode '" + s + "'");
}

ModelKind parse_model_kind(const std::string& s) {
    if (s == "gram") return ModelKind::gram;
    if (s == "random_dag") return ModelKind::random_dag;
    if (s == "rnn") return ModelKind::rnn;
    if (s == "simple_rollup") return ModelKind::simple_rollup;
    if (s == "rollup_rare") return ModelKind::rollup_rare;
    fail("unknown model kind '" + s + "'");
}

Task parse_task(const std::string& s) {
    if (s == "sequential") return Task::sequential;
    if (s == "binary") return Task::binary;
    fail("unknown task '" + s + "'");
}

std::string to_string(InitMode m) {
    switch (m) {
        case InitMode::random: return "random";
        case InitMode::glove_augmented: return "glove_augmented";
        case InitMode::glove_leaf_only: return "glove_leaf_only";
    }
    fail("bad init mode");
}

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::gram: return "gram";
        case ModelKind::random_dag: return "random_dag";
        case ModelKind::rnn: return "rnn";
        case ModelKind::simple_rollup: return "simple_rollup";
        case ModelKind::rollup_rare: return "rollup_rare";
    }
    fail("bad model kind");
}

std::string to_string(Task t) {
    return t == Task::sequential ? "sequential" : "binary";
}

void TrainConfig::validate() const {
    if (m < 1 || r < 1 || l < 1) fail("model dimensions must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (patience < 0) fail("patience must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
    if (l2_coeff < 0.0) fail("l2_coeff must be >= 0");
    if (rollup_threshold < 0) fail("rollup_threshold must be >= 0");
    if (glove_epochs < 0) fail("glove_epochs must be >= 0");
    if (train_ratio <= 0 || valid_ratio < 0 || test_ratio < 0)
        fail("split ratios must be positive");
}

namespace {

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int n = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        fail("config key '" + key + "': not an integer: '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        fail("config key '" + key + "': not a number: '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        fail("config key '" + key + "': not an unsigned integer: '" + v + "'");
    }
}

}  // namespace

TrainConfig config_from_kv(const std::map<std::string, std::string>& kv,
                           const TrainConfig& base) {
    TrainConfig cfg = base;
    for (const auto& [key, value] : kv) {
        if (key == "m") cfg.m = parse_int(key, value);
        else if (key == "r") cfg.r = parse_int(key, value);
        else if (key == "l") cfg.l = parse_int(key, value);
        else if (key == "l2_coeff") cfg.l2_coeff = parse_double(key, value);
        else if (key == "dropout_rate") cfg.dropout_rate = parse_double(key, value);
        else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
        else if (key == "max_epochs") cfg.max_epochs = parse_int(key, value);
        else if (key == "patience") cfg.patience = parse_int(key, value);
        else if (key == "seed") cfg.seed = parse_u64(key, value);
        else if (key == "init_mode") cfg.init_mode = parse_init_mode(value);
        else if (key == "model_kind") cfg.model_kind = parse_model_kind(value);
        else if (key == "rollup_threshold") cfg.rollup_threshold = parse_u64(key, value);
        else if (key == "task") cfg.task = parse_task(value);
        else if (key == "glove_epochs") cfg.glove_epochs = parse_int(key, value);
        else if (key == "train_ratio") cfg.train_ratio = parse_double(key, value);
        else if (key == "valid_ratio") cfg.valid_ratio = parse_double(key, value);
        else if (key == "test_ratio") cfg.test_ratio = parse_double(key, value);
        else fail("unknown config key '" + key + "'");
    }
    return cfg;
}

TrainConfig load_config_file(const std::string& path, const TrainConfig& base) {
    std::ifstream in(path);
    if (!in) fail("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t");
        line = line.substr(first, last - first + 1);
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            fail(path + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) fail(path + ":" + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
            fail(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return config_from_kv(kv, base);
}

std::string config_to_kv(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "m=" << cfg.m << "\n"
        << "r=" << cfg.r << "\n"
        << "l=" << cfg.l << "\n"
        << "l2_coeff=" << cfg.l2_coeff << "\n"
        << "dropout_rate=" << cfg.dropout_rate << "\n"
        << "batch_size=" << cfg.batch_size << "\n"
        << "max_epochs=" << cfg.max_epochs << "\n"
        << "patience=" << cfg.patience << "\n"
        << "seed=" << cfg.seed << "\n"
        << "init_mode=" << to_string(cfg.init_mode) << "\n"
        << "model_kind=" << to_string(cfg.model_kind) << "\n"
        << "rollup_threshold=" << cfg.rollup_threshold << "\n"
        << "task=" << to_string(cfg.task) << "\n"
        << "glove_epochs=" << cfg.glove_epochs << "\n"
        << "train_ratio=" << cfg.train_ratio << "\n"
        << "valid_ratio=" << cfg.valid_ratio << "\n"
        << "test_ratio=" << cfg.test_ratio << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// dataset plumbing

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset data;
    data.dag = parse_ontology((fs::path(dir) / "ontology.tsv").string());
    LoadedRecords loaded = load_records((fs::path(dir) / "records.csv").string(), data.dag);
    data.records = std::move(loaded.records);
    data.dropped_single_visit = loaded.dropped_single_visit;
    data.groups = load_group_map((fs::path(dir) / "groups.csv").string(), data.dag);
    const fs::path flags = fs::path(dir) / "flags.csv";
    if (fs::exists(flags)) data.flags = load_flags(flags.string());
    return data;
}

namespace {

ConceptId direct_parent(const OntologyDag& dag, ConceptId leaf) {
    const auto& ps = dag.parents[leaf];
    if (ps.empty()) fail("leaf '" + dag.names[leaf] + "' has no parent");
    return ps.front();  // ascending, so front is the smallest id
}

CodeRemap remap_from_targets(const OntologyDag& dag, const std::vector<ConceptId>& target) {
    // new vocabulary = image of the per-leaf target map, sorted by name
    std::map<std::string, ConceptId> by_name;
    for (ConceptId t : target) by_name.emplace(dag.names[t], t);

    CodeRemap remap;
    std::unordered_map<ConceptId, ConceptId> new_id;
    for (const auto& [name, node] : by_name) {
        new_id[node] = ConceptId(remap.vocab_names.size());
        remap.vocab_names.push_back(name);
        remap.vocab_source.push_back(node);
    }
    remap.leaf_target.resize(target.size());
    for (size_t leaf = 0; leaf < target.size(); ++leaf)
        remap.leaf_target[leaf] = new_id.at(target[leaf]);
    return remap;
}

}  // namespace

CodeRemap simple_rollup_map(const OntologyDag& dag) {
    std::vector<ConceptId> target(dag.num_leaves);
    for (ConceptId leaf = 0; leaf < dag.num_leaves; ++leaf)
        target[leaf] = direct_parent(dag, leaf);
    return remap_from_targets(dag, target);
}

CodeRemap rare_rollup_map(const OntologyDag& dag, const std::vector<int64_t>& code_freq,
                          int64_t threshold) {
    if (int(code_freq.size()) != dag.num_leaves)
        fail("code frequency table does not cover the leaf vocabulary");
    std::vector<ConceptId> target(dag.num_leaves);
    for (ConceptId leaf = 0; leaf < dag.num_leaves; ++leaf)
        target[leaf] = code_freq[leaf] < threshold ? direct_parent(dag, leaf) : leaf;
    return remap_from_targets(dag, target);
}

std::vector<PatientRecord> apply_remap(const std::vector<PatientRecord>& records,
                                       const CodeRemap& remap) {
    std::vector<PatientRecord> out;
    out.reserve(records.size());
    for (const PatientRecord& rec : records) {
        PatientRecord mapped;
        mapped.patient_id = rec.patient_id;
        mapped.visits.reserve(rec.visits.size());
        for (const Visit& visit : rec.visits) {
            std::set<ConceptId> codes;
            for (ConceptId c : visit.codes) codes.insert(remap.leaf_target.at(size_t(c)));
            mapped.visits.push_back(Visit{{codes.begin(), codes.end()}});
        }
        out.push_back(std::move(mapped));
    }
    return out;
}

std::vector<int64_t> code_frequencies(const std::vector<PatientRecord>& records,
                                      int num_leaves) {
    std::vector<int64_t> freq(num_leaves, 0);
    for (const PatientRecord& rec : records)
        for (const Visit& visit : rec.visits)
            for (ConceptId c : visit.codes) freq.at(size_t(c))++;
    return freq;
}

RollupResult rollup_simple(const std::vector<PatientRecord>& records,
                           const OntologyDag& dag) {
    RollupResult result;
    result.remap = simple_rollup_map(dag);
    result.records = apply_remap(records, result.remap);
    return result;
}

RollupResult rollup_rare(const std::vector<PatientRecord>& records, const OntologyDag& dag,
                         int64_t threshold) {
    RollupResult result;
    result.remap = rare_rollup_map(dag, code_frequencies(records, dag.num_leaves), threshold);
    result.records = apply_remap(records, result.remap);
    return result;
}

OntologyDag make_random_dag(const OntologyDag& dag, uint64_t seed) {
    if (dag.num_internal < 5) fail("random dag needs at least five internal nodes");

    std::vector<std::string> pool;
    pool.reserve(size_t(dag.num_internal) - 1);
    for (ConceptId id = dag.num_leaves; id < dag.num_nodes(); ++id)
        if (id != dag.root) pool.push_back(dag.names[id]);

    Rng rng = Rng(seed).derive(0xda61);
    std::vector<std::pair<std::string, std::string>> edges;
    std::set<int> used;
    for (ConceptId leaf = 0; leaf < dag.num_leaves; ++leaf) {
        for (int pick : rng.sample_without_replacement(int(pool.size()), 4)) {
            edges.emplace_back(dag.names[leaf], pool[size_t(pick)]);
            used.insert(pick);
        }
    }
    for (int pick : used) edges.emplace_back(pool[size_t(pick)], dag.names[dag.root]);
    return build_dag(edges);
}

// ---------------------------------------------------------------------------
// training

PreparedData prepare(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    DatasetSplit split = split_dataset(data.records, cfg.train_ratio, cfg.valid_ratio,
                                       cfg.test_ratio, cfg.seed);

    PreparedData prep;
    const bool attention =
        cfg.model_kind == ModelKind::gram || cfg.model_kind == ModelKind::random_dag;

    CodeRemap remap;
    bool remapped = false;
    if (cfg.model_kind == ModelKind::random_dag)
        prep.model_dag = make_random_dag(data.dag, cfg.seed);
    else
        prep.model_dag = data.dag;
    if (cfg.model_kind == ModelKind::simple_rollup) {
        remap = simple_rollup_map(data.dag);
        remapped = true;
    } else if (cfg.model_kind == ModelKind::rollup_rare) {
        remap = rare_rollup_map(data.dag,
                                code_frequencies(split.train, data.dag.num_leaves),
                                cfg.rollup_threshold);
        remapped = true;
    }

    int num_inputs;
    if (remapped) {
        num_inputs = int(remap.vocab_names.size());
        prep.input_names = remap.vocab_names;
    } else {
        num_inputs = prep.model_dag.num_leaves;
        prep.input_names.assign(prep.model_dag.names.begin(),
                                prep.model_dag.names.begin() + num_inputs);
    }
    if (attention) prep.amap = AncestorMap::build(prep.model_dag);

    prep.dims.num_nodes = attention ? prep.model_dag.num_nodes() : num_inputs;
    prep.dims.num_leaves = num_inputs;
    prep.dims.embed_dim = cfg.m;
    prep.dims.attn_dim = cfg.l;
    prep.dims.hidden_dim = cfg.r;
    prep.dims.num_outputs = cfg.task == Task::binary ? 1 : data.groups.num_groups();
    prep.dims.attention = attention;
    if (cfg.task == Task::sequential && prep.dims.num_outputs == 0)
        fail("sequential task needs a non-empty group map");

    auto to_examples = [&](const std::vector<PatientRecord>& orig,
                           const std::vector<PatientRecord>& input) {
        std::vector<PatientExample> out;
        out.reserve(orig.size());
        for (size_t i = 0; i < orig.size(); ++i) {
            PatientExample ex;
            ex.visits.reserve(input[i].visits.size());
            for (const Visit& v : input[i].visits) ex.visits.push_back(v.codes);
            if (cfg.task == Task::sequential) {
                ex.step_groups = build_sequential_labels(orig[i], data.groups);
            } else {
                auto it = data.flags.find(orig[i].patient_id);
                if (it == data.flags.end())
                    fail("no binary label for patient '" + orig[i].patient_id + "'");
                ex.flag = it->second;
            }
            out.push_back(std::move(ex));
        }
        return out;
    };

    prep.train_records = remapped ? apply_remap(split.train, remap) : split.train;
    prep.train = to_examples(split.train, prep.train_records);
    const auto valid_in = remapped ? apply_remap(split.valid, remap) : split.valid;
    prep.valid = to_examples(split.valid, valid_in);
    const auto test_in = remapped ? apply_remap(split.test, remap) : split.test;
    prep.test = to_examples(split.test, test_in);

    if (cfg.task == Task::sequential) {
        prep.label_freq = label_frequencies(split.train, data.groups);
        prep.label_names = data.groups.group_names;
    }
    return prep;
}

namespace {

void run_glove_phase(const TrainConfig& cfg, const PreparedData& prep, ModelState& state) {
    GloveConfig gcfg;
    gcfg.epochs = cfg.glove_epochs;
    gcfg.seed = mix64(cfg.seed ^ 0x910e5eedULL);

    if (cfg.init_mode == InitMode::glove_augmented) {
        if (!prep.dims.attention)
            fail("init_mode glove_augmented requires an ontology-backed model");
        SparseCooccurrence cooc =
            build_cooccurrence(prep.train_records, prep.amap, prep.dims.num_nodes);
        BasicEmbeddings emb = glove_fit(cooc, cfg.m, gcfg);
        state.params.embed = emb.vectors;
    } else {
        BasicEmbeddings emb = glove_fit_leaf_only(prep.train_records, prep.dims.num_leaves,
                                                  cfg.m, gcfg);
        state.params.embed.topRows(prep.dims.num_leaves) = emb.vectors;
    }
}

double evaluate_loss(const std::vector<PatientExample>& examples, const ModelParams& params,
                     const AncestorMap* amap, Task task, int batch_size) {
    double sum = 0;
    for (size_t start = 0; start < examples.size(); start += size_t(batch_size)) {
        const size_t stop = std::min(examples.size(), start + size_t(batch_size));
        Batch batch;
        batch.reserve(stop - start);
        for (size_t i = start; i < stop; ++i) batch.push_back(&examples[i]);
        sum += batch_loss(batch, params, amap, task) * double(batch.size());
    }
    return sum / double(examples.size());
}

bool nonfinite_error(const Error& e) {
    return std::string(e.what()).find("non-finite") != std::string::npos;
}

}  // namespace

TrainOutcome train(const TrainConfig& cfg, const PreparedData& prep) {
    cfg.validate();
    if (prep.train.empty()) fail("training split is empty");
    if (prep.valid.empty()) fail("validation split is empty");

    ModelState state = ModelState::init(prep.dims, cfg.seed);
    if (cfg.init_mode != InitMode::random) run_glove_phase(cfg, prep, state);
    const AncestorMap* amap = prep.dims.attention ? &prep.amap : nullptr;

    TrainOutcome out;
    double best_valid = std::numeric_limits<double>::infinity();
    bool have_best = false;
    int bad_epochs = 0;
    const double keep = 1.0 - cfg.dropout_rate;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        Rng shuffle_rng = Rng(cfg.seed).derive(0x0e70c).derive(uint64_t(epoch));
        Rng drop_rng = Rng(cfg.seed).derive(0xd20b0).derive(uint64_t(epoch));

        std::vector<int> order(prep.train.size());
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);

        double loss_sum = 0;
        bool diverged = false;
        for (size_t start = 0; start < order.size() && !diverged;
             start += size_t(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + size_t(cfg.batch_size));
            Batch batch;
            batch.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) batch.push_back(&prep.train[order[i]]);

            DropoutMasks masks;
            const DropoutMasks* mask_ptr = nullptr;
            if (cfg.dropout_rate > 0) {
                masks.resize(batch.size());
                for (size_t b = 0; b < batch.size(); ++b) {
                    const size_t steps = cfg.task == Task::binary
                                             ? 1
                                             : batch[b]->visits.size() - 1;
                    masks[b].resize(steps);
                    for (auto& mask : masks[b]) {
                        mask.resize(cfg.r);
                        for (int i = 0; i < cfg.r; ++i)
                            mask[i] = drop_rng.uniform() < keep ? 1.0 / keep : 0.0;
                    }
                }
                mask_ptr = &masks;
            }

            double pred_loss = 0;
            ModelParams grads;
            try {
                grads = batch_gradients(batch, state.params, amap, cfg.task, mask_ptr,
                                        &pred_loss);
            } catch (const Error& e) {
                if (!nonfinite_error(e)) throw;
                diverged = true;
                break;
            }
            if (!std::isfinite(pred_loss)) {
                diverged = true;
                break;
            }
            loss_sum += pred_loss * double(batch.size());

            if (cfg.l2_coeff > 0) {
                grads.embed += 2.0 * cfg.l2_coeff * state.params.embed;
                if (prep.dims.attention) {
                    grads.attn_w += 2.0 * cfg.l2_coeff * state.params.attn_w;
                    grads.attn_u += 2.0 * cfg.l2_coeff * state.params.attn_u;
                }
                grads.out_w += 2.0 * cfg.l2_coeff * state.params.out_w;
            }
            adadelta_step(state, grads);
            if (!state.params.all_finite()) diverged = true;
        }

        double valid = std::numeric_limits<double>::quiet_NaN();
        if (!diverged) {
            valid = evaluate_loss(prep.valid, state.params, amap, cfg.task, cfg.batch_size);
            if (!std::isfinite(valid)) diverged = true;
        }
        if (diverged) {
            out.report.diverged = true;
            break;
        }

        state.epoch = epoch + 1;
        EpochStats stats;
        stats.train_loss = loss_sum / double(prep.train.size());
        stats.valid_loss = valid;
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                .count();
        out.report.epochs.push_back(stats);

        if (valid < best_valid) {
            best_valid = valid;
            out.best = state;
            out.report.best_epoch = epoch;
            have_best = true;
            bad_epochs = 0;
        } else if (++bad_epochs > cfg.patience) {
            break;
        }
    }

    if (!have_best) fail("training diverged before completing an epoch");
    return out;
}

TrainOutcome train(const TrainConfig& cfg, const Dataset& data) {
    return train(cfg, prepare(cfg, data));
}

void write_train_log(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail("cannot write train log " + path);
    out << "epoch,train_loss,valid_loss,seconds\n";
    char buf[160];
    for (size_t i = 0; i < report.epochs.size(); ++i) {
        const EpochStats& e = report.epochs[i];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.3f\n", i + 1, e.train_loss,
                      e.valid_loss, e.seconds);
        out << buf;
    }
    if (!out) fail("write failed for train log " + path);
}

}  // namespace gram
