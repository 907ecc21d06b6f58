#ifndef GRAM_TRAINING_HPP
#define GRAM_TRAINING_HPP

#include <map>
#include <string>
#include <vector>

#include "gram/ehr.hpp"
#include "gram/model.hpp"
#include "gram/ontology.hpp"

namespace gram {

enum class InitMode { random, glove_augmented, glove_leaf_only };
enum class ModelKind { gram, random_dag, rnn, simple_rollup, rollup_rare };

InitMode parse_init_mode(const std::string& s);
ModelKind parse_model_kind(const std::string& s);
Task parse_task(const std::string& s);
std::string to_string(InitMode m);
std::string to_string(ModelKind k);
std::string to_string(Task t);

struct TrainConfig {
    int m = 100;  // embedding width
    int r = 100;  // GRU hidden width
    int l = 100;  // attention MLP width
    double l2_coeff = 0.001;
    double dropout_rate = 0.2;
    int batch_size = 100;
    int max_epochs = 30;
    int patience = 5;
    uint64_t seed = 1;
    InitMode init_mode = InitMode::random;
    ModelKind model_kind = ModelKind::gram;
    int64_t rollup_threshold = 0;
    Task task = Task::sequential;
    int glove_epochs = 50;
    double train_ratio = 0.75;
    double valid_ratio = 0.10;
    double test_ratio = 0.15;

    void validate() const;
};

// `key=value` lines, `#` comments; unknown keys rejected. Overrides win over
// file contents, so both loaders take an optional base.
TrainConfig config_from_kv(const std::map<std::string, std::string>& kv,
                           const TrainConfig& base = {});
TrainConfig load_config_file(const std::string& path, const TrainConfig& base = {});
std::string config_to_kv(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// dataset plumbing

// Everything read off disk, still in leaf-code space.
struct Dataset {
    OntologyDag dag;
    std::vector<PatientRecord> records;
    GroupMap groups;                               // sequential targets
    std::unordered_map<std::string, int> flags;    // binary targets, by patient id
    int dropped_single_visit = 0;
};

// Loads ontology.tsv, records.csv, groups.csv and, if present, flags.csv
// from a directory.
Dataset load_dataset(const std::string& dir);

// Mapping of the input vocabulary induced by a roll-up.
struct CodeRemap {
    std::vector<ConceptId> leaf_target;    // original leaf id -> new input id
    std::vector<std::string> vocab_names;  // new input id -> node name
    std::vector<ConceptId> vocab_source;   // new input id -> original dag node
};

// Direct parent of each leaf; ties among multiple parents go to the smallest
// node id. Vocabulary = image of the map over all leaves, sorted by name.
CodeRemap simple_rollup_map(const OntologyDag& dag);
// Keep leaves with frequency >= threshold, roll the rest up to their direct
// parent. Frequencies are per-visit occurrence counts, indexed by leaf id.
CodeRemap rare_rollup_map(const OntologyDag& dag, const std::vector<int64_t>& code_freq,
                          int64_t threshold);

std::vector<PatientRecord> apply_remap(const std::vector<PatientRecord>& records,
                                       const CodeRemap& remap);
std::vector<int64_t> code_frequencies(const std::vector<PatientRecord>& records,
                                      int num_leaves);

struct RollupResult {
    std::vector<PatientRecord> records;
    CodeRemap remap;
};

RollupResult rollup_simple(const std::vector<PatientRecord>& records, const OntologyDag& dag);
// Threshold is compared against frequencies counted over `records` itself.
RollupResult rollup_rare(const std::vector<PatientRecord>& records, const OntologyDag& dag,
                         int64_t threshold);

// Replaces the DAG's internal wiring: every leaf gets four direct parents
// sampled uniformly from the original non-root internal nodes, and each
// sampled internal node's sole parent is the root. Every leaf then has
// exactly five ancestors. Leaf names (hence leaf ids) are preserved.
OntologyDag make_random_dag(const OntologyDag& dag, uint64_t seed);

// ---------------------------------------------------------------------------
// training

// Model-space view of a dataset: inputs transformed per model kind, targets
// always in the original label space.
struct PreparedData {
    ModelDims dims;
    AncestorMap amap;                      // meaningful only when dims.attention
    OntologyDag model_dag;                 // DAG actually wired into the model
    std::vector<std::string> input_names;  // input vocab id -> name
    std::vector<PatientExample> train, valid, test;
    std::vector<PatientRecord> train_records;  // input space, feeds the GloVe phase
    std::vector<int64_t> label_freq;       // train-split label frequencies
    std::vector<std::string> label_names;
};

PreparedData prepare(const TrainConfig& cfg, const Dataset& data);

struct EpochStats {
    double train_loss = 0;
    double valid_loss = 0;
    double seconds = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;  // index into epochs
    bool diverged = false;
};

struct TrainOutcome {
    ModelState best;
    TrainReport report;
};

// Optional GloVe phase, then shuffled mini-batch epochs with Adadelta,
// L2 on the non-recurrent weight matrices, inverted dropout on h_t, and
// early stopping on validation loss.
TrainOutcome train(const TrainConfig& cfg, const PreparedData& prep);
TrainOutcome train(const TrainConfig& cfg, const Dataset& data);

// CSV `epoch,train_loss,valid_loss,seconds`.
void write_train_log(const TrainReport& report, const std::string& path);

}  // namespace gram

#endif
