#ifndef GRAM_SYNTH_HPP
#define GRAM_SYNTH_HPP

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "gram/ehr.hpp"
#include "gram/ontology.hpp"

namespace gram {

// Balanced-tree ontology over `num_leaves` codes with one internal level per
// branching factor. Patient trajectories follow a latent level-1 subtree
// state: each visit draws codes from the active subtree under a Zipf-skewed
// leaf popularity, and the state persists to the next visit with probability
// `coherence`, otherwise jumping proportionally to subtree popularity mass.
struct SynthConfig {
    int num_leaves = 400;
    std::vector<int> branching = {25, 4};  // internal levels below the root
    int num_patients = 2000;
    int visits_min = 4;
    int visits_max = 12;
    int codes_min = 1;
    int codes_max = 4;
    double rarity_exponent = 1.2;  // Zipf exponent over leaf ranks
    double coherence = 0.8;        // chance the next visit keeps the subtree
    double label_noise = 0.05;     // chance the binary flag is flipped
    uint64_t seed = 1;

    void validate() const;
};

struct SynthDataset {
    OntologyDag dag;
    std::vector<std::pair<std::string, std::string>> edges;  // child, parent
    std::vector<PatientRecord> records;                      // codes are dag leaf ids
    GroupMap groups;                                         // leaf -> level-1 ancestor
    std::vector<std::pair<std::string, int>> flags;          // per patient, record order
};

SynthDataset generate(const SynthConfig& config);

// The usual corpus statistics: patients, visits, codes per visit, vocabulary.
nlohmann::json describe(const std::vector<PatientRecord>& records);

// Writes ontology.tsv, records.csv, groups.csv, flags.csv, labels.tsv and
// stats.json into `dir` (created if missing). Byte-stable for a fixed seed.
void write_dataset(const SynthDataset& data, const std::string& dir);

}  // namespace gram

#endif
