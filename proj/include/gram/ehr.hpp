#ifndef GRAM_EHR_HPP
#define GRAM_EHR_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gram/ontology.hpp"

namespace gram {

// One encounter: a nonempty set of leaf codes, kept sorted and distinct.
struct Visit {
    std::vector<ConceptId> codes;
};

struct PatientRecord {
    std::string patient_id;
    std::vector<Visit> visits;  // ordered by visit index, size >= 2
};

struct LoadedRecords {
    std::vector<PatientRecord> records;
    int dropped_single_visit = 0;  // patients removed for having < 2 visits
};

// Records file: CSV with header `patient_id,visit_index,code`, one code per
// row. Rows of one patient must carry non-decreasing visit indices; rows with
// the same index merge into one visit. Codes must name leaves of `dag`.
LoadedRecords load_records(const std::string& path, const OntologyDag& dag);

std::vector<uint8_t> multi_hot(const Visit& visit, int dim);
Visit visit_from_multi_hot(const std::vector<uint8_t>& bits);

// Leaf code -> label group, total over the leaves of the DAG.
struct GroupMap {
    std::vector<int> group_of;             // per leaf
    std::vector<std::string> group_names;  // dense group id -> name

    int num_groups() const { return int(group_names.size()); }
};

// CSV `code,group_name` with header. Every leaf must be mapped.
GroupMap load_group_map(const std::string& path, const OntologyDag& dag);

// Sequential task targets: for t in [0, T-2], the distinct label groups of
// visit t+1, ascending. Exactly T-1 entries.
std::vector<std::vector<int>> build_sequential_labels(const PatientRecord& record,
                                                      const GroupMap& gm);

// CSV `patient_id,label` with header, label in {0,1}; used for the binary task.
std::unordered_map<std::string, int> load_flags(const std::string& path);

struct DatasetSplit {
    std::vector<PatientRecord> train, valid, test;
};

// Seed-deterministic shuffle followed by a contiguous cut at the given
// ratios (each rounded to the nearest patient).
DatasetSplit split_dataset(const std::vector<PatientRecord>& records,
                           double train_ratio, double valid_ratio, double test_ratio,
                           uint64_t seed);

// Occurrences of each label group across all sequential targets of `records`.
std::vector<int64_t> label_frequencies(const std::vector<PatientRecord>& records,
                                       const GroupMap& gm);

}  // namespace gram

#endif
