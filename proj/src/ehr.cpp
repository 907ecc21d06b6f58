#include "gram/ehr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gram {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

std::ifstream open_csv(const std::string& path, const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) fail(path + ": empty file");
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header != expected_header)
        fail(path + ": expected header '" + expected_header + "', got '" + header + "'");
    return in;
}

}  // namespace

LoadedRecords load_records(const std::string& path, const OntologyDag& dag) {
    std::ifstream in = open_csv(path, "patient_id,visit_index,code");

    // Preserve first-appearance order of patients.
    std::vector<std::string> patient_order;
    std::map<std::string, std::vector<std::pair<int64_t, std::set<ConceptId>>>> visits_by_patient;

    std::string line;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 3)
            fail(path + ":" + std::to_string(lineno) + ": expected 3 fields, got " +
                 std::to_string(fields.size()));
        const std::string& pid = fields[0];
        int64_t visit_index;
        try {
            visit_index = std::stoll(fields[1]);
        } catch (const std::exception&) {
            fail(path + ":" + std::to_string(lineno) + ": bad visit_index '" + fields[1] + "'");
        }
        ConceptId code = dag.find(fields[2]);
        if (code < 0 || !dag.is_leaf(code))
            fail(path + ":" + std::to_string(lineno) + ": code '" + fields[2] +
                 "' is not a leaf of the ontology");

        auto it = visits_by_patient.find(pid);
        if (it == visits_by_patient.end()) {
            patient_order.push_back(pid);
            it = visits_by_patient.emplace(pid, decltype(visits_by_patient)::mapped_type{}).first;
        }
        auto& visits = it->second;
        if (visits.empty() || visits.back().first < visit_index) {
            visits.push_back({visit_index, {code}});
        } else if (visits.back().first == visit_index) {
            visits.back().second.insert(code);  // duplicates within a visit collapse
        } else {
            fail(path + ":" + std::to_string(lineno) + ": visit indices for patient '" + pid +
                 "' are not non-decreasing");
        }
    }

    LoadedRecords out;
    for (const auto& pid : patient_order) {
        const auto& visits = visits_by_patient[pid];
        if (visits.size() < 2) {
            ++out.dropped_single_visit;
            continue;
        }
        PatientRecord rec;
        rec.patient_id = pid;
        for (const auto& [index, codes] : visits) {
            (void)index;
            rec.visits.push_back({std::vector<ConceptId>(codes.begin(), codes.end())});
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

std::vector<uint8_t> multi_hot(const Visit& visit, int dim) {
    std::vector<uint8_t> bits(dim, 0);
    for (ConceptId code : visit.codes) {
        if (code < 0 || code >= dim)
            fail("code " + std::to_string(code) + " out of range for dim " + std::to_string(dim));
        bits[code] = 1;
    }
    return bits;
}

Visit visit_from_multi_hot(const std::vector<uint8_t>& bits) {
    Visit v;
    for (size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) v.codes.push_back(ConceptId(i));
    if (v.codes.empty()) fail("multi-hot vector has no set bits");
    return v;
}

GroupMap load_group_map(const std::string& path, const OntologyDag& dag) {
    std::ifstream in = open_csv(path, "code,group_name");

    std::map<std::string, std::vector<ConceptId>> by_group;
    std::vector<bool> mapped(dag.num_leaves, false);
    std::string line;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 2)
            fail(path + ":" + std::to_string(lineno) + ": expected 2 fields");
        ConceptId code = dag.find(fields[0]);
        if (code < 0 || !dag.is_leaf(code))
            fail(path + ":" + std::to_string(lineno) + ": code '" + fields[0] +
                 "' is not a leaf of the ontology");
        if (mapped[code])
            fail(path + ":" + std::to_string(lineno) + ": code '" + fields[0] + "' mapped twice");
        mapped[code] = true;
        by_group[fields[1]].push_back(code);
    }
    for (ConceptId leaf = 0; leaf < dag.num_leaves; ++leaf)
        if (!mapped[leaf]) fail(path + ": leaf '" + dag.names[leaf] + "' has no label group");

    GroupMap gm;
    gm.group_of.assign(dag.num_leaves, -1);
    for (const auto& [name, codes] : by_group) {  // map order => deterministic group ids
        int gid = int(gm.group_names.size());
        gm.group_names.push_back(name);
        for (ConceptId code : codes) gm.group_of[code] = gid;
    }
    return gm;
}

std::vector<std::vector<int>> build_sequential_labels(const PatientRecord& record,
                                                      const GroupMap& gm) {
    std::vector<std::vector<int>> labels;
    if (record.visits.size() < 2) return labels;
    labels.reserve(record.visits.size() - 1);
    for (size_t t = 1; t < record.visits.size(); ++t) {
        std::set<int> groups;
        for (ConceptId code : record.visits[t].codes) groups.insert(gm.group_of[code]);
        labels.emplace_back(groups.begin(), groups.end());
    }
    return labels;
}

std::unordered_map<std::string, int> load_flags(const std::string& path) {
    std::ifstream in = open_csv(path, "patient_id,label");
    std::unordered_map<std::string, int> out;
    std::string line;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 2 || (fields[1] != "0" && fields[1] != "1"))
            fail(path + ":" + std::to_string(lineno) + ": expected 'patient_id,0|1'");
        out[fields[0]] = fields[1] == "1" ? 1 : 0;
    }
    return out;
}

DatasetSplit split_dataset(const std::vector<PatientRecord>& records,
                           double train_ratio, double valid_ratio, double test_ratio,
                           uint64_t seed) {
    const double sum = train_ratio + valid_ratio + test_ratio;
    if (train_ratio < 0 || valid_ratio < 0 || test_ratio < 0 || std::abs(sum - 1.0) > 1e-9)
        fail("split ratios must be nonnegative and sum to 1");

    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const size_t n = records.size();
    size_t n_train = size_t(std::llround(double(n) * train_ratio));
    size_t n_valid = size_t(std::llround(double(n) * valid_ratio));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);

    DatasetSplit split;
    for (size_t i = 0; i < n; ++i) {
        const PatientRecord& rec = records[order[i]];
        if (i < n_train)
            split.train.push_back(rec);
        else if (i < n_train + n_valid)
            split.valid.push_back(rec);
        else
            split.test.push_back(rec);
    }
    return split;
}

std::vector<int64_t> label_frequencies(const std::vector<PatientRecord>& records,
                                       const GroupMap& gm) {
    std::vector<int64_t> counts(gm.num_groups(), 0);
    for (const auto& rec : records)
        for (const auto& step : build_sequential_labels(rec, gm))
            for (int group : step) ++counts[group];
    return counts;
}

}  // namespace gram
