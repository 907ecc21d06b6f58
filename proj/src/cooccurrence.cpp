#include "gram/cooccurrence.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gram {

std::pair<ConceptId, ConceptId> SparseCooccurrence::key(ConceptId i, ConceptId j) {
    return i < j ? std::make_pair(i, j) : std::make_pair(j, i);
}

void SparseCooccurrence::add(ConceptId i, ConceptId j, double value) {
    if (i == j) fail("co-occurrence diagonal is excluded");
    if (i < 0 || j < 0 || i >= dim_ || j >= dim_) fail("co-occurrence index out of range");
    if (value == 0) return;
    entries_[key(i, j)] += value;
}

double SparseCooccurrence::at(ConceptId i, ConceptId j) const {
    if (i == j) return 0.0;
    auto it = entries_.find(key(i, j));
    return it == entries_.end() ? 0.0 : it->second;
}

void SparseCooccurrence::merge(const SparseCooccurrence& other) {
    if (other.dim_ != dim_) fail("cannot merge co-occurrence matrices of different dims");
    for (const auto& [k, v] : other.entries_) entries_[k] += v;
}

void SparseCooccurrence::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail("cannot write '" + path + "'");
    out << "# dim " << dim_ << "\n";
    char buf[64];
    for (const auto& [k, v] : entries_) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << k.first << '\t' << k.second << '\t' << buf << '\n';
    }
}

SparseCooccurrence SparseCooccurrence::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) fail(path + ": empty file");
    int dim = 0;
    if (std::sscanf(line.c_str(), "# dim %d", &dim) != 1 || dim <= 0)
        fail(path + ": missing '# dim N' header");
    SparseCooccurrence m(dim);
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        int i, j;
        double v;
        if (std::sscanf(line.c_str(), "%d\t%d\t%lf", &i, &j, &v) != 3)
            fail(path + ":" + std::to_string(lineno) + ": expected 'i<TAB>j<TAB>value'");
        m.add(i, j, v);
    }
    return m;
}

std::map<ConceptId, int> augment_visit(const Visit& visit, const AncestorMap& amap) {
    std::map<ConceptId, int> counts;
    for (ConceptId code : visit.codes)
        for (ConceptId node : amap.of(code)) ++counts[node];
    return counts;
}

namespace {

// Counts are integers, so double accumulation is exact and the result does
// not depend on visit or patient order.
template <class CountVisit>
SparseCooccurrence count_pairs(const std::vector<PatientRecord>& records, int dim,
                               CountVisit&& count_visit) {
    SparseCooccurrence m(dim);
    for (const auto& rec : records) {
        for (const auto& visit : rec.visits) {
            const std::map<ConceptId, int> counts = count_visit(visit);
            for (auto it = counts.begin(); it != counts.end(); ++it) {
                auto jt = it;
                for (++jt; jt != counts.end(); ++jt)
                    m.add(it->first, jt->first, double(it->second) * double(jt->second));
            }
        }
    }
    return m;
}

}  // namespace

SparseCooccurrence build_cooccurrence(const std::vector<PatientRecord>& records,
                                      const AncestorMap& amap, int dim) {
    return count_pairs(records, dim,
                       [&](const Visit& v) { return augment_visit(v, amap); });
}

SparseCooccurrence build_cooccurrence_leaf_only(const std::vector<PatientRecord>& records,
                                                int num_leaves) {
    return count_pairs(records, num_leaves, [](const Visit& v) {
        std::map<ConceptId, int> counts;
        for (ConceptId code : v.codes) ++counts[code];
        return counts;
    });
}

}  // namespace gram
