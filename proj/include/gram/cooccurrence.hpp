#ifndef GRAM_COOCCURRENCE_HPP
#define GRAM_COOCCURRENCE_HPP

#include <map>
#include <utility>

#include "gram/ehr.hpp"
#include "gram/ontology.hpp"

namespace gram {

// Symmetric nonnegative co-occurrence counts over all DAG nodes. Only the
// upper triangle (i < j) is stored; the diagonal is excluded by design.
class SparseCooccurrence {
public:
    explicit SparseCooccurrence(int dim) : dim_(dim) {}

    int dim() const { return dim_; }

    void add(ConceptId i, ConceptId j, double value);
    double at(ConceptId i, ConceptId j) const;  // 0 when absent

    const std::map<std::pair<ConceptId, ConceptId>, double>& entries() const { return entries_; }

    void merge(const SparseCooccurrence& other);

    void save(const std::string& path) const;  // `i<TAB>j<TAB>value`, i < j, sorted
    static SparseCooccurrence load(const std::string& path);

private:
    static std::pair<ConceptId, ConceptId> key(ConceptId i, ConceptId j);

    int dim_;
    std::map<std::pair<ConceptId, ConceptId>, double> entries_;
};

// The visit's codes plus each code's distinct ancestors, as a multiset: an
// ancestor shared by k codes of the visit appears with count k.
std::map<ConceptId, int> augment_visit(const Visit& visit, const AncestorMap& amap);

// M_ij = sum over visits of count(i, V') * count(j, V') for i != j.
SparseCooccurrence build_cooccurrence(const std::vector<PatientRecord>& records,
                                      const AncestorMap& amap, int dim);

// Same counting over raw visits, no ancestor augmentation; dim = |C|.
SparseCooccurrence build_cooccurrence_leaf_only(const std::vector<PatientRecord>& records,
                                                int num_leaves);

}  // namespace gram

#endif
