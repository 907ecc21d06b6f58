#ifndef GRAM_ONTOLOGY_HPP
#define GRAM_ONTOLOGY_HPP

#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gram/common.hpp"

namespace gram {

// Dense node index. Leaves occupy [0, num_leaves), internal nodes
// (ancestors, including the root) occupy [num_leaves, num_nodes).
using ConceptId = int32_t;

// Validated knowledge DAG. Immutable after construction.
struct OntologyDag {
    int num_leaves = 0;
    int num_internal = 0;
    ConceptId root = -1;
    std::vector<std::vector<ConceptId>> parents;  // per node, distinct, ascending
    std::vector<std::string> names;               // per node

    int num_nodes() const { return num_leaves + num_internal; }
    bool is_leaf(ConceptId id) const { return id >= 0 && id < num_leaves; }

    ConceptId find(const std::string& name) const;  // -1 if unknown
    ConceptId id_of(const std::string& name) const; // throws if unknown

private:
    friend OntologyDag build_dag(const std::vector<std::pair<std::string, std::string>>&,
                                 const std::set<std::string>*);
    std::unordered_map<std::string, ConceptId> name_index_;
};

// Builds and validates a DAG from (child, parent) name pairs. Leaves are the
// nodes that never appear as a parent, unless an explicit leaf set overrides
// that. Ids are assigned leaf-first, lexicographic by name within each class.
OntologyDag build_dag(const std::vector<std::pair<std::string, std::string>>& edges,
                      const std::set<std::string>* leaf_override = nullptr);

// Edge-list file: one `child<TAB>parent` per line, `#` starts a comment line.
OntologyDag parse_ontology(const std::string& path);

// Self first, then all distinct ancestors in ascending id order.
std::vector<ConceptId> ancestors(const OntologyDag& dag, ConceptId leaf);

// Ancestor lists for every leaf, precomputed once.
struct AncestorMap {
    std::vector<std::vector<ConceptId>> lists;

    static AncestorMap build(const OntologyDag& dag);
    const std::vector<ConceptId>& of(ConceptId leaf) const { return lists[leaf]; }
    int num_leaves() const { return int(lists.size()); }
};

// Moves the named internal nodes into the leaf set (they keep their parent
// edges). Names already denoting leaves are accepted as no-ops; the root is
// rejected since it would have no proper ancestors to attend over.
OntologyDag promote_observed_ancestors(const OntologyDag& dag,
                                       const std::set<std::string>& observed);

// Optional sidecar `name<TAB>category` used by exporters only.
std::unordered_map<std::string, std::string> load_label_sidecar(const std::string& path);

}  // namespace gram

#endif
