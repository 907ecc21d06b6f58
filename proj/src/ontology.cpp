#include "gram/ontology.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace gram {

ConceptId OntologyDag::find(const std::string& name) const {
    auto it = name_index_.find(name);
    return it == name_index_.end() ? -1 : it->second;
}

ConceptId OntologyDag::id_of(const std::string& name) const {
    ConceptId id = find(name);
    if (id < 0) fail("unknown ontology node '" + name + "'");
    return id;
}

OntologyDag build_dag(const std::vector<std::pair<std::string, std::string>>& edges,
                      const std::set<std::string>* leaf_override) {
    if (edges.empty()) fail("ontology has no edges");

    std::set<std::string> all_names;
    std::set<std::string> parent_names;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& [child, parent] : edges) {
        if (child == parent) fail("node '" + child + "' is its own parent");
        if (!seen.insert({child, parent}).second)
            fail("duplicate edge '" + child + "' -> '" + parent + "'");
        all_names.insert(child);
        all_names.insert(parent);
        parent_names.insert(parent);
    }

    // Validate the raw graph before committing to an id layout.
    std::map<std::string, int> temp_id;
    for (const auto& name : all_names) temp_id.emplace(name, int(temp_id.size()));
    const int n = int(temp_id.size());
    std::vector<int> parents_left(n, 0);
    std::vector<std::vector<int>> children(n);
    for (const auto& [child, parent] : edges) {
        ++parents_left[temp_id[child]];
        children[temp_id[parent]].push_back(temp_id[child]);
    }
    std::vector<std::string> parentless;
    std::vector<int> stack;
    for (const auto& [name, id] : temp_id) {
        if (parents_left[id] == 0) {
            parentless.push_back(name);
            stack.push_back(id);
        }
    }
    // Kahn over child->parent edges; leftover nodes form a cycle.
    int visited = 0;
    while (!stack.empty()) {
        int node = stack.back();
        stack.pop_back();
        ++visited;
        for (int child : children[node])
            if (--parents_left[child] == 0) stack.push_back(child);
    }
    if (visited != n) fail("ontology contains a cycle");
    if (parentless.size() > 1) {
        std::string msg = "no single root path: nodes without parents:";
        for (const auto& name : parentless) msg += " '" + name + "'";
        fail(msg);
    }
    const std::string root_name = parentless[0];

    std::set<std::string> leaf_names;
    if (leaf_override) {
        for (const auto& name : *leaf_override) {
            if (!all_names.count(name)) fail("unknown ontology node '" + name + "'");
            leaf_names.insert(name);
        }
    } else {
        for (const auto& name : all_names)
            if (!parent_names.count(name)) leaf_names.insert(name);
    }
    if (leaf_names.empty()) fail("ontology has no leaf nodes");
    if (leaf_names.count(root_name)) fail("root '" + root_name + "' cannot be a leaf");

    OntologyDag dag;
    dag.num_leaves = int(leaf_names.size());
    dag.num_internal = int(all_names.size() - leaf_names.size());
    dag.names.reserve(all_names.size());
    for (const auto& name : leaf_names) dag.names.push_back(name);  // set is sorted
    for (const auto& name : all_names)
        if (!leaf_names.count(name)) dag.names.push_back(name);
    for (ConceptId id = 0; id < dag.num_nodes(); ++id) dag.name_index_[dag.names[id]] = id;

    dag.parents.assign(dag.num_nodes(), {});
    for (const auto& [child, parent] : edges)
        dag.parents[dag.name_index_[child]].push_back(dag.name_index_[parent]);
    for (auto& p : dag.parents) std::sort(p.begin(), p.end());
    dag.root = dag.name_index_[root_name];

    return dag;
}

OntologyDag parse_ontology(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open ontology file '" + path + "'");

    std::vector<std::pair<std::string, std::string>> edges;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() ||
            line.find('\t', tab + 1) != std::string::npos)
            fail(path + ":" + std::to_string(lineno) +
                 ": malformed line, expected 'child<TAB>parent'");
        edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    try {
        return build_dag(edges);
    } catch (const Error& e) {
        fail(path + ": " + e.what());
    }
}

std::vector<ConceptId> ancestors(const OntologyDag& dag, ConceptId leaf) {
    if (!dag.is_leaf(leaf))
        fail("node " + std::to_string(leaf) + " is not a leaf (|C| = " +
             std::to_string(dag.num_leaves) + ")");
    std::vector<bool> seen(dag.num_nodes(), false);
    std::vector<ConceptId> stack{leaf};
    seen[leaf] = true;
    while (!stack.empty()) {
        ConceptId node = stack.back();
        stack.pop_back();
        for (ConceptId p : dag.parents[node]) {
            if (!seen[p]) {
                seen[p] = true;
                stack.push_back(p);
            }
        }
    }
    std::vector<ConceptId> out{leaf};
    for (ConceptId id = 0; id < dag.num_nodes(); ++id)
        if (seen[id] && id != leaf) out.push_back(id);
    return out;
}

AncestorMap AncestorMap::build(const OntologyDag& dag) {
    AncestorMap amap;
    amap.lists.reserve(dag.num_leaves);
    for (ConceptId leaf = 0; leaf < dag.num_leaves; ++leaf)
        amap.lists.push_back(ancestors(dag, leaf));
    return amap;
}

OntologyDag promote_observed_ancestors(const OntologyDag& dag,
                                       const std::set<std::string>& observed) {
    std::set<std::string> leaf_names;
    for (ConceptId id = 0; id < dag.num_leaves; ++id) leaf_names.insert(dag.names[id]);
    for (const auto& name : observed) {
        ConceptId id = dag.id_of(name);
        if (id == dag.root) fail("root '" + name + "' cannot be a leaf");
        leaf_names.insert(name);
    }

    std::vector<std::pair<std::string, std::string>> edges;
    for (ConceptId id = 0; id < dag.num_nodes(); ++id)
        for (ConceptId p : dag.parents[id])
            edges.emplace_back(dag.names[id], dag.names[p]);
    return build_dag(edges, &leaf_names);
}

std::unordered_map<std::string, std::string> load_label_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open label sidecar '" + path + "'");
    std::unordered_map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos)
            fail(path + ":" + std::to_string(lineno) + ": expected 'name<TAB>category'");
        out[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return out;
}

}  // namespace gram
