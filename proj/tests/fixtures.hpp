#pragma once

// Shared helpers for the test binaries: the worked small ontology, scratch
// directories, file IO, and a layered random-DAG generator for property tests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <utility>
#include <vector>

#include "gram/common.hpp"
#include "gram/ontology.hpp"

namespace testutil {

// Eleven-edge DAG with leaves {c_d, c_e, c_h, c_i, c_k} and internal nodes
// {c_a, c_b, c_c, c_f, c_g, c_j}; c_a is the root. c_k reaches the root by
// two paths (via c_f/c_c and via c_b), touching five distinct ancestors.
inline std::vector<std::pair<std::string, std::string>> small_dag_edges() {
    return {
        {"c_d", "c_b"}, {"c_e", "c_b"}, {"c_b", "c_a"}, {"c_i", "c_g"},
        {"c_h", "c_g"}, {"c_g", "c_c"}, {"c_c", "c_a"}, {"c_k", "c_j"},
        {"c_j", "c_f"}, {"c_j", "c_b"}, {"c_f", "c_c"},
    };
}

inline gram::OntologyDag small_dag() { return gram::build_dag(small_dag_edges()); }

// Self-deleting scratch directory under the system temp root.
class TempDir {
public:
    explicit TempDir(const std::string& stem = "gram_test") {
        static int counter = 0;
        auto base = std::filesystem::temp_directory_path();
        path_ = base / (stem + "_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Random single-root DAG: internal nodes are layered so parent edges always
// point toward lower indices (index 0 is the root), leaves hang off one to
// three random internals. Names are zero-padded so id order follows name
// order within each class.
inline gram::OntologyDag random_dag(gram::Rng& rng, int num_leaves, int num_internal) {
    auto pad = [](const char* prefix, int v) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%s%03d", prefix, v);
        return std::string(buf);
    };
    std::vector<std::pair<std::string, std::string>> edges;
    std::set<std::string> leaf_names;
    for (int j = 1; j < num_internal; ++j) {
        int parents = 1 + int(rng.below(2));
        auto picks = rng.sample_without_replacement(j, std::min(parents, j));
        for (int p : picks) edges.emplace_back(pad("n", j), pad("n", p));
    }
    for (int i = 0; i < num_leaves; ++i) {
        leaf_names.insert(pad("l", i));
        int parents = 1 + int(rng.below(3));
        auto picks = rng.sample_without_replacement(num_internal, std::min(parents, num_internal));
        for (int p : picks) edges.emplace_back(pad("l", i), pad("n", p));
    }
    return gram::build_dag(edges, &leaf_names);
}

// Plain DFS over parent edges; the reference for ancestor-closure checks.
inline std::set<gram::ConceptId> dfs_ancestors(const gram::OntologyDag& dag,
                                               gram::ConceptId node) {
    std::set<gram::ConceptId> seen;
    std::vector<gram::ConceptId> stack{node};
    while (!stack.empty()) {
        gram::ConceptId current = stack.back();
        stack.pop_back();
        if (!seen.insert(current).second) continue;
        for (gram::ConceptId p : dag.parents[current]) stack.push_back(p);
    }
    return seen;
}

}  // namespace testutil
