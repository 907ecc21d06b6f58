#ifndef GRAM_EVALUATION_HPP
#define GRAM_EVALUATION_HPP

#include <array>
#include <json.hpp>
#include <string>
#include <unordered_map>
#include <vector>

#include "gram/model.hpp"
#include "gram/ontology.hpp"

namespace gram {

struct LabelTally {
    int64_t hits = 0;
    int64_t trials = 0;

    double accuracy() const { return trials ? double(hits) / double(trials) : 0.0; }
};

// One trial per (step, true label); a hit iff the label ranks among the k
// highest scores, ties broken by ascending label index.
std::vector<LabelTally> accuracy_at_k(const std::vector<Eigen::VectorXd>& step_scores,
                                      const std::vector<std::vector<int>>& step_labels,
                                      int k);

struct BinSummary {
    std::array<double, 5> means{};
    std::array<int64_t, 5> counts{};
};

// Labels with at least one trial, ordered by training frequency (ties by
// index), cut into five contiguous bins; remainder goes to the earlier bins.
BinSummary percentile_bins(const std::vector<LabelTally>& tallies,
                           const std::vector<int64_t>& train_freq);

// Mann-Whitney AUC; ties between a positive and a negative count 1/2.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Forward-only evaluation over a set of patients. Sequential reports carry
// accuracy_at_k / bins / label_detail and a null auc; binary reports the
// reverse.
nlohmann::json evaluate_model(const ModelParams& params, const AncestorMap* amap,
                              const std::vector<PatientExample>& examples, Task task,
                              const std::vector<int>& ks,
                              const std::vector<int64_t>& train_label_freq,
                              const std::vector<std::string>& label_names);

// TSV per leaf: name, category (empty when unknown), then the coordinates of
// the leaf's final representation.
void export_embeddings(const ModelParams& params, const AncestorMap* amap,
                       const std::vector<std::string>& leaf_names,
                       const std::unordered_map<std::string, std::string>* categories,
                       const std::string& path);

// JSON array of {leaf, nodes: [{name, weight}]} with the self entry first.
// With drop_root, the root's entry is removed and reported as `residual`,
// leaving the remaining weights unnormalized.
nlohmann::json export_attention(const ModelParams& params, const OntologyDag& dag,
                                const AncestorMap& amap,
                                const std::vector<std::string>& leaf_names, bool drop_root);

}  // namespace gram

#endif
