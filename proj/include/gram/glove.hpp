#ifndef GRAM_GLOVE_HPP
#define GRAM_GLOVE_HPP

#include <Eigen/Dense>

#include "gram/cooccurrence.hpp"

namespace gram {

// Basic embedding vectors for every DAG node, plus the per-node bias used
// only while fitting the co-occurrence objective.
struct BasicEmbeddings {
    Eigen::MatrixXd vectors;  // nodes x m
    Eigen::VectorXd bias;     // nodes

    int dim() const { return int(vectors.cols()); }
    int num_nodes() const { return int(vectors.rows()); }
};

struct GloveConfig {
    int epochs = 50;
    double learning_rate = 0.05;  // adagrad initial step
    uint64_t seed = 0;
    double x_max = 100.0;
    double alpha = 0.75;
};

// min((x / x_max)^alpha, 1); 0 at x = 0.
double glove_weight(double x, double x_max, double alpha);

// J = sum over stored pairs of f(M_ij) (e_i . e_j + b_i + b_j - log M_ij)^2
double glove_loss(const SparseCooccurrence& m, const BasicEmbeddings& emb,
                  const GloveConfig& config);

// Adagrad passes over the stored pairs in fixed sorted order. Coordinates are
// initialized uniform in [-0.5/m, 0.5/m]; with zero epochs that
// initialization is returned unchanged.
BasicEmbeddings glove_fit(const SparseCooccurrence& m, int embed_dim,
                          const GloveConfig& config);

// RNN+ style initialization: co-occurrence over raw visits restricted to
// leaves, then the same fit.
BasicEmbeddings glove_fit_leaf_only(const std::vector<PatientRecord>& records,
                                    int num_leaves, int embed_dim, const GloveConfig& config);

// TSV `node_name<TAB>v1<TAB>...<TAB>vm`, one row per node.
void save_embeddings_tsv(const BasicEmbeddings& emb, const std::vector<std::string>& names,
                         const std::string& path);

}  // namespace gram

#endif
