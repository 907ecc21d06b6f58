#include "gram/glove.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace gram {

double glove_weight(double x, double x_max, double alpha) {
    if (x < 0) fail("glove_weight: negative count");
    if (x_max <= 0) fail("glove_weight: x_max must be positive");
    if (x >= x_max) return 1.0;
    return std::pow(x / x_max, alpha);
}

double glove_loss(const SparseCooccurrence& m, const BasicEmbeddings& emb,
                  const GloveConfig& config) {
    double loss = 0.0;
    for (const auto& [key, value] : m.entries()) {
        const auto [i, j] = key;
        const double diff = emb.vectors.row(i).dot(emb.vectors.row(j)) + emb.bias[i] +
                            emb.bias[j] - std::log(value);
        loss += glove_weight(value, config.x_max, config.alpha) * diff * diff;
    }
    return loss;
}

BasicEmbeddings glove_fit(const SparseCooccurrence& m, int embed_dim,
                          const GloveConfig& config) {
    if (m.entries().empty()) fail("glove_fit: empty co-occurrence matrix");
    if (embed_dim < 1) fail("glove_fit: embedding dim must be >= 1");

    const int n = m.dim();
    BasicEmbeddings emb;
    emb.vectors.resize(n, embed_dim);
    emb.bias = Eigen::VectorXd::Zero(n);
    Rng rng(config.seed);
    const double span = 0.5 / double(embed_dim);
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < embed_dim; ++d) emb.vectors(i, d) = rng.uniform(-span, span);

    // Adagrad accumulators start at 1 so the first step is plain lr * grad.
    Eigen::MatrixXd vec_accum = Eigen::MatrixXd::Ones(n, embed_dim);
    Eigen::VectorXd bias_accum = Eigen::VectorXd::Ones(n);

    Eigen::VectorXd grad_i(embed_dim), grad_j(embed_dim);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& [key, value] : m.entries()) {
            const auto [i, j] = key;
            const double diff = emb.vectors.row(i).dot(emb.vectors.row(j)) + emb.bias[i] +
                                emb.bias[j] - std::log(value);
            const double fdiff = 2.0 * glove_weight(value, config.x_max, config.alpha) * diff;

            grad_i = fdiff * emb.vectors.row(j).transpose();
            grad_j = fdiff * emb.vectors.row(i).transpose();
            emb.vectors.row(i).array() -=
                config.learning_rate * grad_i.array().transpose() /
                vec_accum.row(i).array().sqrt();
            emb.vectors.row(j).array() -=
                config.learning_rate * grad_j.array().transpose() /
                vec_accum.row(j).array().sqrt();
            vec_accum.row(i).array() += grad_i.array().square().transpose();
            vec_accum.row(j).array() += grad_j.array().square().transpose();

            emb.bias[i] -= config.learning_rate * fdiff / std::sqrt(bias_accum[i]);
            emb.bias[j] -= config.learning_rate * fdiff / std::sqrt(bias_accum[j]);
            bias_accum[i] += fdiff * fdiff;
            bias_accum[j] += fdiff * fdiff;
        }
        if (!emb.vectors.allFinite() || !emb.bias.allFinite())
            fail("glove_fit: non-finite values at epoch " + std::to_string(epoch));
    }
    return emb;
}

BasicEmbeddings glove_fit_leaf_only(const std::vector<PatientRecord>& records,
                                    int num_leaves, int embed_dim,
                                    const GloveConfig& config) {
    return glove_fit(build_cooccurrence_leaf_only(records, num_leaves), embed_dim, config);
}

void save_embeddings_tsv(const BasicEmbeddings& emb, const std::vector<std::string>& names,
                         const std::string& path) {
    if (int(names.size()) != emb.num_nodes())
        fail("save_embeddings_tsv: name list does not match the embedding rows");
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail("cannot write embeddings " + path);
    char buf[64];
    for (int node = 0; node < emb.num_nodes(); ++node) {
        out << names[size_t(node)];
        for (int d = 0; d < emb.dim(); ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g", emb.vectors(node, d));
            out << '\t' << buf;
        }
        out << '\n';
    }
    if (!out) fail("write failed for embeddings " + path);
}

}  // namespace gram
