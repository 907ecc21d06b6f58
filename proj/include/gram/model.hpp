#ifndef GRAM_MODEL_HPP
#define GRAM_MODEL_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gram/common.hpp"
#include "gram/ontology.hpp"

namespace gram {

enum class Task { sequential, binary };

// Shapes of everything trainable. `attention` selects between attention-combined
// final representations over a DAG and a plain embedding lookup (the RNN
// baselines); when false, num_nodes == num_leaves and attn_dim is ignored.
struct ModelDims {
    int num_nodes = 0;    // |D|, rows of the basic embedding matrix
    int num_leaves = 0;   // |C|, input vocabulary
    int embed_dim = 0;    // m
    int attn_dim = 0;     // l, hidden width of the compatibility MLP
    int hidden_dim = 0;   // r
    int num_outputs = 0;  // L label groups (1 for the binary task)
    bool attention = true;

    bool operator==(const ModelDims&) const = default;
};

struct ModelParams {
    ModelDims dims;

    Eigen::MatrixXd embed;                    // num_nodes x m
    Eigen::MatrixXd attn_w;                   // l x 2m
    Eigen::VectorXd attn_b, attn_u;           // l
    Eigen::MatrixXd gru_wz, gru_wr, gru_wh;   // r x m
    Eigen::MatrixXd gru_uz, gru_ur, gru_uh;   // r x r
    Eigen::VectorXd gru_bz, gru_br, gru_bh;   // r
    Eigen::MatrixXd out_w;                    // L x r
    Eigen::VectorXd out_b;                    // L

    static ModelParams zeros(const ModelDims& dims);
    // Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)) for matrices,
    // zeros for biases.
    static ModelParams glorot(const ModelDims& dims, Rng& rng);

    bool all_finite() const;
};

// Applies fn(name, tensor) to every trainable tensor in a fixed order.
// Attention tensors are skipped for non-attention models.
template <class Params, class Fn>
void visit_tensors(Params& p, Fn&& fn) {
    fn("embed", p.embed);
    if (p.dims.attention) {
        fn("attn_w", p.attn_w);
        fn("attn_b", p.attn_b);
        fn("attn_u", p.attn_u);
    }
    fn("gru_wz", p.gru_wz);
    fn("gru_uz", p.gru_uz);
    fn("gru_bz", p.gru_bz);
    fn("gru_wr", p.gru_wr);
    fn("gru_ur", p.gru_ur);
    fn("gru_br", p.gru_br);
    fn("gru_wh", p.gru_wh);
    fn("gru_uh", p.gru_uh);
    fn("gru_bh", p.gru_bh);
    fn("out_w", p.out_w);
    fn("out_b", p.out_b);
}

int64_t parameter_count(const ModelDims& dims);
std::vector<std::pair<std::string, int64_t>> parameter_breakdown(const ModelDims& dims);

// Trainable parameters plus the Adadelta running averages, one step of
// training away from everything else.
struct ModelState {
    ModelParams params;
    ModelParams grad_sq_avg;
    ModelParams delta_sq_avg;
    uint64_t seed = 0;
    int64_t epoch = 0;

    static ModelState init(const ModelDims& dims, uint64_t seed);
};

// ---------------------------------------------------------------------------
// forward pieces

// u_a' tanh(W_a [child; ancestor] + b_a), concatenated child first.
double compatibility(const Eigen::VectorXd& child, const Eigen::VectorXd& ancestor,
                     const ModelParams& p);

// Softmax of the compatibility scores over A(leaf), max-subtracted.
Eigen::VectorXd attention_weights(ConceptId leaf, const ModelParams& p,
                                  const AncestorMap& amap);

// g_i: the attention-convex combination of basic embeddings over A(leaf).
Eigen::VectorXd final_representation(ConceptId leaf, const ModelParams& p,
                                     const AncestorMap& amap);

struct AttentionCache {
    Eigen::MatrixXd hidden;  // l x |A(i)|, tanh activations of the MLP
    Eigen::VectorXd alpha;   // |A(i)|
};

// Column i is the final representation of leaf i (m x |C|). For non-attention
// models this is just the transposed embedding table; amap may be null then.
Eigen::MatrixXd embedding_matrix(const ModelParams& p, const AncestorMap* amap,
                                 std::vector<AttentionCache>* caches = nullptr);

// tanh of the summed final representations of the visit's codes.
Eigen::VectorXd visit_representation(const std::vector<ConceptId>& codes,
                                     const Eigen::MatrixXd& g);

struct GruCache {
    std::vector<Eigen::VectorXd> v, z, r, hcand, h;
};

// Single-layer GRU from h_0 = 0; returns all hidden states, caching gate
// activations when a cache is supplied.
std::vector<Eigen::VectorXd> gru_forward(const std::vector<Eigen::VectorXd>& inputs,
                                         const ModelParams& p, GruCache* cache = nullptr);

// Softmax over the L outputs (sequential) or a sigmoid scalar (binary).
Eigen::VectorXd predict(const Eigen::VectorXd& h, const ModelParams& p, Task task);

// Probabilities are clamped to [eps, 1-eps] before the logs.
constexpr double kProbClamp = 1e-8;

// Binary cross entropy of one step, summed over outputs.
double bce_step_loss(const Eigen::VectorXd& probs, const std::vector<int>& hot);

// ---------------------------------------------------------------------------
// whole-model loss and gradients

struct PatientExample {
    std::vector<std::vector<ConceptId>> visits;  // input code ids per visit
    std::vector<std::vector<int>> step_groups;   // sequential targets, T-1 entries
    int flag = 0;                                // binary target
};

using Batch = std::vector<const PatientExample*>;
// Per patient, per prediction step: elementwise output-dropout mask on h_t
// (entries 0 or 1/keep). Null masks mean no dropout.
using DropoutMasks = std::vector<std::vector<Eigen::VectorXd>>;

// Mean per-patient loss; each patient's loss is itself averaged over its
// prediction steps.
double batch_loss(const Batch& batch, const ModelParams& p, const AncestorMap* amap,
                  Task task, const DropoutMasks* masks = nullptr);

// Analytic gradients of batch_loss for every trainable tensor.
ModelParams batch_gradients(const Batch& batch, const ModelParams& p,
                            const AncestorMap* amap, Task task,
                            const DropoutMasks* masks = nullptr,
                            double* loss_out = nullptr);

// Standard Adadelta update, in place.
void adadelta_step(ModelState& state, const ModelParams& grads, double rho = 0.95,
                   double epsilon = 1e-6);

// ---------------------------------------------------------------------------
// checkpoint

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace gram

#endif
