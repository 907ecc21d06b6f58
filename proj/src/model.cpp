#include "gram/model.hpp"

#include <cmath>

namespace gram {

namespace {

bool is_bias(const std::string& name) {
    return name == "attn_b" || name == "gru_bz" || name == "gru_br" || name == "gru_bh" ||
           name == "out_b";
}

// fan_in + fan_out per tensor, for the uniform init range
int64_t fan_sum(const std::string& name, const ModelDims& d) {
    if (name == "embed") return d.num_nodes + d.embed_dim;
    if (name == "attn_w") return int64_t(d.attn_dim) + 2 * d.embed_dim;
    if (name == "attn_u") return d.attn_dim + 1;
    if (name == "gru_wz" || name == "gru_wr" || name == "gru_wh")
        return d.hidden_dim + d.embed_dim;
    if (name == "gru_uz" || name == "gru_ur" || name == "gru_uh") return 2 * d.hidden_dim;
    if (name == "out_w") return d.num_outputs + d.hidden_dim;
    fail("fan_sum: unknown tensor " + name);
}

double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double clamp_prob(double p) {
    return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
}

}  // namespace

ModelParams ModelParams::zeros(const ModelDims& d) {
    ModelParams p;
    p.dims = d;
    p.embed = Eigen::MatrixXd::Zero(d.num_nodes, d.embed_dim);
    if (d.attention) {
        p.attn_w = Eigen::MatrixXd::Zero(d.attn_dim, 2 * d.embed_dim);
        p.attn_b = Eigen::VectorXd::Zero(d.attn_dim);
        p.attn_u = Eigen::VectorXd::Zero(d.attn_dim);
    }
    p.gru_wz = Eigen::MatrixXd::Zero(d.hidden_dim, d.embed_dim);
    p.gru_wr = Eigen::MatrixXd::Zero(d.hidden_dim, d.embed_dim);
    p.gru_wh = Eigen::MatrixXd::Zero(d.hidden_dim, d.embed_dim);
    p.gru_uz = Eigen::MatrixXd::Zero(d.hidden_dim, d.hidden_dim);
    p.gru_ur = Eigen::MatrixXd::Zero(d.hidden_dim, d.hidden_dim);
    p.gru_uh = Eigen::MatrixXd::Zero(d.hidden_dim, d.hidden_dim);
    p.gru_bz = Eigen::VectorXd::Zero(d.hidden_dim);
    p.gru_br = Eigen::VectorXd::Zero(d.hidden_dim);
    p.gru_bh = Eigen::VectorXd::Zero(d.hidden_dim);
    p.out_w = Eigen::MatrixXd::Zero(d.num_outputs, d.hidden_dim);
    p.out_b = Eigen::VectorXd::Zero(d.num_outputs);
    return p;
}

ModelParams ModelParams::glorot(const ModelDims& d, Rng& rng) {
    ModelParams p = zeros(d);
    visit_tensors(p, [&](const char* name, auto& tensor) {
        if (is_bias(name) || tensor.size() == 0) return;
        const double span = std::sqrt(6.0 / double(fan_sum(name, d)));
        double* data = tensor.data();
        for (int64_t i = 0; i < tensor.size(); ++i) data[i] = rng.uniform(-span, span);
    });
    return p;
}

bool ModelParams::all_finite() const {
    bool ok = true;
    visit_tensors(*this, [&](const char*, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
}

int64_t parameter_count(const ModelDims& dims) {
    int64_t total = 0;
    for (const auto& [name, n] : parameter_breakdown(dims)) total += n;
    return total;
}

std::vector<std::pair<std::string, int64_t>> parameter_breakdown(const ModelDims& dims) {
    ModelParams p = ModelParams::zeros(dims);
    std::vector<std::pair<std::string, int64_t>> out;
    visit_tensors(p, [&](const char* name, const auto& t) { out.emplace_back(name, t.size()); });
    return out;
}

ModelState ModelState::init(const ModelDims& dims, uint64_t seed) {
    ModelState s;
    Rng rng = Rng(seed).derive(0x1017);
    s.params = ModelParams::glorot(dims, rng);
    s.grad_sq_avg = ModelParams::zeros(dims);
    s.delta_sq_avg = ModelParams::zeros(dims);
    s.seed = seed;
    return s;
}

// ---------------------------------------------------------------------------
// attention

double compatibility(const Eigen::VectorXd& child, const Eigen::VectorXd& ancestor,
                     const ModelParams& p) {
    const int m = int(child.size());
    Eigen::VectorXd concat(2 * m);
    concat << child, ancestor;
    return p.attn_u.dot(((p.attn_w * concat) + p.attn_b).array().tanh().matrix());
}

namespace {

// scores -> alpha, max-subtracted
Eigen::VectorXd stable_softmax(const Eigen::VectorXd& scores) {
    const Eigen::ArrayXd shifted = scores.array() - scores.maxCoeff();
    Eigen::ArrayXd e = shifted.exp();
    return (e / e.sum()).matrix();
}

// Per-leaf forward pass of the compatibility MLP and softmax.
void leaf_attention(ConceptId leaf, const ModelParams& p, const AncestorMap& amap,
                    AttentionCache& cache) {
    const auto& support = amap.of(leaf);
    const int k = int(support.size());
    const int m = p.dims.embed_dim;

    Eigen::MatrixXd concat(2 * m, k);
    for (int c = 0; c < k; ++c) {
        concat.col(c).head(m) = p.embed.row(leaf).transpose();
        concat.col(c).tail(m) = p.embed.row(support[c]).transpose();
    }
    cache.hidden = ((p.attn_w * concat).colwise() + p.attn_b).array().tanh().matrix();
    cache.alpha = stable_softmax(cache.hidden.transpose() * p.attn_u);
}

}  // namespace

Eigen::VectorXd attention_weights(ConceptId leaf, const ModelParams& p,
                                  const AncestorMap& amap) {
    AttentionCache cache;
    leaf_attention(leaf, p, amap, cache);
    return cache.alpha;
}

Eigen::VectorXd final_representation(ConceptId leaf, const ModelParams& p,
                                     const AncestorMap& amap) {
    AttentionCache cache;
    leaf_attention(leaf, p, amap, cache);
    const auto& support = amap.of(leaf);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p.dims.embed_dim);
    for (size_t c = 0; c < support.size(); ++c)
        g += cache.alpha[c] * p.embed.row(support[c]).transpose();
    return g;
}

Eigen::MatrixXd embedding_matrix(const ModelParams& p, const AncestorMap* amap,
                                 std::vector<AttentionCache>* caches) {
    const int num_leaves = p.dims.num_leaves;
    if (!p.dims.attention) {
        if (caches) caches->clear();
        return p.embed.transpose();
    }
    if (!amap) fail("embedding_matrix: attention model needs an ancestor map");
    if (amap->num_leaves() != num_leaves) fail("embedding_matrix: ancestor map size mismatch");

    Eigen::MatrixXd g(p.dims.embed_dim, num_leaves);
    if (caches) caches->assign(num_leaves, {});
    AttentionCache local;
    for (ConceptId leaf = 0; leaf < num_leaves; ++leaf) {
        AttentionCache& cache = caches ? (*caches)[leaf] : local;
        leaf_attention(leaf, p, *amap, cache);
        const auto& support = amap->of(leaf);
        g.col(leaf).setZero();
        for (size_t c = 0; c < support.size(); ++c)
            g.col(leaf) += cache.alpha[c] * p.embed.row(support[c]).transpose();
    }
    return g;
}

Eigen::VectorXd visit_representation(const std::vector<ConceptId>& codes,
                                     const Eigen::MatrixXd& g) {
    if (codes.empty()) fail("visit_representation: empty visit");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(g.rows());
    for (ConceptId code : codes) sum += g.col(code);
    return sum.array().tanh();
}

// ---------------------------------------------------------------------------
// recurrence and output

std::vector<Eigen::VectorXd> gru_forward(const std::vector<Eigen::VectorXd>& inputs,
                                         const ModelParams& p, GruCache* cache) {
    if (inputs.empty()) fail("gru_forward: empty input sequence");
    const int r = p.dims.hidden_dim;
    if (cache) {
        cache->v = inputs;
        cache->z.clear();
        cache->r.clear();
        cache->hcand.clear();
        cache->h.clear();
    }
    std::vector<Eigen::VectorXd> hs;
    hs.reserve(inputs.size());
    Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(r);
    for (const auto& v : inputs) {
        Eigen::VectorXd z = (p.gru_wz * v + p.gru_uz * h_prev + p.gru_bz)
                                .unaryExpr([](double x) { return sigmoid(x); });
        Eigen::VectorXd rg = (p.gru_wr * v + p.gru_ur * h_prev + p.gru_br)
                                 .unaryExpr([](double x) { return sigmoid(x); });
        Eigen::VectorXd hc =
            (p.gru_wh * v + p.gru_uh * (rg.array() * h_prev.array()).matrix() + p.gru_bh)
                .array()
                .tanh()
                .matrix();
        Eigen::VectorXd h =
            ((1.0 - z.array()) * h_prev.array() + z.array() * hc.array()).matrix();
        if (cache) {
            cache->z.push_back(z);
            cache->r.push_back(rg);
            cache->hcand.push_back(hc);
            cache->h.push_back(h);
        }
        hs.push_back(h);
        h_prev = std::move(h);
    }
    return hs;
}

Eigen::VectorXd predict(const Eigen::VectorXd& h, const ModelParams& p, Task task) {
    Eigen::VectorXd logits = p.out_w * h + p.out_b;
    if (task == Task::binary) {
        if (logits.size() != 1) fail("predict: binary head must have one output");
        Eigen::VectorXd out(1);
        out[0] = sigmoid(logits[0]);
        return out;
    }
    return stable_softmax(logits);
}

double bce_step_loss(const Eigen::VectorXd& probs, const std::vector<int>& hot) {
    std::vector<bool> is_hot(probs.size(), false);
    for (int idx : hot) {
        if (idx < 0 || idx >= probs.size()) fail("bce_step_loss: label out of range");
        is_hot[idx] = true;
    }
    double loss = 0.0;
    for (int i = 0; i < probs.size(); ++i) {
        const double c = clamp_prob(probs[i]);
        loss -= is_hot[i] ? std::log(c) : std::log(1.0 - c);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// whole-model forward / backward

namespace {

struct PatientCache {
    GruCache gru;
    std::vector<Eigen::VectorXd> probs;  // per prediction step
};

// Input sequence fed to the GRU: for the sequential task the last visit is
// target-only and never an input.
int input_length(const PatientExample& ex, Task task) {
    const int t = int(ex.visits.size());
    if (task == Task::sequential) {
        if (t < 2) fail("sequential patient needs at least two visits");
        if (ex.step_groups.size() != size_t(t - 1))
            fail("sequential patient needs exactly T-1 label steps");
        return t - 1;
    }
    if (t < 1) fail("patient has no visits");
    return t;
}

double patient_forward(const PatientExample& ex, const Eigen::MatrixXd& g,
                       const ModelParams& p, Task task,
                       const std::vector<Eigen::VectorXd>* masks, PatientCache* cache) {
    const int t_in = input_length(ex, task);
    std::vector<Eigen::VectorXd> inputs;
    inputs.reserve(t_in);
    for (int t = 0; t < t_in; ++t) inputs.push_back(visit_representation(ex.visits[t], g));
    std::vector<Eigen::VectorXd> hs = gru_forward(inputs, p, cache ? &cache->gru : nullptr);

    if (cache) cache->probs.clear();
    if (task == Task::binary) {
        Eigen::VectorXd h = hs.back();
        if (masks) h = h.cwiseProduct((*masks)[0]);
        Eigen::VectorXd probs = predict(h, p, task);
        if (cache) cache->probs.push_back(probs);
        return bce_step_loss(probs, ex.flag ? std::vector<int>{0} : std::vector<int>{});
    }

    double loss = 0.0;
    for (int s = 0; s < t_in; ++s) {
        Eigen::VectorXd h = hs[s];
        if (masks) h = h.cwiseProduct((*masks)[s]);
        Eigen::VectorXd probs = predict(h, p, task);
        if (cache) cache->probs.push_back(probs);
        loss += bce_step_loss(probs, ex.step_groups[s]);
    }
    return loss / double(t_in);
}

// d(bce)/d(prob), honoring the clamp (zero slope outside it).
double bce_prob_grad(double prob, bool hot) {
    if (prob < kProbClamp || prob > 1.0 - kProbClamp) return 0.0;
    return hot ? -1.0 / prob : 1.0 / (1.0 - prob);
}

}  // namespace

double batch_loss(const Batch& batch, const ModelParams& p, const AncestorMap* amap,
                  Task task, const DropoutMasks* masks) {
    if (batch.empty()) fail("empty batch");
    const Eigen::MatrixXd g = embedding_matrix(p, amap);
    double total = 0.0;
    for (size_t i = 0; i < batch.size(); ++i)
        total += patient_forward(*batch[i], g, p, task, masks ? &(*masks)[i] : nullptr,
                                 nullptr);
    return total / double(batch.size());
}

ModelParams batch_gradients(const Batch& batch, const ModelParams& p,
                            const AncestorMap* amap, Task task, const DropoutMasks* masks,
                            double* loss_out) {
    if (batch.empty()) fail("empty batch");
    const int m = p.dims.embed_dim;

    std::vector<AttentionCache> attn_caches;
    const Eigen::MatrixXd g =
        embedding_matrix(p, amap, p.dims.attention ? &attn_caches : nullptr);

    ModelParams grads = ModelParams::zeros(p.dims);
    Eigen::MatrixXd dg = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    double total_loss = 0.0;
    const double patient_weight = 1.0 / double(batch.size());

    for (size_t pi = 0; pi < batch.size(); ++pi) {
        const PatientExample& ex = *batch[pi];
        const std::vector<Eigen::VectorXd>* pmasks = masks ? &(*masks)[pi] : nullptr;
        PatientCache cache;
        total_loss += patient_forward(ex, g, p, task, pmasks, &cache);

        const int t_in = input_length(ex, task);
        const int num_steps = int(cache.probs.size());
        const double step_weight =
            task == Task::sequential ? patient_weight / double(t_in) : patient_weight;

        // output layer
        std::vector<Eigen::VectorXd> dh(t_in, Eigen::VectorXd::Zero(p.dims.hidden_dim));
        for (int s = 0; s < num_steps; ++s) {
            const int h_index = task == Task::binary ? t_in - 1 : s;
            const Eigen::VectorXd& probs = cache.probs[s];

            Eigen::VectorXd dprob(probs.size());
            if (task == Task::binary) {
                dprob[0] = step_weight * bce_prob_grad(probs[0], ex.flag != 0);
            } else {
                std::vector<bool> hot(probs.size(), false);
                for (int idx : ex.step_groups[s]) hot[idx] = true;
                for (int i = 0; i < probs.size(); ++i)
                    dprob[i] = step_weight * bce_prob_grad(probs[i], hot[i]);
            }

            Eigen::VectorXd dlogits;
            if (task == Task::binary) {
                dlogits.resize(1);
                dlogits[0] = dprob[0] * probs[0] * (1.0 - probs[0]);
            } else {
                const double dot = probs.dot(dprob);
                dlogits = (probs.array() * (dprob.array() - dot)).matrix();
            }

            Eigen::VectorXd h_used = cache.gru.h[h_index];
            if (pmasks) h_used = h_used.cwiseProduct((*pmasks)[s]);
            grads.out_w.noalias() += dlogits * h_used.transpose();
            grads.out_b += dlogits;
            Eigen::VectorXd dh_step = p.out_w.transpose() * dlogits;
            if (pmasks) dh_step = dh_step.cwiseProduct((*pmasks)[s]);
            dh[h_index] += dh_step;
        }

        // GRU backward through time
        Eigen::VectorXd carry = Eigen::VectorXd::Zero(p.dims.hidden_dim);
        for (int t = t_in - 1; t >= 0; --t) {
            const Eigen::VectorXd dht = dh[t] + carry;
            const Eigen::VectorXd& z = cache.gru.z[t];
            const Eigen::VectorXd& rg = cache.gru.r[t];
            const Eigen::VectorXd& hc = cache.gru.hcand[t];
            const Eigen::VectorXd& v = cache.gru.v[t];
            const Eigen::VectorXd h_prev = t > 0
                                               ? cache.gru.h[t - 1]
                                               : Eigen::VectorXd::Zero(p.dims.hidden_dim);

            const Eigen::VectorXd dhc = dht.cwiseProduct(z);
            const Eigen::VectorXd dz = dht.cwiseProduct(hc - h_prev);
            Eigen::VectorXd dprev = dht.cwiseProduct(Eigen::VectorXd::Ones(z.size()) - z);

            const Eigen::VectorXd da_h =
                (dhc.array() * (1.0 - hc.array().square())).matrix();
            const Eigen::VectorXd rh = rg.cwiseProduct(h_prev);
            grads.gru_wh.noalias() += da_h * v.transpose();
            grads.gru_uh.noalias() += da_h * rh.transpose();
            grads.gru_bh += da_h;
            Eigen::VectorXd dv = p.gru_wh.transpose() * da_h;
            const Eigen::VectorXd drh = p.gru_uh.transpose() * da_h;
            const Eigen::VectorXd dr = drh.cwiseProduct(h_prev);
            dprev += drh.cwiseProduct(rg);

            const Eigen::VectorXd da_z =
                (dz.array() * z.array() * (1.0 - z.array())).matrix();
            grads.gru_wz.noalias() += da_z * v.transpose();
            grads.gru_uz.noalias() += da_z * h_prev.transpose();
            grads.gru_bz += da_z;
            dv.noalias() += p.gru_wz.transpose() * da_z;
            dprev.noalias() += p.gru_uz.transpose() * da_z;

            const Eigen::VectorXd da_r =
                (dr.array() * rg.array() * (1.0 - rg.array())).matrix();
            grads.gru_wr.noalias() += da_r * v.transpose();
            grads.gru_ur.noalias() += da_r * h_prev.transpose();
            grads.gru_br += da_r;
            dv.noalias() += p.gru_wr.transpose() * da_r;
            dprev.noalias() += p.gru_ur.transpose() * da_r;

            // through v_t = tanh(sum of g columns)
            const Eigen::VectorXd du = dv.array() * (1.0 - v.array().square());
            for (ConceptId code : ex.visits[t]) dg.col(code) += du;

            carry = dprev;
        }
    }

    // attention backward, once for the whole batch
    if (!p.dims.attention) {
        grads.embed += dg.transpose();
    } else {
        for (ConceptId leaf = 0; leaf < p.dims.num_leaves; ++leaf) {
            if (dg.col(leaf).isZero(0.0)) continue;
            const auto& support = amap->of(leaf);
            const int k = int(support.size());
            const AttentionCache& cache = attn_caches[leaf];
            const Eigen::VectorXd dgi = dg.col(leaf);

            Eigen::VectorXd dalpha(k);
            for (int c = 0; c < k; ++c) {
                dalpha[c] = dgi.dot(p.embed.row(support[c]));
                grads.embed.row(support[c]) += cache.alpha[c] * dgi.transpose();
            }
            const double mix = cache.alpha.dot(dalpha);
            const Eigen::VectorXd dscore =
                (cache.alpha.array() * (dalpha.array() - mix)).matrix();

            grads.attn_u.noalias() += cache.hidden * dscore;
            const Eigen::MatrixXd dpre =
                ((p.attn_u * dscore.transpose()).array() *
                 (1.0 - cache.hidden.array().square()))
                    .matrix();

            Eigen::MatrixXd concat(2 * m, k);
            for (int c = 0; c < k; ++c) {
                concat.col(c).head(m) = p.embed.row(leaf).transpose();
                concat.col(c).tail(m) = p.embed.row(support[c]).transpose();
            }
            grads.attn_w.noalias() += dpre * concat.transpose();
            grads.attn_b += dpre.rowwise().sum();

            const Eigen::MatrixXd dconcat = p.attn_w.transpose() * dpre;
            for (int c = 0; c < k; ++c) {
                grads.embed.row(leaf) += dconcat.col(c).head(m).transpose();
                grads.embed.row(support[c]) += dconcat.col(c).tail(m).transpose();
            }
        }
    }

    visit_tensors(grads, [](const char* name, const auto& t) {
        if (!t.allFinite()) fail(std::string("non-finite gradient in ") + name);
    });

    if (loss_out) *loss_out = total_loss / double(batch.size());
    return grads;
}

void adadelta_step(ModelState& state, const ModelParams& grads, double rho,
                   double epsilon) {
    auto views = [](ModelParams& p) {
        std::vector<std::pair<double*, int64_t>> out;
        visit_tensors(p, [&](const char*, auto& t) { out.emplace_back(t.data(), t.size()); });
        return out;
    };
    auto const_views = [](const ModelParams& p) {
        std::vector<std::pair<const double*, int64_t>> out;
        visit_tensors(p, [&](const char*, const auto& t) { out.emplace_back(t.data(), t.size()); });
        return out;
    };

    auto theta = views(state.params);
    auto gsq = views(state.grad_sq_avg);
    auto dsq = views(state.delta_sq_avg);
    auto grad = const_views(grads);

    for (size_t t = 0; t < theta.size(); ++t) {
        double* x = theta[t].first;
        double* eg = gsq[t].first;
        double* ed = dsq[t].first;
        const double* g = grad[t].first;
        for (int64_t i = 0; i < theta[t].second; ++i) {
            eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
            const double delta = -std::sqrt(ed[i] + epsilon) / std::sqrt(eg[i] + epsilon) * g[i];
            ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
            x[i] += delta;
        }
    }
}

}  // namespace gram
