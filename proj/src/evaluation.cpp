#include "gram/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace gram {

std::vector<LabelTally> accuracy_at_k(const std::vector<Eigen::VectorXd>& step_scores,
                                      const std::vector<std::vector<int>>& step_labels,
                                      int k) {
    if (step_scores.size() != step_labels.size())
        fail("accuracy_at_k: score/label step counts differ");
    if (step_scores.empty()) fail("accuracy_at_k: no steps");
    const int num_labels = int(step_scores.front().size());
    if (k < 1) fail("accuracy_at_k: k must be >= 1");
    if (k > num_labels) fail("accuracy_at_k: k exceeds the number of labels");

    std::vector<LabelTally> tallies(num_labels);
    std::vector<int> order(num_labels);
    std::vector<char> in_top(num_labels);
    for (size_t s = 0; s < step_scores.size(); ++s) {
        const Eigen::VectorXd& scores = step_scores[s];
        if (int(scores.size()) != num_labels) fail("accuracy_at_k: ragged score vectors");
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        });
        std::fill(in_top.begin(), in_top.end(), 0);
        for (int i = 0; i < k; ++i) in_top[order[i]] = 1;

        for (int label : step_labels[s]) {
            if (label < 0 || label >= num_labels) fail("accuracy_at_k: label out of range");
            tallies[label].trials++;
            if (in_top[label]) tallies[label].hits++;
        }
    }
    return tallies;
}

BinSummary percentile_bins(const std::vector<LabelTally>& tallies,
                           const std::vector<int64_t>& train_freq) {
    if (tallies.size() != train_freq.size())
        fail("percentile_bins: frequency table does not match the label space");
    std::vector<int> trialed;
    for (size_t i = 0; i < tallies.size(); ++i)
        if (tallies[i].trials > 0) trialed.push_back(int(i));
    if (trialed.size() < 5)
        fail("percentile_bins: need at least 5 trialed labels");
    std::sort(trialed.begin(), trialed.end(), [&](int a, int b) {
        if (train_freq[a] != train_freq[b]) return train_freq[a] < train_freq[b];
        return a < b;
    });

    BinSummary out;
    const size_t base = trialed.size() / 5, rem = trialed.size() % 5;
    size_t pos = 0;
    for (size_t bin = 0; bin < 5; ++bin) {
        const size_t size = base + (bin < rem ? 1 : 0);
        double sum = 0;
        for (size_t i = 0; i < size; ++i) sum += tallies[trialed[pos + i]].accuracy();
        out.means[bin] = sum / double(size);
        out.counts[bin] = int64_t(size);
        pos += size;
    }
    return out;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) fail("auc: score/label counts differ");
    int64_t pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) fail("auc: needs at least one positive and one negative");

    // average ranks over tie groups, then the Mann-Whitney statistic
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = double(i + 1 + j) / 2.0;  // 1-based ranks i+1 .. j
        for (size_t t = i; t < j; ++t)
            if (labels[order[t]]) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - double(pos) * double(pos + 1) / 2.0;
    return u / (double(pos) * double(neg));
}

namespace {

std::string k_key(int k) { return std::to_string(k); }

}  // namespace

nlohmann::json evaluate_model(const ModelParams& params, const AncestorMap* amap,
                              const std::vector<PatientExample>& examples, Task task,
                              const std::vector<int>& ks,
                              const std::vector<int64_t>& train_label_freq,
                              const std::vector<std::string>& label_names) {
    if (examples.empty()) fail("evaluate_model: no examples");
    const Eigen::MatrixXd g = embedding_matrix(params, amap);

    nlohmann::json report;
    report["task"] = task == Task::binary ? "binary" : "sequential";
    report["accuracy_at_k"] = nlohmann::json::object();
    report["bins"] = nlohmann::json::object();
    report["auc"] = nullptr;
    report["label_detail"] = nlohmann::json::array();

    if (task == Task::binary) {
        std::vector<double> scores;
        std::vector<int> flags;
        scores.reserve(examples.size());
        for (const PatientExample& ex : examples) {
            std::vector<Eigen::VectorXd> inputs;
            inputs.reserve(ex.visits.size());
            for (const auto& codes : ex.visits) inputs.push_back(visit_representation(codes, g));
            const auto hs = gru_forward(inputs, params);
            scores.push_back(predict(hs.back(), params, task)[0]);
            flags.push_back(ex.flag);
        }
        report["auc"] = auc(scores, flags);
        return report;
    }

    std::vector<int> sorted_ks = ks;
    std::sort(sorted_ks.begin(), sorted_ks.end());
    sorted_ks.erase(std::unique(sorted_ks.begin(), sorted_ks.end()), sorted_ks.end());
    if (sorted_ks.empty()) fail("evaluate_model: no k values");

    std::vector<Eigen::VectorXd> step_scores;
    std::vector<std::vector<int>> step_labels;
    for (const PatientExample& ex : examples) {
        std::vector<Eigen::VectorXd> inputs;
        inputs.reserve(ex.visits.size() - 1);
        for (size_t t = 0; t + 1 < ex.visits.size(); ++t)
            inputs.push_back(visit_representation(ex.visits[t], g));
        const auto hs = gru_forward(inputs, params);
        for (size_t s = 0; s < hs.size(); ++s) {
            step_scores.push_back(predict(hs[s], params, task));
            step_labels.push_back(ex.step_groups[s]);
        }
    }

    const int num_labels = int(step_scores.front().size());
    if (int(train_label_freq.size()) != num_labels || int(label_names.size()) != num_labels)
        fail("evaluate_model: label metadata does not match the label space");

    std::map<int, std::vector<LabelTally>> tallies_by_k;
    for (int k : sorted_ks) {
        auto tallies = accuracy_at_k(step_scores, step_labels, k);
        double acc_sum = 0;
        int64_t trialed = 0;
        for (const LabelTally& t : tallies)
            if (t.trials > 0) {
                acc_sum += t.accuracy();
                ++trialed;
            }
        report["accuracy_at_k"][k_key(k)] = acc_sum / double(trialed);
        const BinSummary bins = percentile_bins(tallies, train_label_freq);
        report["bins"][k_key(k)] = {{"means", bins.means}, {"counts", bins.counts}};
        tallies_by_k.emplace(k, std::move(tallies));
    }

    for (int label = 0; label < num_labels; ++label) {
        if (tallies_by_k.begin()->second[label].trials == 0) continue;
        nlohmann::json entry;
        entry["name"] = label_names[label];
        entry["train_frequency"] = train_label_freq[label];
        entry["trials"] = tallies_by_k.begin()->second[label].trials;
        nlohmann::json hits = nlohmann::json::object();
        nlohmann::json accuracy = nlohmann::json::object();
        for (const auto& [k, tallies] : tallies_by_k) {
            hits[k_key(k)] = tallies[label].hits;
            accuracy[k_key(k)] = tallies[label].accuracy();
        }
        entry["hits"] = std::move(hits);
        entry["accuracy"] = std::move(accuracy);
        report["label_detail"].push_back(std::move(entry));
    }
    return report;
}

void export_embeddings(const ModelParams& params, const AncestorMap* amap,
                       const std::vector<std::string>& leaf_names,
                       const std::unordered_map<std::string, std::string>* categories,
                       const std::string& path) {
    const Eigen::MatrixXd g = embedding_matrix(params, amap);
    if (int(leaf_names.size()) != g.cols())
        fail("export_embeddings: name list does not match the input vocabulary");

    std::ofstream out(path, std::ios::trunc);
    if (!out) fail("cannot write embeddings " + path);
    char buf[64];
    for (int leaf = 0; leaf < g.cols(); ++leaf) {
        out << leaf_names[size_t(leaf)] << '\t';
        if (categories) {
            auto it = categories->find(leaf_names[size_t(leaf)]);
            if (it != categories->end()) out << it->second;
        }
        for (int d = 0; d < g.rows(); ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g", g(d, leaf));
            out << '\t' << buf;
        }
        out << '\n';
    }
    if (!out) fail("write failed for embeddings " + path);
}

nlohmann::json export_attention(const ModelParams& params, const OntologyDag& dag,
                                const AncestorMap& amap,
                                const std::vector<std::string>& leaf_names, bool drop_root) {
    if (!params.dims.attention) fail("attention export needs an attention model");
    nlohmann::json out = nlohmann::json::array();
    for (const std::string& name : leaf_names) {
        const ConceptId leaf = dag.find(name);
        if (leaf < 0 || !dag.is_leaf(leaf)) fail("unknown leaf '" + name + "'");
        const Eigen::VectorXd alpha = attention_weights(leaf, params, amap);
        const auto& support = amap.of(leaf);

        nlohmann::json nodes = nlohmann::json::array();
        double residual = 0;
        for (size_t i = 0; i < support.size(); ++i) {
            if (drop_root && support[i] == dag.root) {
                residual = alpha[Eigen::Index(i)];
                continue;
            }
            nodes.push_back({{"name", dag.names[size_t(support[i])]},
                             {"weight", alpha[Eigen::Index(i)]}});
        }
        nlohmann::json entry = {{"leaf", name}, {"nodes", std::move(nodes)}};
        if (drop_root) entry["residual"] = residual;
        out.push_back(std::move(entry));
    }
    return out;
}

}  // namespace gram
