// Command-line front end: synthetic data generation, co-occurrence and
// embedding pre-training, model training, evaluation and exports. Every
// subcommand prints a one-line JSON summary on success.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <string>

#include "gram/cooccurrence.hpp"
#include "gram/evaluation.hpp"
#include "gram/glove.hpp"
#include "gram/model.hpp"
#include "gram/synth.hpp"
#include "gram/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void emit(const json& summary) { std::cout << summary.dump() << std::endl; }

gram::TrainConfig resolve_config(const std::string& config_path,
                                 const std::map<std::string, std::string>& overrides) {
    gram::TrainConfig cfg;
    if (!config_path.empty()) cfg = gram::load_config_file(config_path, cfg);
    cfg = gram::config_from_kv(overrides, cfg);
    cfg.validate();
    return cfg;
}

// Shared --config plus per-field overrides, all funneled through the
// key=value parser so flags always win over the file.
void add_config_options(CLI::App* cmd, std::string& config_path,
                        std::map<std::string, std::string>& overrides) {
    cmd->add_option("--config", config_path, "key=value config file");
    auto kv = [&overrides, cmd](const char* flag, const char* key, const char* desc) {
        cmd->add_option_function<std::string>(
            flag, [&overrides, key](const std::string& v) { overrides[key] = v; }, desc);
    };
    kv("--seed", "seed", "master random seed");
    kv("--model", "model_kind", "gram|random_dag|rnn|simple_rollup|rollup_rare");
    kv("--init", "init_mode", "random|glove_augmented|glove_leaf_only");
    kv("--task", "task", "sequential|binary");
    kv("--threshold", "rollup_threshold", "rare-code threshold for rollup_rare");
    kv("--m", "m", "embedding width");
    kv("--r", "r", "recurrent hidden width");
    kv("--l", "l", "attention MLP width");
    kv("--l2", "l2_coeff", "L2 coefficient");
    kv("--dropout", "dropout_rate", "dropout rate on the hidden layer");
    kv("--batch", "batch_size", "mini-batch size");
    kv("--epochs", "max_epochs", "maximum training epochs");
    kv("--patience", "patience", "early-stopping patience");
    kv("--glove-epochs", "glove_epochs", "epochs of the embedding pre-phase");
}

gram::ModelState load_matching_checkpoint(const std::string& path,
                                          const gram::PreparedData& prep) {
    gram::ModelState state = gram::load_checkpoint(path);
    if (!(state.params.dims == prep.dims))
        gram::fail("checkpoint " + path + " was trained with a different configuration");
    return state;
}

// ---------------------------------------------------------------------------

struct GenSynthArgs {
    std::string out;
    gram::SynthConfig config;
};

int run_gen_synth(const GenSynthArgs& args) {
    gram::SynthDataset data = gram::generate(args.config);
    gram::write_dataset(data, args.out);
    json summary = gram::describe(data.records);
    summary["command"] = "gen-synth";
    summary["out"] = args.out;
    summary["num_leaves"] = data.dag.num_leaves;
    summary["num_groups"] = data.groups.num_groups();
    summary["seed"] = args.config.seed;
    emit(summary);
    return 0;
}

struct BuildCoocArgs {
    std::string data, out, mode = "augmented";
};

int run_build_cooc(const BuildCoocArgs& args) {
    gram::OntologyDag dag = gram::parse_ontology((fs::path(args.data) / "ontology.tsv").string());
    gram::LoadedRecords loaded =
        gram::load_records((fs::path(args.data) / "records.csv").string(), dag);

    gram::SparseCooccurrence cooc(0);
    if (args.mode == "augmented") {
        gram::AncestorMap amap = gram::AncestorMap::build(dag);
        cooc = gram::build_cooccurrence(loaded.records, amap, dag.num_nodes());
    } else if (args.mode == "leaf") {
        cooc = gram::build_cooccurrence_leaf_only(loaded.records, dag.num_leaves);
    } else {
        gram::fail("unknown co-occurrence mode '" + args.mode + "' (augmented|leaf)");
    }
    cooc.save(args.out);

    emit({{"command", "build-cooc"},
          {"mode", args.mode},
          {"dim", cooc.dim()},
          {"entries", cooc.entries().size()},
          {"out", args.out}});
    return 0;
}

struct InitEmbeddingsArgs {
    std::string cooc, data, out;
    int dim = 100;
    int epochs = 50;
    uint64_t seed = 1;
};

int run_init_embeddings(const InitEmbeddingsArgs& args) {
    gram::SparseCooccurrence cooc = gram::SparseCooccurrence::load(args.cooc);
    gram::OntologyDag dag = gram::parse_ontology((fs::path(args.data) / "ontology.tsv").string());

    std::vector<std::string> names;
    if (cooc.dim() == dag.num_nodes()) {
        names = dag.names;
    } else if (cooc.dim() == dag.num_leaves) {
        names.assign(dag.names.begin(), dag.names.begin() + dag.num_leaves);
    } else {
        gram::fail("co-occurrence dimension matches neither the DAG nor its leaf set");
    }

    gram::GloveConfig gcfg;
    gcfg.epochs = args.epochs;
    gcfg.seed = args.seed;
    gram::BasicEmbeddings emb = gram::glove_fit(cooc, args.dim, gcfg);
    const double final_loss = gram::glove_loss(cooc, emb, gcfg);
    gram::save_embeddings_tsv(emb, names, args.out);

    emit({{"command", "init-embeddings"},
          {"nodes", emb.num_nodes()},
          {"dim", emb.dim()},
          {"epochs", args.epochs},
          {"loss", final_loss},
          {"out", args.out}});
    return 0;
}

struct TrainArgs {
    std::string data, out, config_path;
    std::map<std::string, std::string> overrides;
};

int run_train(const TrainArgs& args) {
    const gram::TrainConfig cfg = resolve_config(args.config_path, args.overrides);
    gram::Dataset data = gram::load_dataset(args.data);
    gram::PreparedData prep = gram::prepare(cfg, data);
    gram::TrainOutcome outcome = gram::train(cfg, prep);

    fs::create_directories(args.out);
    const std::string log_path = (fs::path(args.out) / "train_log.csv").string();
    const std::string ckpt_path = (fs::path(args.out) / "model.ckpt").string();
    const std::string cfg_path = (fs::path(args.out) / "run_config.txt").string();
    gram::write_train_log(outcome.report, log_path);
    gram::save_checkpoint(outcome.best, ckpt_path);
    {
        std::ofstream out(cfg_path, std::ios::trunc);
        out << gram::config_to_kv(cfg);
        if (!out) gram::fail("cannot write " + cfg_path);
    }

    const int best = outcome.report.best_epoch;
    emit({{"command", "train"},
          {"model", gram::to_string(cfg.model_kind)},
          {"init", gram::to_string(cfg.init_mode)},
          {"task", gram::to_string(cfg.task)},
          {"epochs_run", outcome.report.epochs.size()},
          {"best_epoch", best + 1},
          {"best_valid_loss", outcome.report.epochs[size_t(best)].valid_loss},
          {"diverged", outcome.report.diverged},
          {"parameters", gram::parameter_count(prep.dims)},
          {"checkpoint", ckpt_path},
          {"train_log", log_path}});
    return 0;
}

struct EvaluateArgs {
    std::string data, out, config_path, checkpoint;
    std::map<std::string, std::string> overrides;
    std::vector<int> ks = {5, 10, 20, 30};
};

int run_evaluate(const EvaluateArgs& args) {
    const gram::TrainConfig cfg = resolve_config(args.config_path, args.overrides);
    gram::Dataset data = gram::load_dataset(args.data);
    gram::PreparedData prep = gram::prepare(cfg, data);
    gram::ModelState state = load_matching_checkpoint(args.checkpoint, prep);

    const gram::AncestorMap* amap = prep.dims.attention ? &prep.amap : nullptr;
    json report = gram::evaluate_model(state.params, amap, prep.test, cfg.task, args.ks,
                                       prep.label_freq, prep.label_names);
    if (!args.out.empty()) {
        std::ofstream out(args.out, std::ios::trunc);
        out << report.dump(2) << '\n';
        if (!out) gram::fail("cannot write report " + args.out);
    }

    json summary = {{"command", "evaluate"},
                    {"task", gram::to_string(cfg.task)},
                    {"examples", prep.test.size()},
                    {"accuracy_at_k", report["accuracy_at_k"]},
                    {"auc", report["auc"]}};
    if (!args.out.empty()) summary["out"] = args.out;
    emit(summary);
    return 0;
}

struct ExportEmbeddingsArgs {
    std::string data, out, config_path, checkpoint, labels;
    std::map<std::string, std::string> overrides;
};

int run_export_embeddings(const ExportEmbeddingsArgs& args) {
    const gram::TrainConfig cfg = resolve_config(args.config_path, args.overrides);
    gram::Dataset data = gram::load_dataset(args.data);
    gram::PreparedData prep = gram::prepare(cfg, data);
    gram::ModelState state = load_matching_checkpoint(args.checkpoint, prep);

    std::unordered_map<std::string, std::string> categories;
    bool have_categories = false;
    std::string labels_path = args.labels;
    if (labels_path.empty()) {
        const fs::path candidate = fs::path(args.data) / "labels.tsv";
        if (fs::exists(candidate)) labels_path = candidate.string();
    }
    if (!labels_path.empty()) {
        categories = gram::load_label_sidecar(labels_path);
        have_categories = true;
    }

    const gram::AncestorMap* amap = prep.dims.attention ? &prep.amap : nullptr;
    gram::export_embeddings(state.params, amap, prep.input_names,
                            have_categories ? &categories : nullptr, args.out);
    emit({{"command", "export-embeddings"},
          {"rows", prep.input_names.size()},
          {"dim", prep.dims.embed_dim},
          {"categories", have_categories},
          {"out", args.out}});
    return 0;
}

struct ExportAttentionArgs {
    std::string data, out, config_path, checkpoint;
    std::map<std::string, std::string> overrides;
    std::vector<std::string> leaves;
    bool drop_root = false;
};

int run_export_attention(const ExportAttentionArgs& args) {
    const gram::TrainConfig cfg = resolve_config(args.config_path, args.overrides);
    gram::Dataset data = gram::load_dataset(args.data);
    gram::PreparedData prep = gram::prepare(cfg, data);
    gram::ModelState state = load_matching_checkpoint(args.checkpoint, prep);
    if (!prep.dims.attention)
        gram::fail("model kind '" + gram::to_string(cfg.model_kind) + "' has no attention");

    json exported = gram::export_attention(state.params, prep.model_dag, prep.amap,
                                           args.leaves, args.drop_root);
    json summary = {{"command", "export-attention"},
                    {"leaves", args.leaves.size()},
                    {"drop_root", args.drop_root}};
    if (!args.out.empty()) {
        std::ofstream out(args.out, std::ios::trunc);
        out << exported.dump(2) << '\n';
        if (!out) gram::fail("cannot write " + args.out);
        summary["out"] = args.out;
    } else {
        summary["attention"] = exported;
    }
    emit(summary);
    return 0;
}

struct ParamCountArgs {
    std::string data, config_path;
    std::map<std::string, std::string> overrides;
};

int run_param_count(const ParamCountArgs& args) {
    const gram::TrainConfig cfg = resolve_config(args.config_path, args.overrides);
    gram::Dataset data = gram::load_dataset(args.data);
    gram::PreparedData prep = gram::prepare(cfg, data);

    json breakdown = json::object();
    for (const auto& [name, count] : gram::parameter_breakdown(prep.dims))
        breakdown[name] = count;
    emit({{"command", "param-count"},
          {"model", gram::to_string(cfg.model_kind)},
          {"total", gram::parameter_count(prep.dims)},
          {"breakdown", breakdown},
          {"num_nodes", prep.dims.num_nodes},
          {"num_inputs", prep.dims.num_leaves},
          {"num_outputs", prep.dims.num_outputs}});
    return 0;
}

struct HpoArgs {
    std::string data, out, config_path, space_path;
    std::map<std::string, std::string> overrides;
    int trials = 10;
};

// Appendix-style random search over discrete candidate lists.
struct HpoSpace {
    std::vector<int> m = {100, 200, 300, 400, 500};
    std::vector<int> r = {100, 200, 300, 400, 500};
    std::vector<int> l = {100, 200, 300, 400, 500};
    std::vector<double> l2 = {0.1, 0.01, 0.001, 0.0001};
    std::vector<double> dropout = {0.0, 0.2, 0.4, 0.6, 0.8};
};

HpoSpace load_space(const std::string& path) {
    HpoSpace space;
    if (path.empty()) return space;
    std::ifstream in(path);
    if (!in) gram::fail("cannot open space file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        gram::fail("space file " + path + ": " + e.what());
    }
    auto read = [&](const char* key, auto& out) {
        if (!j.contains(key)) return;
        out = j.at(key).get<std::decay_t<decltype(out)>>();
        if (out.empty()) gram::fail(std::string("space file: empty list for '") + key + "'");
    };
    read("m", space.m);
    read("r", space.r);
    read("l", space.l);
    read("l2_coeff", space.l2);
    read("dropout_rate", space.dropout);
    return space;
}

int run_hpo_search(const HpoArgs& args) {
    if (args.trials < 1) gram::fail("--trials must be >= 1");
    const gram::TrainConfig base = resolve_config(args.config_path, args.overrides);
    const HpoSpace space = load_space(args.space_path);
    gram::Dataset data = gram::load_dataset(args.data);

    struct Trial {
        int index;
        gram::TrainConfig cfg;
        double valid_loss;
        int best_epoch;
        size_t epochs;
    };
    std::vector<Trial> trials;
    gram::Rng rng = gram::Rng(base.seed).derive(0x4905eaec);
    for (int t = 0; t < args.trials; ++t) {
        gram::TrainConfig cfg = base;
        cfg.m = space.m[rng.below(space.m.size())];
        cfg.r = space.r[rng.below(space.r.size())];
        cfg.l = space.l[rng.below(space.l.size())];
        cfg.l2_coeff = space.l2[rng.below(space.l2.size())];
        cfg.dropout_rate = space.dropout[rng.below(space.dropout.size())];

        gram::TrainOutcome outcome = gram::train(cfg, data);
        const int best = outcome.report.best_epoch;
        trials.push_back({t, cfg, outcome.report.epochs[size_t(best)].valid_loss, best + 1,
                          outcome.report.epochs.size()});
    }

    std::vector<int> order(trials.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (trials[size_t(a)].valid_loss != trials[size_t(b)].valid_loss)
            return trials[size_t(a)].valid_loss < trials[size_t(b)].valid_loss;
        return a < b;
    });

    fs::create_directories(args.out);
    const std::string csv_path = (fs::path(args.out) / "trials.csv").string();
    {
        std::ofstream out(csv_path, std::ios::trunc);
        out << "rank,trial,m,r,l,l2_coeff,dropout_rate,valid_loss,best_epoch,epochs\n";
        char buf[192];
        for (size_t rank = 0; rank < order.size(); ++rank) {
            const Trial& t = trials[size_t(order[rank])];
            std::snprintf(buf, sizeof(buf), "%zu,%d,%d,%d,%d,%g,%g,%.17g,%d,%zu\n", rank + 1,
                          t.index, t.cfg.m, t.cfg.r, t.cfg.l, t.cfg.l2_coeff,
                          t.cfg.dropout_rate, t.valid_loss, t.best_epoch, t.epochs);
            out << buf;
        }
        if (!out) gram::fail("cannot write " + csv_path);
    }

    const Trial& best = trials[size_t(order.front())];
    emit({{"command", "hpo-search"},
          {"trials", args.trials},
          {"best",
           {{"trial", best.index},
            {"m", best.cfg.m},
            {"r", best.cfg.r},
            {"l", best.cfg.l},
            {"l2_coeff", best.cfg.l2_coeff},
            {"dropout_rate", best.cfg.dropout_rate},
            {"valid_loss", best.valid_loss},
            {"best_epoch", best.best_epoch}}},
          {"out", csv_path}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ontology-attentive sequence models over coded visit data"};
    app.require_subcommand(1);

    GenSynthArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-synth", "generate a synthetic dataset");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--seed", gen.config.seed, "master random seed");
    gen_cmd->add_option("--patients", gen.config.num_patients, "number of patients");
    gen_cmd->add_option("--leaves", gen.config.num_leaves, "number of leaf codes");
    gen_cmd->add_option("--exponent", gen.config.rarity_exponent, "Zipf rarity exponent");
    gen_cmd->add_option("--coherence", gen.config.coherence, "subtree persistence probability");
    gen_cmd->add_option("--label-noise", gen.config.label_noise, "binary flag flip probability");

    BuildCoocArgs cooc;
    CLI::App* cooc_cmd = app.add_subcommand("build-cooc", "count visit co-occurrences");
    cooc_cmd->add_option("--data", cooc.data, "dataset directory")->required();
    cooc_cmd->add_option("--out", cooc.out, "snapshot file")->required();
    cooc_cmd->add_option("--mode", cooc.mode, "augmented|leaf");

    InitEmbeddingsArgs init;
    CLI::App* init_cmd = app.add_subcommand("init-embeddings", "fit embeddings to co-occurrences");
    init_cmd->add_option("--cooc", init.cooc, "co-occurrence snapshot")->required();
    init_cmd->add_option("--data", init.data, "dataset directory (node names)")->required();
    init_cmd->add_option("--out", init.out, "embedding TSV")->required();
    init_cmd->add_option("--dim", init.dim, "embedding width");
    init_cmd->add_option("--epochs", init.epochs, "fitting epochs");
    init_cmd->add_option("--seed", init.seed, "master random seed");

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--data", train.data, "dataset directory")->required();
    train_cmd->add_option("--out", train.out, "run output directory")->required();
    add_config_options(train_cmd, train.config_path, train.overrides);

    EvaluateArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("--data", eval.data, "dataset directory")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--out", eval.out, "report JSON path");
    eval_cmd->add_option("--k", eval.ks, "accuracy cutoffs")->delimiter(',');
    add_config_options(eval_cmd, eval.config_path, eval.overrides);

    ExportEmbeddingsArgs emb;
    CLI::App* emb_cmd = app.add_subcommand("export-embeddings", "write final leaf representations");
    emb_cmd->add_option("--data", emb.data, "dataset directory")->required();
    emb_cmd->add_option("--checkpoint", emb.checkpoint, "model checkpoint")->required();
    emb_cmd->add_option("--out", emb.out, "TSV path")->required();
    emb_cmd->add_option("--labels", emb.labels, "category sidecar TSV");
    add_config_options(emb_cmd, emb.config_path, emb.overrides);

    ExportAttentionArgs attn;
    CLI::App* attn_cmd = app.add_subcommand("export-attention", "write attention distributions");
    attn_cmd->add_option("--data", attn.data, "dataset directory")->required();
    attn_cmd->add_option("--checkpoint", attn.checkpoint, "model checkpoint")->required();
    attn_cmd->add_option("--leaves", attn.leaves, "leaf names")->required()->delimiter(',');
    attn_cmd->add_option("--out", attn.out, "JSON path");
    attn_cmd->add_flag("--drop-root", attn.drop_root, "report the root as a residual");
    add_config_options(attn_cmd, attn.config_path, attn.overrides);

    ParamCountArgs params;
    CLI::App* params_cmd = app.add_subcommand("param-count", "report trainable parameter counts");
    params_cmd->add_option("--data", params.data, "dataset directory")->required();
    add_config_options(params_cmd, params.config_path, params.overrides);

    HpoArgs hpo;
    CLI::App* hpo_cmd = app.add_subcommand("hpo-search", "random hyperparameter search");
    hpo_cmd->add_option("--data", hpo.data, "dataset directory")->required();
    hpo_cmd->add_option("--out", hpo.out, "search output directory")->required();
    hpo_cmd->add_option("--trials", hpo.trials, "number of trials");
    hpo_cmd->add_option("--space", hpo.space_path, "JSON candidate lists");
    add_config_options(hpo_cmd, hpo.config_path, hpo.overrides);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    try {
        if (gen_cmd->parsed()) return run_gen_synth(gen);
        if (cooc_cmd->parsed()) return run_build_cooc(cooc);
        if (init_cmd->parsed()) return run_init_embeddings(init);
        if (train_cmd->parsed()) return run_train(train);
        if (eval_cmd->parsed()) return run_evaluate(eval);
        if (emb_cmd->parsed()) return run_export_embeddings(emb);
        if (attn_cmd->parsed()) return run_export_attention(attn);
        if (params_cmd->parsed()) return run_param_count(params);
        if (hpo_cmd->parsed()) return run_hpo_search(hpo);
        std::cerr << "error: no subcommand selected\n";
        return 1;
    } catch (const gram::Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << std::endl;
        return 2;
    }
}
