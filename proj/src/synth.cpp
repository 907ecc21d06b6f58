#include "gram/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace gram {

void SynthConfig::validate() const {
    if (num_leaves < 1 || num_patients < 1) fail("synth: counts must be >= 1");
    if (branching.size() < 2) fail("synth: need at least two internal levels");
    int64_t bottom = 1;
    for (int b : branching) {
        if (b < 1) fail("synth: branching factors must be >= 1");
        bottom *= b;
        if (bottom > num_leaves) fail("synth: more bottom-level groups than leaves");
    }
    if (visits_min < 1 || visits_min > visits_max) fail("synth: bad visit count range");
    if (codes_min < 1 || codes_min > codes_max) fail("synth: bad codes-per-visit range");
    if (coherence < 0 || coherence > 1) fail("synth: coherence must lie in [0, 1]");
    if (label_noise < 0 || label_noise > 1) fail("synth: label_noise must lie in [0, 1]");
    if (rarity_exponent < 0) fail("synth: rarity exponent must be >= 0");
}

namespace {

std::string padded(const char* prefix, int index, int width) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, index);
    return buf;
}

int width_for(int count) {
    return std::max(2, int(std::to_string(std::max(0, count - 1)).size()));
}

// inclusive-prefix-sum sampler
int sample_categorical(const std::vector<double>& cumulative, double total, Rng& rng) {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return int(std::min(size_t(it - cumulative.begin()), cumulative.size() - 1));
}

}  // namespace

SynthDataset generate(const SynthConfig& config) {
    config.validate();
    SynthDataset data;

    // --- tree ---------------------------------------------------------------
    // Level L consists of prod(branching[0..L)) nodes; leaves hang off the
    // bottom level in contiguous runs so that popularity skew carries over to
    // whole subtrees.
    std::vector<std::vector<std::string>> levels;  // internal levels, top down
    int level_count = 1;
    for (size_t depth = 0; depth < config.branching.size(); ++depth) {
        level_count *= config.branching[depth];
        const int width = width_for(level_count);
        const std::string prefix = "g" + std::to_string(depth + 1) + "_";
        std::vector<std::string> level;
        level.reserve(size_t(level_count));
        for (int i = 0; i < level_count; ++i)
            level.push_back(padded(prefix.c_str(), i, width));
        levels.push_back(std::move(level));
    }

    for (size_t i = 0; i < levels[0].size(); ++i) data.edges.emplace_back(levels[0][i], "root");
    for (size_t depth = 1; depth < levels.size(); ++depth) {
        const int fan = config.branching[depth];
        for (size_t i = 0; i < levels[depth].size(); ++i)
            data.edges.emplace_back(levels[depth][i], levels[depth - 1][i / size_t(fan)]);
    }

    const int num_bottom = int(levels.back().size());
    const int leaf_width = width_for(config.num_leaves);
    const int base = config.num_leaves / num_bottom;
    const int rem = config.num_leaves % num_bottom;
    std::vector<std::string> leaf_names;
    leaf_names.reserve(size_t(config.num_leaves));
    std::vector<int> bottom_of_leaf(size_t(config.num_leaves));
    {
        int leaf = 0;
        for (int b = 0; b < num_bottom; ++b) {
            const int take = base + (b < rem ? 1 : 0);
            for (int i = 0; i < take; ++i, ++leaf) {
                leaf_names.push_back(padded("code_", leaf, leaf_width));
                bottom_of_leaf[size_t(leaf)] = b;
                data.edges.emplace_back(leaf_names.back(), levels.back()[size_t(b)]);
            }
        }
    }
    data.dag = build_dag(data.edges);

    // leaf ids equal generation order: padded names sort numerically
    for (int leaf = 0; leaf < config.num_leaves; ++leaf)
        if (data.dag.names[size_t(leaf)] != leaf_names[size_t(leaf)])
            fail("synth: internal leaf naming mismatch");

    // group of a leaf = its level-1 ancestor
    const int num_groups = config.branching[0];
    int per_group = 1;
    for (size_t depth = 1; depth < config.branching.size(); ++depth)
        per_group *= config.branching[depth];
    data.groups.group_names = levels[0];
    data.groups.group_of.resize(size_t(config.num_leaves));
    for (int leaf = 0; leaf < config.num_leaves; ++leaf)
        data.groups.group_of[size_t(leaf)] = bottom_of_leaf[size_t(leaf)] / per_group;

    // --- popularity ---------------------------------------------------------
    std::vector<double> weight(size_t(config.num_leaves));
    for (int leaf = 0; leaf < config.num_leaves; ++leaf)
        weight[size_t(leaf)] = std::pow(double(leaf + 1), -config.rarity_exponent);

    std::vector<int> group_lo(size_t(num_groups), config.num_leaves);
    std::vector<int> group_hi(size_t(num_groups), 0);
    for (int leaf = 0; leaf < config.num_leaves; ++leaf) {
        const int grp = data.groups.group_of[size_t(leaf)];
        group_lo[size_t(grp)] = std::min(group_lo[size_t(grp)], leaf);
        group_hi[size_t(grp)] = std::max(group_hi[size_t(grp)], leaf + 1);
    }
    int min_group_size = config.num_leaves;
    std::vector<double> group_mass_cum(static_cast<size_t>(num_groups));
    std::vector<std::vector<double>> leaf_cum(static_cast<size_t>(num_groups));
    double total_mass = 0;
    for (int grp = 0; grp < num_groups; ++grp) {
        const int lo = group_lo[size_t(grp)], hi = group_hi[size_t(grp)];
        min_group_size = std::min(min_group_size, hi - lo);
        auto& cum = leaf_cum[size_t(grp)];
        cum.resize(size_t(hi - lo));
        double run = 0;
        for (int leaf = lo; leaf < hi; ++leaf) {
            run += weight[size_t(leaf)];
            cum[size_t(leaf - lo)] = run;
        }
        total_mass += run;
        group_mass_cum[size_t(grp)] = total_mass;
    }
    if (config.codes_max > min_group_size)
        fail("synth: codes per visit exceed the smallest subtree's leaf count");

    // --- trajectories -------------------------------------------------------
    Rng rng = Rng(config.seed).derive(0x57a7e5);
    const int case_group = num_groups / 3;
    const int patient_width = width_for(config.num_patients);
    int64_t rejection_budget =
        int64_t(config.num_patients) * config.visits_max * config.codes_max * 1000;

    data.records.reserve(size_t(config.num_patients));
    data.flags.reserve(size_t(config.num_patients));
    for (int pi = 0; pi < config.num_patients; ++pi) {
        PatientRecord rec;
        rec.patient_id = padded("p", pi, patient_width);
        const int num_visits =
            config.visits_min + int(rng.below(uint64_t(config.visits_max - config.visits_min + 1)));
        int state = sample_categorical(group_mass_cum, total_mass, rng);
        bool case_seen = false;

        for (int v = 0; v < num_visits; ++v) {
            case_seen = case_seen || state == case_group;
            const int want =
                config.codes_min + int(rng.below(uint64_t(config.codes_max - config.codes_min + 1)));
            const auto& cum = leaf_cum[size_t(state)];
            std::set<ConceptId> codes;
            while (int(codes.size()) < want) {
                if (--rejection_budget < 0)
                    fail("synth: code sampling stalled; rarity exponent too extreme");
                const int offset = sample_categorical(cum, cum.back(), rng);
                codes.insert(ConceptId(group_lo[size_t(state)] + offset));
            }
            rec.visits.push_back(Visit{{codes.begin(), codes.end()}});

            if (v + 1 < num_visits && rng.uniform() >= config.coherence)
                state = sample_categorical(group_mass_cum, total_mass, rng);
        }

        const bool flip = rng.uniform() < config.label_noise;
        data.flags.emplace_back(rec.patient_id, int(case_seen != flip));
        data.records.push_back(std::move(rec));
    }
    return data;
}

nlohmann::json describe(const std::vector<PatientRecord>& records) {
    int64_t num_visits = 0, total_codes = 0, max_codes = 0;
    std::set<ConceptId> vocab;
    for (const PatientRecord& rec : records) {
        num_visits += int64_t(rec.visits.size());
        for (const Visit& visit : rec.visits) {
            total_codes += int64_t(visit.codes.size());
            max_codes = std::max(max_codes, int64_t(visit.codes.size()));
            vocab.insert(visit.codes.begin(), visit.codes.end());
        }
    }
    nlohmann::json out;
    out["num_patients"] = records.size();
    out["num_visits"] = num_visits;
    out["avg_visits_per_patient"] =
        records.empty() ? 0.0 : double(num_visits) / double(records.size());
    out["num_unique_codes"] = vocab.size();
    out["total_code_occurrences"] = total_codes;
    out["avg_codes_per_visit"] = num_visits ? double(total_codes) / double(num_visits) : 0.0;
    out["max_codes_per_visit"] = max_codes;
    return out;
}

void write_dataset(const SynthDataset& data, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(fs::path(dir) / name, std::ios::trunc);
        if (!out) fail(std::string("cannot write ") + name + " in " + dir);
        return out;
    };

    {
        auto out = open("ontology.tsv");
        out << "# child\tparent\n";
        for (const auto& [child, parent] : data.edges) out << child << '\t' << parent << '\n';
    }
    {
        auto out = open("records.csv");
        out << "patient_id,visit_index,code\n";
        for (const PatientRecord& rec : data.records)
            for (size_t v = 0; v < rec.visits.size(); ++v)
                for (ConceptId code : rec.visits[v].codes)
                    out << rec.patient_id << ',' << v << ',' << data.dag.names[size_t(code)]
                        << '\n';
    }
    {
        auto out = open("groups.csv");
        out << "code,group_name\n";
        for (int leaf = 0; leaf < data.dag.num_leaves; ++leaf)
            out << data.dag.names[size_t(leaf)] << ','
                << data.groups.group_names[size_t(data.groups.group_of[size_t(leaf)])] << '\n';
    }
    {
        auto out = open("flags.csv");
        out << "patient_id,label\n";
        for (const auto& [patient, label] : data.flags) out << patient << ',' << label << '\n';
    }
    {
        auto out = open("labels.tsv");
        for (int leaf = 0; leaf < data.dag.num_leaves; ++leaf)
            out << data.dag.names[size_t(leaf)] << '\t'
                << data.groups.group_names[size_t(data.groups.group_of[size_t(leaf)])] << '\n';
    }
    {
        auto out = open("stats.json");
        out << describe(data.records).dump(2) << '\n';
    }
}

}  // namespace gram
