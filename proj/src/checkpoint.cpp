#include <cstring>
#include <fstream>
#include <json.hpp>

#include "gram/model.hpp"

namespace gram {

namespace {

constexpr char kMagic[8] = {'G', 'R', 'A', 'M', 'C', 'K', 'P', '\n'};
constexpr uint32_t kVersion = 1;

nlohmann::json dims_to_json(const ModelDims& d) {
    return {{"num_nodes", d.num_nodes},   {"num_leaves", d.num_leaves},
            {"embed_dim", d.embed_dim},   {"attn_dim", d.attn_dim},
            {"hidden_dim", d.hidden_dim}, {"num_outputs", d.num_outputs},
            {"attention", d.attention}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
    ModelDims d;
    d.num_nodes = j.at("num_nodes").get<int>();
    d.num_leaves = j.at("num_leaves").get<int>();
    d.embed_dim = j.at("embed_dim").get<int>();
    d.attn_dim = j.at("attn_dim").get<int>();
    d.hidden_dim = j.at("hidden_dim").get<int>();
    d.num_outputs = j.at("num_outputs").get<int>();
    d.attention = j.at("attention").get<bool>();
    return d;
}

void write_params(std::ofstream& out, const ModelParams& p) {
    visit_tensors(p, [&](const char*, const auto& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  std::streamsize(t.size() * sizeof(double)));
    });
}

void read_params(std::ifstream& in, ModelParams& p, const std::string& path) {
    visit_tensors(p, [&](const char* name, auto& t) {
        in.read(reinterpret_cast<char*>(t.data()),
                std::streamsize(t.size() * sizeof(double)));
        if (!in) fail("checkpoint " + path + ": truncated while reading " + name);
    });
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
    nlohmann::json header;
    header["version"] = kVersion;
    header["dims"] = dims_to_json(state.params.dims);
    header["seed"] = state.seed;
    header["epoch"] = state.epoch;
    nlohmann::json tensors = nlohmann::json::array();
    visit_tensors(state.params, [&](const char* name, const auto& t) {
        tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
    });
    header["tensors"] = std::move(tensors);
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write checkpoint " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t head_len = head.size();
    out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    out.write(head.data(), std::streamsize(head.size()));
    write_params(out, state.params);
    write_params(out, state.grad_sq_avg);
    write_params(out, state.delta_sq_avg);
    out.flush();
    if (!out) fail("write failed for checkpoint " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open checkpoint " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        fail("checkpoint " + path + ": bad magic");
    uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    if (!in || head_len > (1u << 20)) fail("checkpoint " + path + ": bad header length");
    std::string head(head_len, '\0');
    in.read(head.data(), std::streamsize(head_len));
    if (!in) fail("checkpoint " + path + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(head);
    } catch (const nlohmann::json::exception& e) {
        fail("checkpoint " + path + ": header is not valid JSON (" + e.what() + ")");
    }
    if (header.at("version").get<uint32_t>() != kVersion)
        fail("checkpoint " + path + ": unsupported version");

    ModelState state;
    const ModelDims dims = dims_from_json(header.at("dims"));
    state.params = ModelParams::zeros(dims);
    state.grad_sq_avg = ModelParams::zeros(dims);
    state.delta_sq_avg = ModelParams::zeros(dims);
    state.seed = header.at("seed").get<uint64_t>();
    state.epoch = header.at("epoch").get<int64_t>();

    // shape audit against the header before touching the payload
    size_t idx = 0;
    const auto& tensors = header.at("tensors");
    visit_tensors(state.params, [&](const char* name, const auto& t) {
        if (idx >= tensors.size()) fail("checkpoint " + path + ": missing tensor " + name);
        const auto& entry = tensors[idx++];
        if (entry.at("name").get<std::string>() != name ||
            entry.at("rows").get<int64_t>() != t.rows() ||
            entry.at("cols").get<int64_t>() != t.cols())
            fail("checkpoint " + path + ": shape mismatch for " + name);
    });
    if (idx != tensors.size()) fail("checkpoint " + path + ": extra tensors in header");

    read_params(in, state.params, path);
    read_params(in, state.grad_sq_avg, path);
    read_params(in, state.delta_sq_avg, path);
    return state;
}

}  // namespace gram
