#include "pttt/checkpoint.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "pttt/common.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace pttt {

json arch_to_json(const ArchConfig& a) {
    return json{{"image_size", a.image_size},
                {"enc_channels", a.enc_channels},
                {"embed_dim", a.embed_dim},
                {"dec_channels", a.dec_channels},
                {"pe_min_freq", a.pe_min_freq},
                {"pe_max_freq", a.pe_max_freq},
                {"init_scale", a.init_scale},
                {"rot_head_hidden", a.rot_head_hidden}};
}

ArchConfig arch_from_json(const json& j) {
    ArchConfig a;
    a.image_size = j.at("image_size").get<int>();
    a.enc_channels = j.at("enc_channels").get<std::vector<int>>();
    a.embed_dim = j.at("embed_dim").get<int>();
    a.dec_channels = j.at("dec_channels").get<std::vector<int>>();
    a.pe_min_freq = j.at("pe_min_freq").get<double>();
    a.pe_max_freq = j.at("pe_max_freq").get<double>();
    a.init_scale = j.at("init_scale").get<double>();
    a.rot_head_hidden = j.at("rot_head_hidden").get<int>();
    a.validate();
    return a;
}

namespace {

void write_doubles(const std::string& path, const std::vector<const std::vector<double>*>& blocks) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    for (const auto* b : blocks)
        f.write(reinterpret_cast<const char*>(b->data()),
                static_cast<std::streamsize>(b->size() * sizeof(double)));
    if (!f) throw FormatError("write failed: " + path);
}

void read_doubles(const std::string& path, const std::vector<std::vector<double>*>& blocks) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    for (auto* b : blocks) {
        f.read(reinterpret_cast<char*>(b->data()),
               static_cast<std::streamsize>(b->size() * sizeof(double)));
        if (f.gcount() != static_cast<std::streamsize>(b->size() * sizeof(double)))
            throw FormatError("truncated payload: " + path);
    }
    char extra;
    if (f.read(&extra, 1)) throw FormatError("trailing bytes in " + path);
}

}  // namespace

void save_checkpoint(const std::string& directory, const ModelParams& params,
                     const OptimizerState* opt, const json& config_echo) {
    fs::create_directories(directory);

    json meta;
    meta["format_version"] = 1;
    meta["arch"] = arch_to_json(params.arch);
    meta["arrays"] = json::array();
    for (const auto& arr : params.set.arrays())
        meta["arrays"].push_back(json{{"name", arr.name}, {"shape", arr.shape}});
    json digests;
    for (const auto& comp : model_components()) digests[comp] = param_digest(params, comp);
    meta["digests"] = digests;
    meta["has_optimizer"] = opt != nullptr;
    if (opt) {
        // JSON cannot carry infinity; the fresh-state sentinel gets a flag.
        const bool best_inf = !std::isfinite(opt->best_loss);
        meta["optimizer"] = json{{"step", opt->step},
                                 {"lr", opt->lr},
                                 {"beta1", opt->beta1},
                                 {"beta2", opt->beta2},
                                 {"eps", opt->eps},
                                 {"best_loss", best_inf ? 0.0 : opt->best_loss},
                                 {"best_loss_is_inf", best_inf},
                                 {"patience", opt->patience}};
    }
    meta["config"] = config_echo;
    std::ofstream mf(directory + "/meta.json");
    if (!mf) throw FormatError("cannot write " + directory + "/meta.json");
    mf << meta.dump(2) << "\n";

    std::vector<const std::vector<double>*> blocks;
    for (const auto& arr : params.set.arrays()) blocks.push_back(&arr.data);
    write_doubles(directory + "/params.bin", blocks);

    if (opt) {
        std::vector<const std::vector<double>*> oblocks;
        for (const auto& arr : opt->m.arrays()) oblocks.push_back(&arr.data);
        for (const auto& arr : opt->v.arrays()) oblocks.push_back(&arr.data);
        write_doubles(directory + "/optimizer.bin", oblocks);
    }
}

LoadedCheckpoint load_checkpoint(const std::string& directory) {
    std::ifstream mf(directory + "/meta.json");
    if (!mf) throw FormatError("missing checkpoint metadata: " + directory + "/meta.json");
    json meta;
    try {
        mf >> meta;
    } catch (const json::exception& e) {
        throw FormatError("malformed checkpoint metadata: " + std::string(e.what()));
    }
    if (meta.at("format_version").get<int>() != 1)
        throw FormatError("unsupported checkpoint format_version in " + directory);

    LoadedCheckpoint out;
    out.params.arch = arch_from_json(meta.at("arch"));
    for (const auto& ja : meta.at("arrays"))
        out.params.set.add(ja.at("name").get<std::string>(), ja.at("shape").get<std::vector<int>>());

    std::vector<std::vector<double>*> blocks;
    for (auto& arr : out.params.set.arrays()) blocks.push_back(&arr.data);
    read_doubles(directory + "/params.bin", blocks);

    // Digest check catches corrupted or mismatched payloads.
    for (const auto& comp : model_components()) {
        const std::string expect = meta.at("digests").at(comp).get<std::string>();
        const std::string got = param_digest(out.params, comp);
        if (expect != got)
            throw FormatError("checkpoint digest mismatch for component '" + comp + "' in " +
                              directory);
    }

    if (meta.at("has_optimizer").get<bool>()) {
        OptimizerState opt = OptimizerState::init(out.params.set, 0.0);
        const auto& jo = meta.at("optimizer");
        opt.step = jo.at("step").get<long>();
        opt.lr = jo.at("lr").get<double>();
        opt.beta1 = jo.at("beta1").get<double>();
        opt.beta2 = jo.at("beta2").get<double>();
        opt.eps = jo.at("eps").get<double>();
        opt.best_loss = jo.at("best_loss_is_inf").get<bool>()
                            ? std::numeric_limits<double>::infinity()
                            : jo.at("best_loss").get<double>();
        opt.patience = jo.at("patience").get<int>();
        std::vector<std::vector<double>*> oblocks;
        for (auto& arr : opt.m.arrays()) oblocks.push_back(&arr.data);
        for (auto& arr : opt.v.arrays()) oblocks.push_back(&arr.data);
        read_doubles(directory + "/optimizer.bin", oblocks);
        out.opt = std::move(opt);
    }
    if (meta.contains("config")) out.config_echo = meta.at("config");
    return out;
}

}  // namespace pttt
