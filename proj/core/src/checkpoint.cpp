#include "da4lg/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "da4lg/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace da4lg {

namespace {

std::string blob_filename(const std::string& group, const std::string& name) {
    return group + "." + name + ".bin";
}

}  // namespace

void save_checkpoint(const GroundingModel& model, const std::string& path) {
    fs::create_directories(path);
    json manifest;
    manifest["format"] = "da4lg-checkpoint-v1";
    manifest["seed"] = model.seed;
    manifest["policy"] = to_string(model.policy.kind);
    manifest["partial_layers"] = model.policy.partial_layers;
    manifest["adapter_rank"] = model.policy.adapter_rank;
    manifest["adapter_alpha"] = model.policy.adapter_alpha;
    manifest["has_adapter"] = model.domain.adapter.has_value();
    manifest["vocabulary"] = model.vocabulary;

    json cfg;
    const ModelConfig& c = model.cfg;
    cfg["image_size"] = c.image_size;
    cfg["patch_size"] = c.patch_size;
    cfg["embed_dim"] = c.embed_dim;
    cfg["n_heads"] = c.n_heads;
    cfg["n_layers"] = c.n_layers;
    cfg["mlp_ratio"] = c.mlp_ratio;
    cfg["output_dim"] = c.output_dim;
    cfg["max_tokens"] = c.max_tokens;
    cfg["decoder_dim"] = c.decoder_dim;
    cfg["decoder_layers"] = c.decoder_layers;
    cfg["decoder_heads"] = c.decoder_heads;
    cfg["decoder_max_tokens"] = c.decoder_max_tokens;
    cfg["prefix_tokens"] = c.prefix_tokens;
    cfg["head_hidden"] = c.head_hidden;
    cfg["use_vision"] = c.use_vision;
    cfg["use_domain"] = c.use_domain;
    manifest["config"] = cfg;

    json params = json::array();
    std::int64_t trainable = 0, frozen = 0;
    for (const auto& [group, store] : model.components()) {
        for (int i = 0; i < store->count(); ++i) {
            const Param& p = store->at(i);
            auto blob = param_blob(p.value);
            std::string fname = blob_filename(group, p.name);
            std::ofstream out(fs::path(path) / fname, std::ios::binary);
            if (!out) throw LoadError("cannot write checkpoint blob " + fname);
            out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
            json e;
            e["group"] = group;
            e["name"] = p.name;
            e["rows"] = p.value.rows();
            e["cols"] = p.value.cols();
            e["trainable"] = p.trainable;
            e["sha256"] = sha256_hex(blob);
            params.push_back(e);
            (p.trainable ? trainable : frozen) += p.value.size();
        }
    }
    manifest["params"] = params;
    manifest["freeze_summary"] = {{"trainable_elements", trainable}, {"frozen_elements", frozen}};
    manifest["optimizer"] = {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}};

    std::ofstream mf(fs::path(path) / "manifest.json");
    if (!mf) throw LoadError("cannot write checkpoint manifest in " + path);
    mf << manifest.dump(2) << "\n";
}

GroundingModel load_checkpoint(const std::string& path) {
    fs::path mp = fs::path(path) / "manifest.json";
    std::ifstream mf(mp);
    if (!mf) throw LoadError("missing checkpoint manifest " + mp.string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw LoadError("bad checkpoint manifest: " + std::string(e.what()));
    }

    ModelConfig c;
    const json& cfg = manifest.at("config");
    c.image_size = cfg.at("image_size");
    c.patch_size = cfg.at("patch_size");
    c.embed_dim = cfg.at("embed_dim");
    c.n_heads = cfg.at("n_heads");
    c.n_layers = cfg.at("n_layers");
    c.mlp_ratio = cfg.at("mlp_ratio");
    c.output_dim = cfg.at("output_dim");
    c.max_tokens = cfg.at("max_tokens");
    c.decoder_dim = cfg.at("decoder_dim");
    c.decoder_layers = cfg.at("decoder_layers");
    c.decoder_heads = cfg.at("decoder_heads");
    c.decoder_max_tokens = cfg.at("decoder_max_tokens");
    c.prefix_tokens = cfg.at("prefix_tokens");
    c.head_hidden = cfg.at("head_hidden");
    c.use_vision = cfg.value("use_vision", true);
    c.use_domain = cfg.value("use_domain", true);

    TrainingPolicy policy;
    policy.kind = policy_from_string(manifest.at("policy").get<std::string>());
    policy.partial_layers = manifest.value("partial_layers", 2);
    policy.adapter_rank = manifest.value("adapter_rank", 4);
    policy.adapter_alpha = manifest.value("adapter_alpha", 4.0);

    std::vector<std::string> vocab = manifest.at("vocabulary").get<std::vector<std::string>>();
    bool has_adapter = manifest.value("has_adapter", true);
    GroundingModel model = build_model(c, vocab, manifest.value("seed", 0ull), policy, has_adapter);

    for (const auto& e : manifest.at("params")) {
        std::string group = e.at("group"), name = e.at("name");
        ParamStore* store = nullptr;
        for (auto& [g, s] : model.components())
            if (g == group) store = s;
        if (!store || !store->has(name))
            throw LoadError("checkpoint names unknown parameter " + group + "." + name);
        std::string fname = blob_filename(group, name);
        std::ifstream in(fs::path(path) / fname, std::ios::binary);
        if (!in) throw LoadError("missing checkpoint blob " + fname);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        if (sha256_hex(bytes) != e.at("sha256").get<std::string>())
            throw LoadError("checksum mismatch for parameter " + group + "." + name +
                            " (checkpoint integrity violation)");
        Mat v = param_from_blob(bytes, group + "." + name);
        Param& p = store->at(name);
        if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
            throw ShapeError("parameter " + group + "." + name + " has shape " +
                             std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                             " but the configuration expects " + std::to_string(p.value.rows()) + "x" +
                             std::to_string(p.value.cols()));
        p.value = std::move(v);
        p.trainable = e.at("trainable").get<bool>();
    }
    return model;
}

}  // namespace da4lg
