#include "da4lg/model.hpp"

#include "da4lg/errors.hpp"
#include "da4lg/head.hpp"
#include "da4lg/objectives.hpp"

namespace da4lg {

PolicyKind policy_from_string(const std::string& s) {
    if (s == "freezing_param" || s == "freezing") return PolicyKind::freezing_param;
    if (s == "full_param" || s == "full") return PolicyKind::full_param;
    if (s == "partial_param" || s == "partial") return PolicyKind::partial_param;
    if (s == "domain_adapter") return PolicyKind::domain_adapter;
    throw ConfigError("unknown training policy '" + s + "'");
}

const char* to_string(PolicyKind p) {
    switch (p) {
        case PolicyKind::freezing_param: return "freezing_param";
        case PolicyKind::full_param: return "full_param";
        case PolicyKind::partial_param: return "partial_param";
        default: return "domain_adapter";
    }
}

std::vector<std::pair<std::string, ParamStore*>> GroundingModel::components() {
    return {{"vision", &vision.params},   {"language", &language.params},
            {"domain", &domain.params},   {"decoder", &decoder.params},
            {"head", &head},              {"prefix", &prefix}};
}

std::vector<std::pair<std::string, const ParamStore*>> GroundingModel::components() const {
    return {{"vision", &vision.params},   {"language", &language.params},
            {"domain", &domain.params},   {"decoder", &decoder.params},
            {"head", &head},              {"prefix", &prefix}};
}

GroundingModel build_model(const ModelConfig& cfg, const std::vector<std::string>& vocabulary,
                           std::uint64_t seed, const TrainingPolicy& policy, bool with_adapter) {
    if (vocabulary.empty()) throw ConfigError("model requires a non-empty vocabulary");

    GroundingModel m;
    m.cfg = cfg;
    m.cfg.vocab_size = static_cast<int>(vocabulary.size()) + 4;  // reserved pad/bos/eos/unk
    m.seed = seed;
    m.policy = policy;
    m.vocabulary = vocabulary;

    EncoderConfig vc;
    vc.image_size = cfg.image_size;
    vc.patch_size = cfg.patch_size;
    vc.embed_dim = cfg.embed_dim;
    vc.n_heads = cfg.n_heads;
    vc.n_layers = cfg.n_layers;
    vc.mlp_ratio = cfg.mlp_ratio;
    vc.output_dim = cfg.output_dim;
    m.vision = make_vision_encoder(vc, seed * 6364136223846793005ull + 1);

    EncoderConfig lc = vc;
    lc.vocab_size = m.cfg.vocab_size;
    lc.max_tokens = cfg.max_tokens;
    m.language = make_language_encoder(lc, seed * 6364136223846793005ull + 2);

    if (with_adapter) {
        m.domain = clone_as_domain_encoder(m.vision, policy.adapter_rank, policy.adapter_alpha,
                                           seed * 6364136223846793005ull + 3);
    } else {
        m.domain = m.vision;
        m.domain.kind = EncoderKind::domain;
    }

    EncoderConfig dc;
    dc.embed_dim = cfg.decoder_dim;
    dc.n_heads = cfg.decoder_heads;
    dc.n_layers = cfg.decoder_layers;
    dc.mlp_ratio = cfg.mlp_ratio;
    dc.vocab_size = m.cfg.vocab_size;
    dc.max_tokens = cfg.decoder_max_tokens;
    m.decoder = make_caption_decoder(dc, seed * 6364136223846793005ull + 4);

    m.head = make_score_head(cfg.output_dim, cfg.head_hidden, seed * 6364136223846793005ull + 5);
    m.prefix = make_prefix_projection(cfg.output_dim, cfg.prefix_tokens, cfg.decoder_dim,
                                      seed * 6364136223846793005ull + 6);
    apply_policy(m, policy);
    return m;
}

std::int64_t ParamLedger::group_trainable(const std::string& group) const {
    std::int64_t n = 0;
    for (const auto& e : entries)
        if (e.group == group && e.trainable) n += e.elements;
    return n;
}

std::int64_t ParamLedger::group_total(const std::string& group) const {
    std::int64_t n = 0;
    for (const auto& e : entries)
        if (e.group == group) n += e.elements;
    return n;
}

ParamLedger build_ledger(const GroundingModel& model) {
    ParamLedger ledger;
    for (const auto& [group, store] : model.components()) {
        for (int i = 0; i < store->count(); ++i) {
            const Param& p = store->at(i);
            ledger.entries.push_back({group, p.name, static_cast<std::int64_t>(p.value.size()), p.trainable});
            ledger.total += p.value.size();
            (p.trainable ? ledger.trainable_total : ledger.frozen_total) += p.value.size();
        }
    }
    return ledger;
}

ParamLedger apply_policy(GroundingModel& model, const TrainingPolicy& policy) {
    if (policy.kind == PolicyKind::domain_adapter && !model.domain.adapter)
        throw ConfigError("domain_adapter policy requires an AdapterBank on the Domain-specific Encoder");
    if (policy.kind == PolicyKind::partial_param &&
        (policy.partial_layers < 1 || policy.partial_layers > model.cfg.n_layers))
        throw ConfigError("partial_layers must lie in [1, n_layers]");

    model.policy = policy;
    model.vision.params.set_all_trainable(false);
    model.language.params.set_all_trainable(false);
    model.decoder.params.set_all_trainable(false);
    model.head.set_all_trainable(true);
    model.prefix.set_all_trainable(true);

    ParamStore& dom = model.domain.params;
    dom.set_all_trainable(false);
    switch (policy.kind) {
        case PolicyKind::freezing_param:
            break;
        case PolicyKind::domain_adapter:
            for (int i = 0; i < dom.count(); ++i)
                if (dom.at(i).name.find(".lora_") != std::string::npos) dom.at(i).trainable = true;
            break;
        case PolicyKind::partial_param: {
            for (int layer = model.cfg.n_layers - policy.partial_layers; layer < model.cfg.n_layers; ++layer) {
                std::string prefix = "blocks." + std::to_string(layer) + ".";
                for (int i = 0; i < dom.count(); ++i) {
                    const std::string& n = dom.at(i).name;
                    if (n.rfind(prefix, 0) == 0 && n.find(".lora_") == std::string::npos)
                        dom.at(i).trainable = true;
                }
            }
            break;
        }
        case PolicyKind::full_param:
            for (int i = 0; i < dom.count(); ++i)
                if (dom.at(i).name.find(".lora_") == std::string::npos) dom.at(i).trainable = true;
            break;
    }
    return build_ledger(model);
}

}  // namespace da4lg
