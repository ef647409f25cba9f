#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "da4lg/encoder.hpp"
#include "da4lg/params.hpp"

namespace da4lg {

enum class PolicyKind { freezing_param, full_param, partial_param, domain_adapter };
PolicyKind policy_from_string(const std::string& s);
const char* to_string(PolicyKind p);

struct TrainingPolicy {
    PolicyKind kind = PolicyKind::domain_adapter;
    int partial_layers = 2;   // partial_param only
    int adapter_rank = 4;     // domain_adapter only
    double adapter_alpha = 4.0;
};

struct ModelConfig {
    int image_size = 32;
    int patch_size = 8;
    int embed_dim = 64;
    int n_heads = 4;
    int n_layers = 4;
    int mlp_ratio = 4;
    int output_dim = 64;
    int max_tokens = 16;
    int decoder_dim = 64;
    int decoder_layers = 2;
    int decoder_heads = 4;
    int decoder_max_tokens = 32;
    int prefix_tokens = 4;
    int head_hidden = 128;
    int vocab_size = 0;  // derived from the dataset vocabulary
    bool use_vision = true;  // ablation toggles: disabled encoder contributes zeros
    bool use_domain = true;
};

struct GroundingModel {
    ModelConfig cfg;
    std::uint64_t seed = 0;
    TrainingPolicy policy;
    std::vector<std::string> vocabulary;
    EncoderState vision;
    EncoderState language;
    EncoderState domain;
    EncoderState decoder;
    ParamStore head;
    ParamStore prefix;

    std::vector<std::pair<std::string, ParamStore*>> components();
    std::vector<std::pair<std::string, const ParamStore*>> components() const;
};

// Builds all components from derived sub-seeds; the Domain-specific Encoder is
// cloned from the vision encoder, with an AdapterBank unless with_adapter=false.
GroundingModel build_model(const ModelConfig& cfg, const std::vector<std::string>& vocabulary,
                           std::uint64_t seed, const TrainingPolicy& policy, bool with_adapter = true);

struct LedgerEntry {
    std::string group;
    std::string name;
    std::int64_t elements = 0;
    bool trainable = false;
};

struct ParamLedger {
    std::vector<LedgerEntry> entries;
    std::int64_t total = 0;
    std::int64_t trainable_total = 0;
    std::int64_t frozen_total = 0;

    std::int64_t group_trainable(const std::string& group) const;
    std::int64_t group_total(const std::string& group) const;
};

// Sets every trainable flag according to the policy and returns the ledger.
// Vision, language and the caption decoder are frozen under every policy; the
// score head and prefix projection always train.
ParamLedger apply_policy(GroundingModel& model, const TrainingPolicy& policy);

ParamLedger build_ledger(const GroundingModel& model);

}  // namespace da4lg
