#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "da4lg/dataset.hpp"
#include "da4lg/params.hpp"
#include "da4lg/tape.hpp"

namespace da4lg {

enum class EncoderKind { vision, language, domain, caption_decoder };
const char* to_string(EncoderKind k);
EncoderKind encoder_kind_from_string(const std::string& s);

struct EncoderConfig {
    int image_size = 32;
    int patch_size = 8;
    int embed_dim = 64;
    int n_heads = 4;
    int n_layers = 4;
    int mlp_ratio = 4;
    int vocab_size = 0;  // language / decoder only
    int max_tokens = 32;
    int output_dim = 64;

    int grid() const { return image_size / patch_size; }
    int n_patches() const { return grid() * grid(); }
    int patch_dim() const { return patch_size * patch_size * 3; }
    int head_dim() const { return embed_dim / n_heads; }
    void validate(EncoderKind kind) const;
};

struct AdapterSpec {
    int rank = 4;
    double alpha = 4.0;
};

// Per-layer, per-head attention weights recorded during a forward pass.
// Each matrix is (queries x keys); rows sum to 1.
struct AttentionTrace {
    std::vector<std::vector<Mat>> layers;
};

struct EncoderState {
    EncoderKind kind = EncoderKind::vision;
    EncoderConfig cfg;
    ParamStore params;
    std::optional<AdapterSpec> adapter;
};

EncoderState make_vision_encoder(const EncoderConfig& cfg, std::uint64_t seed);
EncoderState make_language_encoder(const EncoderConfig& cfg, std::uint64_t seed);
EncoderState make_caption_decoder(const EncoderConfig& cfg, std::uint64_t seed);

// Deep copy of the base parameters plus a fresh AdapterBank: A ~ N(0, 0.02^2)
// drawn from init_seed, B = 0, so the clone's outputs equal the source's.
EncoderState clone_as_domain_encoder(const EncoderState& vision, int rank, double alpha,
                                     std::uint64_t init_seed);

// Folds (alpha/rank) * B * A into the base Q/K/V weights and drops the adapters.
EncoderState merge_adapter(const EncoderState& state);

std::int64_t adapter_param_count(const EncoderConfig& cfg, int rank);

// Binds store parameters to tape leaves, one leaf per parameter per tape.
class TapeBind {
public:
    TapeBind(ad::Tape& tape, ParamStore& store, bool with_grad)
        : tape_(tape), store_(store), with_grad_(with_grad) {}
    int operator()(const std::string& name);
    ParamStore& store() { return store_; }
    // Pulls the accumulated gradient for a bound parameter after backward().
    const std::unordered_map<int, int>& bound() const { return bound_; }

private:
    ad::Tape& tape_;
    ParamStore& store_;
    bool with_grad_;
    std::unordered_map<int, int> bound_;  // param index -> node id
};

// Tape-level forwards (used by training); return the node id of the pooled
// projected feature (output_dim x 1).
int encode_image_on_tape(ad::Tape& t, TapeBind& bind, const EncoderState& enc, const ViewImage& view,
                         AttentionTrace* trace = nullptr);
int encode_tokens_on_tape(ad::Tape& t, TapeBind& bind, const EncoderState& enc,
                          const std::vector<int>& tokens);
// Caption decoder: prefix (d_dec x K node) + teacher-forced tokens c_1..c_N.
// Returns the logits node (vocab x N), column i scoring c_{i+1}.
int decoder_logits_on_tape(ad::Tape& t, TapeBind& bind, const EncoderState& dec, int prefix_node,
                           const std::vector<int>& tokens);

// Gradient-free convenience wrappers.
Mat encode_vision(const EncoderState& enc, const ViewImage& view);
Mat encode_language(const EncoderState& enc, const std::vector<int>& tokens);
Mat encode_domain(const EncoderState& enc, const ViewImage& view, AttentionTrace* trace = nullptr);

}  // namespace da4lg
