#include "da4lg/encoder.hpp"

#include <cmath>
#include <random>

#include "da4lg/errors.hpp"

namespace da4lg {

const char* to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::vision: return "vision";
        case EncoderKind::language: return "language";
        case EncoderKind::domain: return "domain";
        default: return "caption_decoder";
    }
}

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "vision") return EncoderKind::vision;
    if (s == "language") return EncoderKind::language;
    if (s == "domain") return EncoderKind::domain;
    if (s == "caption_decoder") return EncoderKind::caption_decoder;
    throw ConfigError("unknown encoder kind '" + s + "'");
}

void EncoderConfig::validate(EncoderKind kind) const {
    if (embed_dim <= 0 || n_heads <= 0 || n_layers <= 0 || mlp_ratio <= 0 || output_dim <= 0)
        throw ConfigError("encoder dimensions must be positive");
    if (embed_dim % n_heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
    if (kind == EncoderKind::vision || kind == EncoderKind::domain) {
        if (image_size <= 0 || patch_size <= 0) throw ConfigError("image/patch size must be positive");
        if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
    } else {
        if (vocab_size <= 0) throw ConfigError("vocab_size must be positive for token encoders");
        if (max_tokens <= 0) throw ConfigError("max_tokens must be positive for token encoders");
    }
}

namespace {

std::string blk(int i, const char* suffix) { return "blocks." + std::to_string(i) + "." + suffix; }

void add_block_params(ParamStore& ps, const EncoderConfig& cfg, std::mt19937_64& rng, int i) {
    int d = cfg.embed_dim;
    int hidden = d * cfg.mlp_ratio;
    ps.add(blk(i, "ln1.g"), Mat::Ones(d, 1));
    ps.add(blk(i, "ln1.b"), Mat::Zero(d, 1));
    for (const char* p : {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"})
        ps.add(blk(i, p), normal_init(rng, d, d, 0.02));
    for (const char* p : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
        ps.add(blk(i, p), Mat::Zero(d, 1));
    ps.add(blk(i, "ln2.g"), Mat::Ones(d, 1));
    ps.add(blk(i, "ln2.b"), Mat::Zero(d, 1));
    ps.add(blk(i, "mlp.W1"), normal_init(rng, hidden, d, 0.02));
    ps.add(blk(i, "mlp.b1"), Mat::Zero(hidden, 1));
    ps.add(blk(i, "mlp.W2"), normal_init(rng, d, hidden, 0.02));
    ps.add(blk(i, "mlp.b2"), Mat::Zero(d, 1));
}

}  // namespace

EncoderState make_vision_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate(EncoderKind::vision);
    EncoderState st;
    st.kind = EncoderKind::vision;
    st.cfg = cfg;
    std::mt19937_64 rng(seed);
    st.params.add("patch_embed.W", normal_init(rng, cfg.embed_dim, cfg.patch_dim(), 0.02));
    st.params.add("patch_embed.b", Mat::Zero(cfg.embed_dim, 1));
    st.params.add("cls_token", normal_init(rng, cfg.embed_dim, 1, 0.02));
    st.params.add("pos_embed", normal_init(rng, cfg.embed_dim, 1 + cfg.n_patches(), 0.02));
    for (int i = 0; i < cfg.n_layers; ++i) add_block_params(st.params, cfg, rng, i);
    st.params.add("ln_f.g", Mat::Ones(cfg.embed_dim, 1));
    st.params.add("ln_f.b", Mat::Zero(cfg.embed_dim, 1));
    st.params.add("proj.W", normal_init(rng, cfg.output_dim, cfg.embed_dim, 0.02));
    return st;
}

EncoderState make_language_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate(EncoderKind::language);
    EncoderState st;
    st.kind = EncoderKind::language;
    st.cfg = cfg;
    std::mt19937_64 rng(seed);
    st.params.add("tok_embed", normal_init(rng, cfg.embed_dim, cfg.vocab_size, 0.02));
    st.params.add("pos_embed", normal_init(rng, cfg.embed_dim, cfg.max_tokens, 0.02));
    for (int i = 0; i < cfg.n_layers; ++i) add_block_params(st.params, cfg, rng, i);
    st.params.add("ln_f.g", Mat::Ones(cfg.embed_dim, 1));
    st.params.add("ln_f.b", Mat::Zero(cfg.embed_dim, 1));
    st.params.add("proj.W", normal_init(rng, cfg.output_dim, cfg.embed_dim, 0.02));
    return st;
}

EncoderState make_caption_decoder(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate(EncoderKind::caption_decoder);
    EncoderState st;
    st.kind = EncoderKind::caption_decoder;
    st.cfg = cfg;
    std::mt19937_64 rng(seed);
    st.params.add("tok_embed", normal_init(rng, cfg.embed_dim, cfg.vocab_size, 0.02));
    st.params.add("pos_embed", normal_init(rng, cfg.embed_dim, cfg.max_tokens, 0.02));
    for (int i = 0; i < cfg.n_layers; ++i) add_block_params(st.params, cfg, rng, i);
    st.params.add("ln_f.g", Mat::Ones(cfg.embed_dim, 1));
    st.params.add("ln_f.b", Mat::Zero(cfg.embed_dim, 1));
    st.params.add("lm_head.W", normal_init(rng, cfg.vocab_size, cfg.embed_dim, 0.02));
    return st;
}

std::int64_t adapter_param_count(const EncoderConfig& cfg, int rank) {
    return static_cast<std::int64_t>(cfg.n_layers) * 3 * 2 * cfg.embed_dim * rank;
}

EncoderState clone_as_domain_encoder(const EncoderState& vision, int rank, double alpha,
                                     std::uint64_t init_seed) {
    if (vision.kind != EncoderKind::vision)
        throw StateError("clone_as_domain_encoder requires a vision encoder source");
    if (vision.adapter) throw StateError("source encoder already carries an AdapterBank");
    if (rank < 1) throw ConfigError("adapter rank must be >= 1");
    if (rank >= vision.cfg.embed_dim)
        throw ConfigError("adapter rank must be smaller than embed_dim");

    EncoderState st;
    st.kind = EncoderKind::domain;
    st.cfg = vision.cfg;
    st.adapter = AdapterSpec{rank, alpha};
    for (int i = 0; i < vision.params.count(); ++i) {
        const Param& p = vision.params.at(i);
        st.params.add(p.name, p.value, false);
    }
    std::mt19937_64 rng(init_seed);
    int d = st.cfg.embed_dim;
    for (int i = 0; i < st.cfg.n_layers; ++i) {
        for (const char* p : {"attn.lora_q", "attn.lora_k", "attn.lora_v"}) {
            st.params.add(blk(i, (std::string(p) + ".A").c_str()), normal_init(rng, rank, d, 0.02), true);
            st.params.add(blk(i, (std::string(p) + ".B").c_str()), Mat::Zero(d, rank), true);
        }
    }
    return st;
}

EncoderState merge_adapter(const EncoderState& state) {
    if (!state.adapter) throw StateError("merge_adapter: encoder has no AdapterBank");
    EncoderState out;
    out.kind = state.kind;
    out.cfg = state.cfg;
    double scaling = state.adapter->alpha / state.adapter->rank;
    for (int i = 0; i < state.params.count(); ++i) {
        const Param& p = state.params.at(i);
        if (p.name.find(".lora_") != std::string::npos) continue;
        Mat v = p.value;
        if (p.name.find("attn.W") != std::string::npos && p.name.back() != 'o') {
            char which = p.name.back();  // q, k or v
            std::string prefix = p.name.substr(0, p.name.size() - 2);  // "blocks.i.attn."
            std::string lora = prefix + "lora_" + which;
            v += scaling * state.params.at(lora + ".B").value * state.params.at(lora + ".A").value;
        }
        out.params.add(p.name, std::move(v), p.trainable);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

int TapeBind::operator()(const std::string& name) {
    int pi = store_.index_of(name);
    auto it = bound_.find(pi);
    if (it != bound_.end()) return it->second;
    const Param& p = store_.at(pi);
    int id = tape_.leaf(p.value, with_grad_ && p.trainable);
    bound_[pi] = id;
    return id;
}

namespace {

// One pre-LN transformer block over X (d x N); returns the new X node.
int transformer_block(ad::Tape& t, TapeBind& bind, const EncoderState& enc, int i, int X,
                      const Mat* causal_mask, std::vector<Mat>* trace_heads) {
    const EncoderConfig& cfg = enc.cfg;
    int d = cfg.embed_dim, H = cfg.n_heads, dh = cfg.head_dim();
    auto P = [&](const char* s) { return bind(blk(i, s)); };

    int h = t.layernorm_cols(X, P("ln1.g"), P("ln1.b"));

    auto project = [&](const char* W, const char* b, const char* lora) {
        int y = t.matmul(P(W), h);
        if (enc.adapter) {
            std::string l(lora);
            int ax = t.matmul(bind(blk(i, (l + ".A").c_str())), h);
            int bax = t.matmul(bind(blk(i, (l + ".B").c_str())), ax);
            y = t.add(y, t.scale(bax, enc.adapter->alpha / enc.adapter->rank));
        }
        return t.add_colwise(y, P(b));
    };
    int Q = project("attn.Wq", "attn.bq", "attn.lora_q");
    int K = project("attn.Wk", "attn.bk", "attn.lora_k");
    int V = project("attn.Wv", "attn.bv", "attn.lora_v");

    std::vector<int> head_outputs;
    int mask_node = -1;
    if (causal_mask) mask_node = t.constant(*causal_mask);
    for (int head = 0; head < H; ++head) {
        int Qh = t.slice_rows(Q, head * dh, dh);
        int Kh = t.slice_rows(K, head * dh, dh);
        int Vh = t.slice_rows(V, head * dh, dh);
        int S = t.scale(t.matmul(t.transpose(Kh), Qh), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (causal_mask) S = t.add(S, mask_node);
        int A = t.softmax_cols(S);  // column q = attention of query q over keys
        if (trace_heads) trace_heads->push_back(t.val(A).transpose());
        head_outputs.push_back(t.matmul(Vh, A));
    }
    int O = t.concat_rows(head_outputs);
    int attn_out = t.add_colwise(t.matmul(P("attn.Wo"), O), P("attn.bo"));
    X = t.add(X, attn_out);

    int h2 = t.layernorm_cols(X, P("ln2.g"), P("ln2.b"));
    int m = t.add_colwise(t.matmul(P("mlp.W1"), h2), P("mlp.b1"));
    m = t.gelu(m);
    m = t.add_colwise(t.matmul(P("mlp.W2"), m), P("mlp.b2"));
    return t.add(X, m);
}

Mat causal_mask_for(int n) {
    Mat m = Mat::Zero(n, n);
    for (int q = 0; q < n; ++q)
        for (int k = q + 1; k < n; ++k)
            m(k, q) = -1e9;
    return m;
}

Mat image_patches(const EncoderConfig& cfg, const ViewImage& view) {
    if (view.width != cfg.image_size || view.height != cfg.image_size)
        throw ShapeError("view dimensions " + std::to_string(view.width) + "x" +
                         std::to_string(view.height) + " do not match encoder image_size " +
                         std::to_string(cfg.image_size));
    int g = cfg.grid(), ps = cfg.patch_size;
    Mat X(cfg.patch_dim(), cfg.n_patches());
    for (int py = 0; py < g; ++py) {
        for (int px = 0; px < g; ++px) {
            int col = py * g + px;
            int at = 0;
            for (int y = 0; y < ps; ++y)
                for (int x = 0; x < ps; ++x)
                    for (int c = 0; c < 3; ++c)
                        X(at++, col) = view.at(px * ps + x, py * ps + y, c) / 127.5 - 1.0;
        }
    }
    return X;
}

}  // namespace

int encode_image_on_tape(ad::Tape& t, TapeBind& bind, const EncoderState& enc, const ViewImage& view,
                         AttentionTrace* trace) {
    if (enc.kind != EncoderKind::vision && enc.kind != EncoderKind::domain)
        throw StateError("encode_image requires a vision or domain encoder");
    const EncoderConfig& cfg = enc.cfg;
    int patches = t.constant(image_patches(cfg, view));
    int emb = t.add_colwise(t.matmul(bind("patch_embed.W"), patches), bind("patch_embed.b"));
    int X = t.concat_cols({bind("cls_token"), emb});
    X = t.add(X, bind("pos_embed"));
    if (trace) trace->layers.assign(cfg.n_layers, {});
    for (int i = 0; i < cfg.n_layers; ++i)
        X = transformer_block(t, bind, enc, i, X, nullptr, trace ? &trace->layers[i] : nullptr);
    X = t.layernorm_cols(X, bind("ln_f.g"), bind("ln_f.b"));
    int pooled = t.slice_cols(X, 0, 1);  // class token
    return t.matmul(bind("proj.W"), pooled);
}

int encode_tokens_on_tape(ad::Tape& t, TapeBind& bind, const EncoderState& enc,
                          const std::vector<int>& tokens) {
    if (enc.kind != EncoderKind::language)
        throw StateError("encode_tokens requires a language encoder");
    const EncoderConfig& cfg = enc.cfg;
    int n = static_cast<int>(tokens.size());
    if (n == 0) throw ArgumentError("encode_tokens: empty token sequence");
    if (n > cfg.max_tokens) throw ShapeError("token sequence exceeds max_tokens");
    const Mat& emb = bind.store().at("tok_embed").value;
    const Mat& pos = bind.store().at("pos_embed").value;
    Mat X0(cfg.embed_dim, n);
    for (int j = 0; j < n; ++j) {
        if (tokens[j] < 0 || tokens[j] >= cfg.vocab_size)
            throw ArgumentError("token id out of range: " + std::to_string(tokens[j]));
        X0.col(j) = emb.col(tokens[j]) + pos.col(j);
    }
    int X = t.constant(X0);
    Mat mask = causal_mask_for(n);
    for (int i = 0; i < cfg.n_layers; ++i)
        X = transformer_block(t, bind, enc, i, X, &mask, nullptr);
    X = t.layernorm_cols(X, bind("ln_f.g"), bind("ln_f.b"));
    int pooled = t.slice_cols(X, n - 1, 1);  // final token
    return t.matmul(bind("proj.W"), pooled);
}

int decoder_logits_on_tape(ad::Tape& t, TapeBind& bind, const EncoderState& dec, int prefix_node,
                           const std::vector<int>& tokens) {
    if (dec.kind != EncoderKind::caption_decoder)
        throw StateError("decoder_logits requires a caption decoder");
    const EncoderConfig& cfg = dec.cfg;
    int N = static_cast<int>(tokens.size());
    if (N == 0) throw ArgumentError("decoder_logits: empty target token sequence");
    int K = static_cast<int>(t.val(prefix_node).cols());
    int n = K + N - 1;
    if (n > cfg.max_tokens) throw ShapeError("prefix plus caption exceeds decoder max_tokens");
    const Mat& emb = bind.store().at("tok_embed").value;
    Mat tok_cols(cfg.embed_dim, N - 1);
    for (int j = 0; j + 1 < N; ++j) {
        if (tokens[j] < 0 || tokens[j] >= cfg.vocab_size)
            throw ArgumentError("caption token id out of range: " + std::to_string(tokens[j]));
        tok_cols.col(j) = emb.col(tokens[j]);
    }
    int X = N > 1 ? t.concat_cols({prefix_node, t.constant(tok_cols)}) : prefix_node;
    X = t.add(X, t.constant(bind.store().at("pos_embed").value.leftCols(n)));
    Mat mask = causal_mask_for(n);
    for (int i = 0; i < cfg.n_layers; ++i)
        X = transformer_block(t, bind, dec, i, X, &mask, nullptr);
    X = t.layernorm_cols(X, bind("ln_f.g"), bind("ln_f.b"));
    int logits = t.matmul(bind("lm_head.W"), X);
    return t.slice_cols(logits, K - 1, N);
}

Mat encode_vision(const EncoderState& enc, const ViewImage& view) {
    if (enc.adapter) throw StateError("encode_vision requires an adapter-free encoder");
    ad::Tape t;
    TapeBind bind(t, const_cast<ParamStore&>(enc.params), false);
    return t.val(encode_image_on_tape(t, bind, enc, view));
}

Mat encode_language(const EncoderState& enc, const std::vector<int>& tokens) {
    ad::Tape t;
    TapeBind bind(t, const_cast<ParamStore&>(enc.params), false);
    return t.val(encode_tokens_on_tape(t, bind, enc, tokens));
}

Mat encode_domain(const EncoderState& enc, const ViewImage& view, AttentionTrace* trace) {
    if (enc.kind != EncoderKind::domain)
        throw StateError("encode_domain requires a domain encoder");
    ad::Tape t;
    TapeBind bind(t, const_cast<ParamStore&>(enc.params), false);
    return t.val(encode_image_on_tape(t, bind, enc, view, trace));
}

}  // namespace da4lg
