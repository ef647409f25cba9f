#include "da4lg/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "da4lg/errors.hpp"
#include "da4lg/head.hpp"

namespace da4lg {

VlcMode vlc_mode_from_string(const std::string& s) {
    if (s == "literal") return VlcMode::literal;
    if (s == "infonce") return VlcMode::infonce;
    throw ConfigError("unknown vlc_mode '" + s + "'");
}

const char* to_string(VlcMode m) { return m == VlcMode::literal ? "literal" : "infonce"; }

TaskMask task_mask_from_string(const std::string& s) {
    TaskMask m{false, false, false};
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
        if (tok == "lgr") m.lgr = true;
        else if (tok == "vlc") m.vlc = true;
        else if (tok == "vgc") m.vgc = true;
        else if (!tok.empty()) throw ConfigError("unknown task '" + tok + "' in task_mask");
    }
    if (!m.lgr) throw ConfigError("task_mask must include lgr (it is the primary task)");
    return m;
}

std::string to_string(const TaskMask& m) {
    std::string s = "lgr";
    if (m.vlc) s += ",vlc";
    if (m.vgc) s += ",vgc";
    return s;
}

double similarity(const Mat& a, const Mat& b) {
    ad::Tape t;
    return t.val(t.cosine(t.constant(a), t.constant(b)))(0, 0);
}

double lgr_loss(double score, int label) {
    if (score <= 0.0 || score >= 1.0)
        throw NumericDomainError("lgr_loss requires a score strictly inside (0,1)");
    return -(label * std::log(score) + (1 - label) * std::log(1.0 - score));
}

int lgr_loss_on_tape(ad::Tape& t, int score, double label) {
    int one = t.constant(Mat::Ones(1, 1));
    int term_pos = t.scale(t.cwise_log(score), -label);
    int term_neg = t.scale(t.cwise_log(t.sub(one, score)), -(1.0 - label));
    return t.add(term_pos, term_neg);
}

int vlc_direction_on_tape(ad::Tape& t, int s_pos, const std::vector<int>& s_negs, VlcMode mode,
                          double tau) {
    if (s_negs.empty()) throw ArgumentError("vlc direction requires at least one negative");
    if (mode == VlcMode::infonce) {
        if (tau <= 0.0) throw ConfigError("vlc temperature must be positive");
        std::vector<int> sims{s_pos};
        sims.insert(sims.end(), s_negs.begin(), s_negs.end());
        int logits = t.scale(t.concat_rows(sims), 1.0 / tau);
        return t.softmax_xent_cols(logits, {0});
    }
    // Literal printed form: -log( s_pos / (s_pos + sum s_neg) ), defined only
    // for positive ratio terms.
    if (t.val(s_pos)(0, 0) <= 0.0)
        throw NumericDomainError("literal contrastive loss: positive similarity is not positive");
    int denom = s_pos;
    for (int n : s_negs) denom = t.add(denom, n);
    if (t.val(denom)(0, 0) <= 0.0)
        throw NumericDomainError("literal contrastive loss: similarity sum is not positive");
    return t.sub(t.cwise_log(denom), t.cwise_log(s_pos));
}

double vlc_direction(double s_pos, const std::vector<double>& s_negs, VlcMode mode, double tau) {
    ad::Tape t;
    std::vector<int> negs;
    for (double s : s_negs) negs.push_back(t.constant(Mat::Constant(1, 1, s)));
    return t.val(vlc_direction_on_tape(t, t.constant(Mat::Constant(1, 1, s_pos)), negs, mode, tau))(0, 0);
}

double vlc_loss(const ContrastiveBatch& batch) {
    if (batch.f_o_negs.empty() || batch.f_l_negs.empty())
        throw ArgumentError("contrastive batch requires at least one negative in each direction");
    double s_pos = similarity(batch.f_l_p, batch.f_o_p);
    std::vector<double> obj_negs, lang_negs;
    for (const auto& n : batch.f_o_negs) obj_negs.push_back(similarity(batch.f_l_p, n));
    for (const auto& n : batch.f_l_negs) lang_negs.push_back(similarity(n, batch.f_o_p));
    return vlc_direction(s_pos, obj_negs, batch.mode, batch.temperature) +
           vlc_direction(s_pos, lang_negs, batch.mode, batch.temperature);
}

Mat build_object_feature(const std::vector<Mat>& f_v_views, const std::vector<Mat>& f_d_views) {
    if (f_v_views.empty() || f_d_views.empty())
        throw ArgumentError("build_object_feature: view lists must be non-empty");
    std::vector<Mat> all = f_v_views;
    all.insert(all.end(), f_d_views.begin(), f_d_views.end());
    return aggregate(all);
}

ParamStore make_prefix_projection(int output_dim, int prefix_tokens, int decoder_dim,
                                  std::uint64_t seed) {
    if (prefix_tokens < 1) throw ConfigError("prefix_tokens must be >= 1");
    std::mt19937_64 rng(seed);
    ParamStore ps;
    ps.add("prefix.W", normal_init(rng, prefix_tokens * decoder_dim, output_dim, 0.02), true);
    ps.add("prefix.b", Mat::Zero(prefix_tokens * decoder_dim, 1), true);
    return ps;
}

int prefix_embeddings_on_tape(ad::Tape& t, TapeBind& prefix, int f_o, int prefix_tokens,
                              int decoder_dim) {
    int p = t.add(t.matmul(prefix("prefix.W"), f_o), prefix("prefix.b"));
    std::vector<int> cols;
    for (int k = 0; k < prefix_tokens; ++k)
        cols.push_back(t.slice_rows(p, k * decoder_dim, decoder_dim));
    return t.concat_cols(cols);
}

int vgc_loss_on_tape(ad::Tape& t, TapeBind& decoder_bind, TapeBind& prefix_bind,
                     const EncoderState& decoder, int f_o, const std::vector<int>& tokens,
                     int prefix_tokens) {
    if (tokens.empty()) throw ArgumentError("vgc_loss: caption has no tokens");
    int P = prefix_embeddings_on_tape(t, prefix_bind, f_o, prefix_tokens, decoder.cfg.embed_dim);
    int logits = decoder_logits_on_tape(t, decoder_bind, decoder, P, tokens);
    return t.softmax_xent_cols(logits, tokens);
}

double vgc_loss(const EncoderState& decoder, const ParamStore& prefix, const Mat& f_o,
                const std::vector<int>& tokens, int prefix_tokens) {
    ad::Tape t;
    TapeBind db(t, const_cast<ParamStore&>(decoder.params), false);
    TapeBind pb(t, const_cast<ParamStore&>(prefix), false);
    return t.val(vgc_loss_on_tape(t, db, pb, decoder, t.constant(f_o), tokens, prefix_tokens))(0, 0);
}

std::vector<int> greedy_caption(const EncoderState& decoder, const ParamStore& prefix, const Mat& f_o,
                                int prefix_tokens, int max_len) {
    std::vector<int> out{1};  // BOS
    while (static_cast<int>(out.size()) < max_len) {
        ad::Tape t;
        TapeBind db(t, const_cast<ParamStore&>(decoder.params), false);
        TapeBind pb(t, const_cast<ParamStore&>(prefix), false);
        int P = prefix_embeddings_on_tape(t, pb, t.constant(f_o), prefix_tokens, decoder.cfg.embed_dim);
        std::vector<int> probe = out;
        probe.push_back(0);  // placeholder for the predicted position (never embedded)
        int logits = decoder_logits_on_tape(t, db, decoder, P, probe);
        const Mat& z = t.val(logits);
        Eigen::Index best = 0;
        z.col(z.cols() - 1).maxCoeff(&best);
        out.push_back(static_cast<int>(best));
        if (best == 2) break;  // EOS
    }
    return out;
}

double total_loss(double l_lgr, double l_vlc, double l_vgc, const TaskMask& mask) {
    if (!mask.lgr) throw ConfigError("total_loss: task mask must include the primary LGR task");
    double total = l_lgr;
    if (mask.vlc) total += l_vlc;
    if (mask.vgc) total += l_vgc;
    return total;
}

}  // namespace da4lg
