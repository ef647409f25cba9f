#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "da4lg/encoder.hpp"
#include "da4lg/params.hpp"
#include "da4lg/tape.hpp"

namespace da4lg {

enum class VlcMode { literal, infonce };
VlcMode vlc_mode_from_string(const std::string& s);
const char* to_string(VlcMode m);

struct TaskMask {
    bool lgr = true;
    bool vlc = true;
    bool vgc = true;
};
TaskMask task_mask_from_string(const std::string& s);  // e.g. "lgr,vlc,vgc"
std::string to_string(const TaskMask& m);

// Cosine similarity; throws NumericDomainError on zero-norm input.
double similarity(const Mat& a, const Mat& b);

// Binary cross-entropy on a sigmoid score.
double lgr_loss(double score, int label);
int lgr_loss_on_tape(ad::Tape& t, int score, double label);

struct ContrastiveBatch {
    Mat f_l_p;                   // positive description feature
    Mat f_o_p;                   // positive object feature
    std::vector<Mat> f_o_negs;   // Phi negative object features
    std::vector<Mat> f_l_negs;   // Phi negative description features
    VlcMode mode = VlcMode::infonce;
    double temperature = 0.07;
};

// One contrastive direction from precomputed similarities.
double vlc_direction(double s_pos, const std::vector<double>& s_negs, VlcMode mode, double tau);
// Both directions summed.
double vlc_loss(const ContrastiveBatch& batch);
// Tape variant over similarity nodes (each 1x1).
int vlc_direction_on_tape(ad::Tape& t, int s_pos, const std::vector<int>& s_negs, VlcMode mode,
                          double tau);

// f^o = elementwise max over the union of vision and domain view features.
Mat build_object_feature(const std::vector<Mat>& f_v_views, const std::vector<Mat>& f_d_views);

// Trainable ClipCap-style prefix projection: output_dim -> K decoder-width embeddings.
ParamStore make_prefix_projection(int output_dim, int prefix_tokens, int decoder_dim,
                                  std::uint64_t seed);

// Projects f^o into K prefix embeddings on the tape (decoder_dim x K node).
int prefix_embeddings_on_tape(ad::Tape& t, TapeBind& prefix, int f_o, int prefix_tokens,
                              int decoder_dim);

// Mean NLL of caption tokens under the frozen decoder conditioned on the prefix.
int vgc_loss_on_tape(ad::Tape& t, TapeBind& decoder_bind, TapeBind& prefix_bind,
                     const EncoderState& decoder, int f_o, const std::vector<int>& tokens,
                     int prefix_tokens);
double vgc_loss(const EncoderState& decoder, const ParamStore& prefix, const Mat& f_o,
                const std::vector<int>& tokens, int prefix_tokens);

// Greedy decoding for debugging only.
std::vector<int> greedy_caption(const EncoderState& decoder, const ParamStore& prefix, const Mat& f_o,
                                int prefix_tokens, int max_len);

// Unweighted sum of the enabled losses; LGR must be enabled.
double total_loss(double l_lgr, double l_vlc, double l_vgc, const TaskMask& mask);

}  // namespace da4lg
