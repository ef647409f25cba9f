#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "da4lg/dataset.hpp"
#include "da4lg/encoder.hpp"
#include "da4lg/params.hpp"
#include "da4lg/tape.hpp"

namespace da4lg {

// Score head: MLP over [f^l, f^v, f^d] (3 x output_dim wide) with two GELU
// hidden layers and a sigmoid output.
ParamStore make_score_head(int output_dim, int hidden_dim, std::uint64_t seed);

// Softmax over per-view cosine similarity to f^l; returns the weight node (J x 1).
int reweight_weights_on_tape(ad::Tape& t, const std::vector<int>& fd_views, int fl);
std::vector<int> reweight_on_tape(ad::Tape& t, const std::vector<int>& fd_views, int fl);
int aggregate_on_tape(ad::Tape& t, const std::vector<int>& views);  // elementwise max
int fuse_and_score_on_tape(ad::Tape& t, TapeBind& head, int fl, int fv, int fd);

// Plain-value variants (no gradients).
Eigen::VectorXd reweight_weights(const std::vector<Mat>& fd_views, const Mat& fl);
std::vector<Mat> reweight(const std::vector<Mat>& fd_views, const Mat& fl);
Mat aggregate(const std::vector<Mat>& views);

struct EmbeddingBundle {
    Mat f_l;
    std::vector<Mat> f_v_views;
    std::vector<Mat> f_d_views;
    std::vector<Mat> f_d_reweighted;
    Mat f_v;     // agg over f_v_views
    Mat f_d;     // agg over reweighted domain views
    Mat f_o;     // agg over the union of f_v_views and f_d_views (contrastive feature)
    Mat fused;   // [f_l; f_v; f_d]
};

EmbeddingBundle build_bundle(const Mat& f_l, const std::vector<Mat>& f_v_views,
                             const std::vector<Mat>& f_d_views);

double fuse_and_score(const EmbeddingBundle& bundle, const ParamStore& head);

// Argmax over candidate scores; ties break to the lexicographically smaller id.
std::string predict(const ReferenceRecord& reference, const std::map<std::string, double>& scores);

}  // namespace da4lg
