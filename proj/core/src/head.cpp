#include "da4lg/head.hpp"

#include <random>

#include "da4lg/errors.hpp"

namespace da4lg {

ParamStore make_score_head(int output_dim, int hidden_dim, std::uint64_t seed) {
    if (output_dim <= 0 || hidden_dim <= 0) throw ConfigError("score head dimensions must be positive");
    std::mt19937_64 rng(seed);
    ParamStore ps;
    ps.add("mlp.W1", normal_init(rng, hidden_dim, 3 * output_dim, 0.02), true);
    ps.add("mlp.b1", Mat::Zero(hidden_dim, 1), true);
    ps.add("mlp.W2", normal_init(rng, hidden_dim, hidden_dim, 0.02), true);
    ps.add("mlp.b2", Mat::Zero(hidden_dim, 1), true);
    ps.add("mlp.W3", normal_init(rng, 1, hidden_dim, 0.02), true);
    ps.add("mlp.b3", Mat::Zero(1, 1), true);
    return ps;
}

int reweight_weights_on_tape(ad::Tape& t, const std::vector<int>& fd_views, int fl) {
    if (fd_views.empty()) throw ArgumentError("reweight: no views");
    std::vector<int> sims;
    sims.reserve(fd_views.size());
    for (int v : fd_views) sims.push_back(t.cosine(v, fl));
    return t.softmax_cols(t.concat_rows(sims));
}

std::vector<int> reweight_on_tape(ad::Tape& t, const std::vector<int>& fd_views, int fl) {
    int w = reweight_weights_on_tape(t, fd_views, fl);
    std::vector<int> out;
    out.reserve(fd_views.size());
    for (std::size_t j = 0; j < fd_views.size(); ++j)
        out.push_back(t.mul_by_scalar_node(fd_views[j], t.slice_rows(w, static_cast<int>(j), 1)));
    return out;
}

int aggregate_on_tape(ad::Tape& t, const std::vector<int>& views) {
    if (views.empty()) throw ArgumentError("aggregate: empty view list");
    int acc = views[0];
    for (std::size_t j = 1; j < views.size(); ++j) acc = t.cwise_max(acc, views[j]);
    return acc;
}

int fuse_and_score_on_tape(ad::Tape& t, TapeBind& head, int fl, int fv, int fd) {
    int f = t.concat_rows({fl, fv, fd});
    int h = t.gelu(t.add(t.matmul(head("mlp.W1"), f), head("mlp.b1")));
    h = t.gelu(t.add(t.matmul(head("mlp.W2"), h), head("mlp.b2")));
    int z = t.add(t.matmul(head("mlp.W3"), h), head("mlp.b3"));
    return t.sigmoid(z);
}

Eigen::VectorXd reweight_weights(const std::vector<Mat>& fd_views, const Mat& fl) {
    ad::Tape t;
    std::vector<int> ids;
    for (const auto& v : fd_views) ids.push_back(t.constant(v));
    int w = reweight_weights_on_tape(t, ids, t.constant(fl));
    return t.val(w).col(0);
}

std::vector<Mat> reweight(const std::vector<Mat>& fd_views, const Mat& fl) {
    Eigen::VectorXd w = reweight_weights(fd_views, fl);
    std::vector<Mat> out;
    out.reserve(fd_views.size());
    for (std::size_t j = 0; j < fd_views.size(); ++j) out.push_back(fd_views[j] * w(static_cast<int>(j)));
    return out;
}

Mat aggregate(const std::vector<Mat>& views) {
    if (views.empty()) throw ArgumentError("aggregate: empty view list");
    Mat acc = views[0];
    for (std::size_t j = 1; j < views.size(); ++j) {
        if (views[j].rows() != acc.rows() || views[j].cols() != acc.cols())
            throw ShapeError("aggregate: view vector lengths differ");
        acc = acc.cwiseMax(views[j]);
    }
    return acc;
}

EmbeddingBundle build_bundle(const Mat& f_l, const std::vector<Mat>& f_v_views,
                             const std::vector<Mat>& f_d_views) {
    if (f_v_views.empty() || f_d_views.empty())
        throw ArgumentError("build_bundle: view feature lists must be non-empty");
    EmbeddingBundle b;
    b.f_l = f_l;
    b.f_v_views = f_v_views;
    b.f_d_views = f_d_views;
    b.f_d_reweighted = reweight(f_d_views, f_l);
    b.f_v = aggregate(f_v_views);
    b.f_d = aggregate(b.f_d_reweighted);
    std::vector<Mat> all = f_v_views;
    all.insert(all.end(), f_d_views.begin(), f_d_views.end());
    b.f_o = aggregate(all);
    b.fused = Mat(f_l.rows() * 3, 1);
    b.fused << b.f_l, b.f_v, b.f_d;
    return b;
}

double fuse_and_score(const EmbeddingBundle& bundle, const ParamStore& head) {
    ad::Tape t;
    TapeBind bind(t, const_cast<ParamStore&>(head), false);
    int s = fuse_and_score_on_tape(t, bind, t.constant(bundle.f_l), t.constant(bundle.f_v),
                                   t.constant(bundle.f_d));
    return t.val(s)(0, 0);
}

std::string predict(const ReferenceRecord& reference, const std::map<std::string, double>& scores) {
    for (const auto& c : reference.candidates)
        if (!scores.count(c))
            throw ArgumentError("predict: missing score for candidate " + c);
    if (scores.size() != 2) throw ArgumentError("predict: scores must cover exactly the two candidates");
    const std::string& a = reference.candidates[0];
    const std::string& b = reference.candidates[1];
    double sa = scores.at(a), sb = scores.at(b);
    if (sa > sb) return a;
    if (sb > sa) return b;
    return a < b ? a : b;
}

}  // namespace da4lg
