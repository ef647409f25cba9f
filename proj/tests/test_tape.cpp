#include <doctest.h>

#include <cmath>
#include <random>

#include "da4lg/errors.hpp"
#include "da4lg/tape.hpp"

using da4lg::ad::Mat;
using da4lg::ad::Tape;

namespace {

// Central finite differences on one scalar input of a scalar-valued builder.
// The builder receives a fresh tape and the perturbed copy of `x` and must
// return the id of a 1x1 node.
double fd_entry(const Mat& x, int r, int c,
                const std::function<int(Tape&, const Mat&)>& build, double h = 1e-5) {
    Mat hi = x, lo = x;
    hi(r, c) += h;
    lo(r, c) -= h;
    Tape th, tl;
    double fh = th.val(build(th, hi))(0, 0);
    double fl = tl.val(build(tl, lo))(0, 0);
    return (fh - fl) / (2 * h);
}

void check_grad(const Mat& x, const std::function<int(Tape&, const Mat&)>& build,
                double tol = 1e-6) {
    Tape t;
    int leaf = -1;
    int root = build(t, x);
    // the builder is expected to create exactly one requires_grad leaf: find it
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t.requires_grad(static_cast<int>(i)) && t.val(static_cast<int>(i)).rows() == x.rows() &&
            t.val(static_cast<int>(i)).cols() == x.cols() && t.val(static_cast<int>(i)) == x) {
            leaf = static_cast<int>(i);
            break;
        }
    REQUIRE(leaf >= 0);
    t.backward(root);
    const Mat& g = t.grad(leaf);
    for (int r = 0; r < x.rows(); ++r)
        for (int c = 0; c < x.cols(); ++c) {
            double fd = fd_entry(x, r, c, build);
            double denom = std::max({std::abs(fd), std::abs(g(r, c)), 1.0});
            CHECK(std::abs(g(r, c) - fd) / denom < tol);
        }
}

Mat randn(int rows, int cols, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = d(rng);
    return m;
}

}  // namespace

TEST_CASE("forward values of elementary ops") {
    Tape t;
    Mat a(2, 2), b(2, 2);
    a << 1, 2, 3, 4;
    b << 5, 6, 7, 8;
    int na = t.constant(a), nb = t.constant(b);

    CHECK(t.val(t.add(na, nb))(1, 1) == doctest::Approx(12.0));
    CHECK(t.val(t.sub(nb, na))(0, 0) == doctest::Approx(4.0));
    CHECK(t.val(t.hadamard(na, nb))(1, 0) == doctest::Approx(21.0));
    CHECK(t.val(t.scale(na, -2.0))(0, 1) == doctest::Approx(-4.0));
    CHECK(t.val(t.matmul(na, nb))(0, 0) == doctest::Approx(19.0));
    CHECK(t.val(t.transpose(na))(0, 1) == doctest::Approx(3.0));
    CHECK(t.val(t.sum(na))(0, 0) == doctest::Approx(10.0));
    CHECK(t.val(t.mean(na))(0, 0) == doctest::Approx(2.5));
}

TEST_CASE("gelu matches the exact erf form at pinned points") {
    Tape t;
    Mat x(1, 3);
    x << 1.0, -1.0, 0.0;
    const Mat& y = t.val(t.gelu(t.constant(x)));
    CHECK(y(0, 0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(y(0, 1) == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
    CHECK(y(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("softmax over a column is the logistic pair for logits {1, 0}") {
    Tape t;
    Mat x(2, 1);
    x << 1.0, 0.0;
    const Mat& p = t.val(t.softmax_cols(t.constant(x)));
    CHECK(p(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(p(1, 0) == doctest::Approx(0.2689414213699951).epsilon(1e-12));
    CHECK(p.col(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax is invariant to a constant shift and handles large logits") {
    Tape t;
    Mat x(3, 1), shifted(3, 1);
    x << 2.0, -1.0, 0.5;
    shifted = x.array() + 1000.0;
    Mat p = t.val(t.softmax_cols(t.constant(x)));
    Mat q = t.val(t.softmax_cols(t.constant(shifted)));
    CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::isfinite(q(0, 0)));
}

TEST_CASE("layernorm normalizes each column") {
    Tape t;
    Mat x(3, 2);
    x << 1, 10, 2, 20, 3, 30;
    int g = t.constant(Mat::Ones(3, 1));
    int b = t.constant(Mat::Zero(3, 1));
    const Mat& y = t.val(t.layernorm_cols(t.constant(x), g, b));
    CHECK(y(0, 0) == doctest::Approx(-1.2247356859083902).epsilon(1e-10));
    CHECK(y(1, 0) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(y(2, 0) == doctest::Approx(1.2247356859083902).epsilon(1e-10));
    for (int c = 0; c < 2; ++c) CHECK(y.col(c).sum() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("cosine of known vectors") {
    Tape t;
    Mat a(2, 1), b(2, 1);
    a << 1, 0;
    b << 1, 1;
    CHECK(t.val(t.cosine(t.constant(a), t.constant(b)))(0, 0) ==
          doctest::Approx(0.7071067811865475).epsilon(1e-12));
}

TEST_CASE("cosine refuses near-zero vectors") {
    Tape t;
    Mat a = Mat::Zero(3, 1), b = Mat::Ones(3, 1);
    CHECK_THROWS_AS(t.cosine(t.constant(a), t.constant(b)), da4lg::NumericDomainError);
}

TEST_CASE("softmax cross-entropy closed form") {
    Tape t;
    Mat logits(3, 1);
    logits << 1, 2, 3;
    double loss = t.val(t.softmax_xent_cols(t.constant(logits), {0}))(0, 0);
    CHECK(loss == doctest::Approx(2.40760596444438).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar roots") {
    Tape t;
    int n = t.leaf(Mat::Ones(2, 2), true);
    CHECK_THROWS_AS(t.backward(n), da4lg::ShapeError);
}

TEST_CASE("unreached leaves get zero gradients") {
    Tape t;
    int used = t.leaf(Mat::Ones(2, 1), true);
    int orphan = t.leaf(Mat::Ones(3, 1), true);
    t.backward(t.sum(used));
    CHECK(t.grad(orphan).isZero());
    CHECK(t.grad(used).isApprox(Mat::Ones(2, 1)));
}

TEST_CASE("cwise_max ties route gradient to the first operand") {
    Tape t;
    Mat v = Mat::Constant(2, 1, 3.0);
    int a = t.leaf(v, true);
    int b = t.leaf(v, true);
    t.backward(t.sum(t.cwise_max(a, b)));
    CHECK(t.grad(a).isApprox(Mat::Ones(2, 1)));
    CHECK(t.grad(b).isZero());
}

TEST_CASE("gradients match central finite differences") {
    Mat x = randn(3, 4, 11);

    SUBCASE("sum of hadamard square") {
        check_grad(x, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.sum(t.hadamard(n, n));
        });
    }
    SUBCASE("matmul against a constant") {
        Mat w = randn(5, 3, 12);
        check_grad(x, [w](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.sum(t.matmul(t.constant(w), n));
        });
    }
    SUBCASE("gelu chain") {
        check_grad(x, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.mean(t.gelu(t.scale(n, 0.7)));
        }, 1e-5);
    }
    SUBCASE("sigmoid") {
        check_grad(x, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.mean(t.sigmoid(n));
        });
    }
    SUBCASE("log of shifted square") {
        check_grad(x, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            int sq = t.add(t.hadamard(n, n), t.constant(Mat::Ones(v.rows(), v.cols())));
            return t.sum(t.cwise_log(sq));
        });
    }
    SUBCASE("cwise_pow") {
        Mat pos = x.cwiseAbs();
        pos.array() += 0.5;
        check_grad(pos, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.sum(t.cwise_pow(n, 1.7));
        });
    }
    SUBCASE("softmax then weighted sum") {
        Mat col = randn(5, 1, 13);
        Mat w = randn(5, 1, 14);
        check_grad(col, [w](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.dot(t.softmax_cols(n), t.constant(w));
        });
    }
    SUBCASE("layernorm") {
        check_grad(x, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            int g = t.constant(randn(v.rows(), 1, 15));
            int b = t.constant(randn(v.rows(), 1, 16));
            return t.mean(t.layernorm_cols(n, g, b));
        }, 1e-4);
    }
    SUBCASE("cosine") {
        Mat a = randn(6, 1, 17);
        Mat b = randn(6, 1, 18);
        check_grad(a, [b](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.cosine(n, t.constant(b));
        });
    }
    SUBCASE("cross-entropy wrt logits") {
        Mat logits = randn(6, 3, 19);
        check_grad(logits, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.softmax_xent_cols(n, {2, 0, 4});
        });
    }
    SUBCASE("slices and concats compose") {
        check_grad(x, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            int top = t.slice_rows(n, 0, 2);
            int bottom = t.slice_rows(n, 2, 1);
            int back = t.concat_rows({bottom, top});
            int left = t.slice_cols(back, 0, 2);
            int right = t.slice_cols(back, 2, 2);
            return t.sum(t.hadamard(left, right));
        });
    }
    SUBCASE("scalar node division") {
        Mat col = randn(4, 1, 21).cwiseAbs();
        col.array() += 1.0;
        check_grad(col, [](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            int s = t.sum(n);
            return t.mean(t.div_by_scalar_node(n, s));
        });
    }
    SUBCASE("add_colwise broadcast") {
        Mat bias = randn(3, 1, 22);
        check_grad(x, [bias](Tape& t, const Mat& v) {
            int n = t.leaf(v, true);
            return t.sum(t.gelu(t.add_colwise(n, t.constant(bias))));
        }, 1e-5);
    }
}

TEST_CASE("gradient accumulates when a node is reused") {
    Tape t;
    Mat v = Mat::Constant(1, 1, 2.0);
    int x = t.leaf(v, true);
    // f(x) = x*x + 3x => f'(2) = 2*2 + 3 = 7
    int root = t.add(t.hadamard(x, x), t.scale(x, 3.0));
    t.backward(root);
    CHECK(t.grad(x)(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("shape mismatches throw early") {
    Tape t;
    int a = t.constant(Mat::Ones(2, 2));
    int b = t.constant(Mat::Ones(3, 2));
    CHECK_THROWS_AS(t.add(a, b), da4lg::ShapeError);
    CHECK_THROWS_AS(t.matmul(a, b), da4lg::ShapeError);
    CHECK_THROWS_AS(t.dot(a, b), da4lg::ShapeError);
}
