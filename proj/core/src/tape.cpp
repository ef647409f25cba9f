#include "da4lg/tape.hpp"

#include <cmath>

#include "da4lg/errors.hpp"

namespace da4lg::ad {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

int Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(const Mat& v, bool requires_grad) { return push(v, requires_grad, nullptr); }

int Tape::constant(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return leaf(m, false);
}

const Mat& Tape::grad(int id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0)
        throw StateError("gradient not computed for node " + std::to_string(id));
    return n.grad;
}

void Tape::accum(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
}

void Tape::backward(int root) {
    Node& r = nodes_[root];
    if (r.value.rows() != 1 || r.value.cols() != 1)
        throw ShapeError("backward root must be a scalar (1x1) node");
    if (!r.requires_grad)
        throw StateError("backward root does not require grad");
    r.grad = Mat::Ones(1, 1);
    for (int i = root; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.backprop && n.requires_grad && n.grad.size() != 0)
            n.backprop(*this, i);
    }
    // Leaves that require grad but were never reached get an explicit zero.
    for (int i = 0; i <= root; ++i) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.grad.size() == 0)
            n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
}

int Tape::add(int a, int b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
        throw ShapeError("add: operand shapes differ");
    bool rg = requires_grad(a) || requires_grad(b);
    return push(val(a) + val(b), rg, [a, b](Tape& t, int self) {
        t.accum(a, t.nodes_[self].grad);
        t.accum(b, t.nodes_[self].grad);
    });
}

int Tape::sub(int a, int b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
        throw ShapeError("sub: operand shapes differ");
    bool rg = requires_grad(a) || requires_grad(b);
    return push(val(a) - val(b), rg, [a, b](Tape& t, int self) {
        t.accum(a, t.nodes_[self].grad);
        t.accum(b, -t.nodes_[self].grad);
    });
}

int Tape::hadamard(int a, int b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
        throw ShapeError("hadamard: operand shapes differ");
    bool rg = requires_grad(a) || requires_grad(b);
    return push(val(a).cwiseProduct(val(b)), rg, [a, b](Tape& t, int self) {
        const Mat& g = t.nodes_[self].grad;
        t.accum(a, g.cwiseProduct(t.val(b)));
        t.accum(b, g.cwiseProduct(t.val(a)));
    });
}

int Tape::scale(int a, double s) {
    return push(val(a) * s, requires_grad(a), [a, s](Tape& t, int self) {
        t.accum(a, t.nodes_[self].grad * s);
    });
}

int Tape::cwise_log(int a) {
    return push(val(a).array().log().matrix(), requires_grad(a), [a](Tape& t, int self) {
        t.accum(a, t.nodes_[self].grad.cwiseQuotient(t.val(a)));
    });
}

int Tape::cwise_pow(int a, double p) {
    Mat v = val(a).array().pow(p).matrix();
    return push(std::move(v), requires_grad(a), [a, p](Tape& t, int self) {
        Mat d = p * t.val(a).array().pow(p - 1.0);
        t.accum(a, t.nodes_[self].grad.cwiseProduct(d));
    });
}

int Tape::cwise_max(int a, int b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
        throw ShapeError("cwise_max: operand shapes differ");
    bool rg = requires_grad(a) || requires_grad(b);
    return push(val(a).cwiseMax(val(b)), rg, [a, b](Tape& t, int self) {
        const Mat& g = t.nodes_[self].grad;
        // Ties route to the first operand.
        Mat maskA = (t.val(a).array() >= t.val(b).array()).cast<double>();
        t.accum(a, g.cwiseProduct(maskA));
        t.accum(b, g.cwiseProduct(Mat(Mat::Ones(maskA.rows(), maskA.cols()) - maskA)));
    });
}

int Tape::gelu(int a) {
    Mat v = val(a).unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
    return push(std::move(v), requires_grad(a), [a](Tape& t, int self) {
        Mat d = t.val(a).unaryExpr([](double x) {
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
        t.accum(a, t.nodes_[self].grad.cwiseProduct(d));
    });
}

int Tape::sigmoid(int a) {
    Mat v = val(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    return push(std::move(v), requires_grad(a), [a](Tape& t, int self) {
        const Mat& y = t.val(self);
        Mat d = y.cwiseProduct(Mat(Mat::Ones(y.rows(), y.cols()) - y));
        t.accum(a, t.nodes_[self].grad.cwiseProduct(d));
    });
}

int Tape::slice_rows(int a, int r0, int n) {
    if (r0 < 0 || r0 + n > val(a).rows()) throw ShapeError("slice_rows out of range");
    Eigen::Index cols = val(a).cols();
    return push(val(a).middleRows(r0, n), requires_grad(a), [a, r0, n, cols](Tape& t, int self) {
        Mat g = Mat::Zero(t.val(a).rows(), cols);
        g.middleRows(r0, n) = t.nodes_[self].grad;
        t.accum(a, g);
    });
}

int Tape::slice_cols(int a, int c0, int n) {
    if (c0 < 0 || c0 + n > val(a).cols()) throw ShapeError("slice_cols out of range");
    return push(val(a).middleCols(c0, n), requires_grad(a), [a, c0, n](Tape& t, int self) {
        Mat g = Mat::Zero(t.val(a).rows(), t.val(a).cols());
        g.middleCols(c0, n) = t.nodes_[self].grad;
        t.accum(a, g);
    });
}

int Tape::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: empty part list");
    Eigen::Index cols = val(parts[0]).cols();
    Eigen::Index rows = 0;
    bool rg = false;
    for (int p : parts) {
        if (val(p).cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += val(p).rows();
        rg = rg || requires_grad(p);
    }
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (int p : parts) {
        v.middleRows(at, val(p).rows()) = val(p);
        at += val(p).rows();
    }
    return push(std::move(v), rg, [parts](Tape& t, int self) {
        Eigen::Index at = 0;
        for (int p : parts) {
            Eigen::Index r = t.val(p).rows();
            t.accum(p, t.nodes_[self].grad.middleRows(at, r));
            at += r;
        }
    });
}

int Tape::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: empty part list");
    Eigen::Index rows = val(parts[0]).rows();
    Eigen::Index cols = 0;
    bool rg = false;
    for (int p : parts) {
        if (val(p).rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += val(p).cols();
        rg = rg || requires_grad(p);
    }
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (int p : parts) {
        v.middleCols(at, val(p).cols()) = val(p);
        at += val(p).cols();
    }
    return push(std::move(v), rg, [parts](Tape& t, int self) {
        Eigen::Index at = 0;
        for (int p : parts) {
            Eigen::Index c = t.val(p).cols();
            t.accum(p, t.nodes_[self].grad.middleCols(at, c));
            at += c;
        }
    });
}

int Tape::matmul(int a, int b) {
    if (val(a).cols() != val(b).rows()) throw ShapeError("matmul: inner dimensions differ");
    bool rg = requires_grad(a) || requires_grad(b);
    return push(val(a) * val(b), rg, [a, b](Tape& t, int self) {
        const Mat& g = t.nodes_[self].grad;
        t.accum(a, g * t.val(b).transpose());
        t.accum(b, t.val(a).transpose() * g);
    });
}

int Tape::transpose(int a) {
    return push(val(a).transpose(), requires_grad(a), [a](Tape& t, int self) {
        t.accum(a, t.nodes_[self].grad.transpose());
    });
}

int Tape::add_colwise(int a, int bias) {
    if (val(bias).cols() != 1 || val(bias).rows() != val(a).rows())
        throw ShapeError("add_colwise: bias must be d x 1 matching rows");
    Mat v = val(a);
    v.colwise() += Eigen::VectorXd(val(bias).col(0));
    bool rg = requires_grad(a) || requires_grad(bias);
    return push(std::move(v), rg, [a, bias](Tape& t, int self) {
        const Mat& g = t.nodes_[self].grad;
        t.accum(a, g);
        t.accum(bias, g.rowwise().sum());
    });
}

int Tape::dot(int a, int b) {
    if (val(a).cols() != 1 || val(b).cols() != 1 || val(a).rows() != val(b).rows())
        throw ShapeError("dot: operands must be equal-length column vectors");
    Mat v(1, 1);
    v(0, 0) = val(a).col(0).dot(val(b).col(0));
    bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(v), rg, [a, b](Tape& t, int self) {
        double g = t.nodes_[self].grad(0, 0);
        t.accum(a, g * t.val(b));
        t.accum(b, g * t.val(a));
    });
}

int Tape::cosine(int a, int b) {
    if (val(a).cols() != 1 || val(b).cols() != 1 || val(a).rows() != val(b).rows())
        throw ShapeError("cosine: operands must be equal-length column vectors");
    double na = val(a).norm();
    double nb = val(b).norm();
    if (na < 1e-12 || nb < 1e-12)
        throw NumericDomainError("cosine of a zero-norm vector is undefined");
    Mat v(1, 1);
    double c = val(a).col(0).dot(val(b).col(0)) / (na * nb);
    v(0, 0) = c;
    bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(v), rg, [a, b, na, nb, c](Tape& t, int self) {
        double g = t.nodes_[self].grad(0, 0);
        t.accum(a, g * (t.val(b) / (na * nb) - c * t.val(a) / (na * na)));
        t.accum(b, g * (t.val(a) / (na * nb) - c * t.val(b) / (nb * nb)));
    });
}

int Tape::mul_by_scalar_node(int a, int s) {
    if (val(s).rows() != 1 || val(s).cols() != 1) throw ShapeError("mul_by_scalar_node: s must be 1x1");
    double sv = val(s)(0, 0);
    bool rg = requires_grad(a) || requires_grad(s);
    return push(val(a) * sv, rg, [a, s, sv](Tape& t, int self) {
        const Mat& g = t.nodes_[self].grad;
        t.accum(a, g * sv);
        Mat gs(1, 1);
        gs(0, 0) = g.cwiseProduct(t.val(a)).sum();
        t.accum(s, gs);
    });
}

int Tape::div_by_scalar_node(int a, int s) {
    return mul_by_scalar_node(a, cwise_pow(s, -1.0));
}

int Tape::sum(int a) {
    Mat v(1, 1);
    v(0, 0) = val(a).sum();
    return push(std::move(v), requires_grad(a), [a](Tape& t, int self) {
        double g = t.nodes_[self].grad(0, 0);
        t.accum(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(), g));
    });
}

int Tape::mean(int a) {
    double n = static_cast<double>(val(a).size());
    return scale(sum(a), 1.0 / n);
}

int Tape::softmax_cols(int a) {
    Mat v = val(a);
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        Eigen::VectorXd col = v.col(j);
        double m = col.maxCoeff();
        col = (col.array() - m).exp();
        v.col(j) = col / col.sum();
    }
    return push(std::move(v), requires_grad(a), [a](Tape& t, int self) {
        const Mat& y = t.val(self);
        const Mat& g = t.nodes_[self].grad;
        Mat gx(y.rows(), y.cols());
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            double d = y.col(j).dot(g.col(j));
            gx.col(j) = y.col(j).cwiseProduct(g.col(j) - Eigen::VectorXd::Constant(y.rows(), d));
        }
        t.accum(a, gx);
    });
}

int Tape::layernorm_cols(int x, int gamma, int beta, double eps) {
    const Mat& xv = val(x);
    Eigen::Index d = xv.rows();
    if (val(gamma).rows() != d || val(beta).rows() != d || val(gamma).cols() != 1 || val(beta).cols() != 1)
        throw ShapeError("layernorm_cols: gamma/beta must be d x 1");
    Mat xhat(d, xv.cols());
    Eigen::VectorXd inv_sigma(xv.cols());
    for (Eigen::Index j = 0; j < xv.cols(); ++j) {
        double mu = xv.col(j).mean();
        Eigen::VectorXd c = xv.col(j).array() - mu;
        double var = c.squaredNorm() / static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma(j) = is;
        xhat.col(j) = c * is;
    }
    Mat v = (xhat.array().colwise() * val(gamma).col(0).array()).matrix();
    v.colwise() += Eigen::VectorXd(val(beta).col(0));
    bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    return push(std::move(v), rg, [x, gamma, beta, xhat, inv_sigma](Tape& t, int self) {
        const Mat& g = t.nodes_[self].grad;
        Eigen::Index d = xhat.rows();
        t.accum(beta, g.rowwise().sum());
        t.accum(gamma, g.cwiseProduct(xhat).rowwise().sum());
        Mat gx(d, xhat.cols());
        const Eigen::VectorXd gam = t.val(gamma).col(0);
        for (Eigen::Index j = 0; j < xhat.cols(); ++j) {
            Eigen::VectorXd gy = g.col(j).cwiseProduct(gam);
            double m1 = gy.mean();
            double m2 = gy.cwiseProduct(xhat.col(j)).mean();
            gx.col(j) = inv_sigma(j) *
                        (gy - Eigen::VectorXd::Constant(d, m1) - xhat.col(j) * m2);
        }
        t.accum(x, gx);
    });
}

int Tape::softmax_xent_cols(int logits, const std::vector<int>& targets) {
    const Mat& z = val(logits);
    if (static_cast<Eigen::Index>(targets.size()) != z.cols())
        throw ShapeError("softmax_xent_cols: one target per column required");
    Mat probs(z.rows(), z.cols());
    double nll = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        Eigen::VectorXd col = z.col(j);
        double m = col.maxCoeff();
        Eigen::VectorXd e = (col.array() - m).exp();
        double s = e.sum();
        probs.col(j) = e / s;
        int tgt = targets[j];
        if (tgt < 0 || tgt >= z.rows()) throw ArgumentError("softmax_xent_cols: target id out of range");
        nll -= (col(tgt) - m - std::log(s));
    }
    double n = static_cast<double>(z.cols());
    Mat v(1, 1);
    v(0, 0) = nll / n;
    return push(std::move(v), requires_grad(logits), [logits, targets, probs, n](Tape& t, int self) {
        double g = t.nodes_[self].grad(0, 0);
        Mat gz = probs;
        for (Eigen::Index j = 0; j < gz.cols(); ++j)
            gz(targets[j], j) -= 1.0;
        t.accum(logits, gz * (g / n));
    });
}

}  // namespace da4lg::ad
