#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace da4lg::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode autodiff over dense double matrices. Nodes are appended in
// evaluation order, so reverse iteration is a valid topological order for
// the backward sweep. Node ids are indices into the tape.
class Tape {
public:
    int leaf(const Mat& v, bool requires_grad);
    int constant(const Mat& v) { return leaf(v, false); }
    int constant(double v);

    const Mat& val(int id) const { return nodes_[id].value; }
    const Mat& grad(int id) const;
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Elementwise / structural ops
    int add(int a, int b);
    int sub(int a, int b);
    int hadamard(int a, int b);
    int scale(int a, double s);
    int cwise_log(int a);
    int cwise_pow(int a, double p);
    int cwise_max(int a, int b);
    int gelu(int a);
    int sigmoid(int a);
    int slice_rows(int a, int r0, int n);
    int slice_cols(int a, int c0, int n);
    int concat_rows(const std::vector<int>& parts);
    int concat_cols(const std::vector<int>& parts);

    // Linear algebra
    int matmul(int a, int b);
    int transpose(int a);
    int add_colwise(int a, int bias);  // bias is d x 1, broadcast over columns
    int dot(int a, int b);             // column vectors -> 1x1
    int cosine(int a, int b);          // column vectors -> 1x1; throws on zero norm
    int mul_by_scalar_node(int a, int s);  // s is a 1x1 node
    int div_by_scalar_node(int a, int s);

    // Reductions / nonlinear blocks
    int sum(int a);   // 1x1
    int mean(int a);  // 1x1
    int softmax_cols(int a);
    int layernorm_cols(int x, int gamma, int beta, double eps = 1e-5);
    // Mean NLL over columns of `logits` (vocab x N) against one target id per column.
    int softmax_xent_cols(int logits, const std::vector<int>& targets);

    // Seeds d(root)/d(root)=1 and propagates to every requires_grad node.
    // root must be 1x1.
    void backward(int root);

private:
    struct Node {
        Mat value;
        Mat grad;  // allocated lazily during backward
        bool requires_grad = false;
        std::function<void(Tape&, int)> backprop;  // null for leaves
    };

    int push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backprop);
    void accum(int id, const Mat& g);

    std::vector<Node> nodes_;
};

}  // namespace da4lg::ad
