#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "trajkit/error.hpp"

namespace trajkit::ad {

using Mat = Eigen::MatrixXd;

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Add,
    AddRowVec,  // broadcast a 1xC row over every row of a
    Sub,
    Mul,        // elementwise
    Scale,      // constant scalar multiple
    Relu,
    Tanh,
    Sum,
    Mean,
    Mse,        // mean over all entries of squared difference
    SumSq,      // squared L2 norm over all entries
    Cosine,     // cosine similarity of two same-shaped operands, flattened
    LogSumExp,  // over all entries
    ConcatCols,
    RowPick,    // single row as 1xC
    RowNormalize,
    StyleNce,   // fused supervised contrastive loss over embedding rows
};

// Handle into a Tape. Nodes are identified by their topological id: creation
// order is a valid topological order of the define-by-run graph.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Per-node payload for the fused contrastive op.
struct NcePayload {
    std::vector<int> env_labels;
    double tau = 0.1;
};

// Reverse-mode tape over dense f64 matrices. One tape is confined to a single
// thread; a fresh tape is built per example/batch.
class Tape {
public:
    Value leaf(Mat m);
    Value scalar(double v);

    Value matmul(Value a, Value b);
    Value add(Value a, Value b);
    Value add_rowvec(Value a, Value row);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double s);
    Value relu(Value a);
    Value tanh(Value a);
    Value sum(Value a);
    Value mean(Value a);
    Value mse(Value a, Value b);
    Value sumsq(Value a);
    Value cosine(Value a, Value b);
    Value logsumexp(Value a);
    Value concat_cols(Value a, Value b);
    Value row(Value a, int r);
    Value row_normalize(Value a);
    Value style_nce(Value embeddings, std::vector<int> env_labels, double tau);

    // Populates grad() for every ancestor of `root` with the partial
    // derivative of root w.r.t. that node. Root must be a scalar (1x1).
    void backward(Value root);

    // backward() + fetch; throws if `target` is not an ancestor of `root`.
    Mat grad_wrt_activation(Value root, Value target);

    const Mat& data(Value v) const { return node(v.id).data; }
    const Mat& grad(Value v) const { return node(v.id).grad; }
    double scalar_value(Value v) const;

    int size() const { return static_cast<int>(nodes_.size()); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Op op = Op::Leaf;
        int a = -1;
        int b = -1;
        double factor = 0.0;  // Scale
        int index = 0;        // RowPick row / ConcatCols split column
        Mat data;
        Mat grad;
        std::shared_ptr<NcePayload> nce;
    };

    const Node& node(int id) const;
    Node& node(int id);
    Value push(Node n);
    void check_finite(const Mat& m, const char* opname) const;
    void backprop_node(int id);

    std::vector<Node> nodes_;
};

}  // namespace trajkit::ad
