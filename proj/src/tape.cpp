#include "trajkit/tape.hpp"

#include <cmath>
#include <string>

namespace trajkit::ad {

namespace {

std::string shape_of(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

const Tape::Node& Tape::node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) {
        throw Error("tape: invalid node id " + std::to_string(id));
    }
    return nodes_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::node(int id) {
    return const_cast<Node&>(static_cast<const Tape*>(this)->node(id));
}

Value Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_finite(const Mat& m, const char* opname) const {
    if (!m.allFinite()) {
        throw NonFiniteError(std::string("non-finite result in op ") + opname);
    }
}

Value Tape::leaf(Mat m) {
    check_finite(m, "leaf");
    Node n;
    n.op = Op::Leaf;
    n.data = std::move(m);
    return push(std::move(n));
}

Value Tape::scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m));
}

double Tape::scalar_value(Value v) const {
    const Mat& m = data(v);
    if (m.rows() != 1 || m.cols() != 1) {
        throw ShapeError("scalar_value: node is " + shape_of(m) + ", expected 1x1");
    }
    return m(0, 0);
}

Value Tape::matmul(Value a, Value b) {
    const Mat& A = data(a);
    const Mat& B = data(b);
    if (A.cols() != B.rows()) {
        throw ShapeError("matmul: " + shape_of(A) + " * " + shape_of(B));
    }
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.data = A * B;
    check_finite(n.data, "matmul");
    return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
    const Mat& A = data(a);
    const Mat& B = data(b);
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw ShapeError("add: " + shape_of(A) + " + " + shape_of(B));
    }
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.data = A + B;
    check_finite(n.data, "add");
    return push(std::move(n));
}

Value Tape::add_rowvec(Value a, Value row_v) {
    const Mat& A = data(a);
    const Mat& R = data(row_v);
    if (R.rows() != 1 || R.cols() != A.cols()) {
        throw ShapeError("add_rowvec: " + shape_of(A) + " + row " + shape_of(R));
    }
    Node n;
    n.op = Op::AddRowVec;
    n.a = a.id;
    n.b = row_v.id;
    n.data = A.rowwise() + R.row(0);
    check_finite(n.data, "add_rowvec");
    return push(std::move(n));
}

Value Tape::sub(Value a, Value b) {
    const Mat& A = data(a);
    const Mat& B = data(b);
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw ShapeError("sub: " + shape_of(A) + " - " + shape_of(B));
    }
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.data = A - B;
    check_finite(n.data, "sub");
    return push(std::move(n));
}

Value Tape::mul(Value a, Value b) {
    const Mat& A = data(a);
    const Mat& B = data(b);
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw ShapeError("mul: " + shape_of(A) + " .* " + shape_of(B));
    }
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.data = A.cwiseProduct(B);
    check_finite(n.data, "mul");
    return push(std::move(n));
}

Value Tape::scale(Value a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.factor = s;
    n.data = data(a) * s;
    check_finite(n.data, "scale");
    return push(std::move(n));
}

Value Tape::relu(Value a) {
    Node n;
    n.op = Op::Relu;
    n.a = a.id;
    n.data = data(a).cwiseMax(0.0);
    check_finite(n.data, "relu");
    return push(std::move(n));
}

Value Tape::tanh(Value a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a.id;
    n.data = data(a).array().tanh().matrix();
    check_finite(n.data, "tanh");
    return push(std::move(n));
}

Value Tape::sum(Value a) {
    Node n;
    n.op = Op::Sum;
    n.a = a.id;
    n.data = Mat::Constant(1, 1, data(a).sum());
    check_finite(n.data, "sum");
    return push(std::move(n));
}

Value Tape::mean(Value a) {
    if (data(a).size() == 0) {
        throw ShapeError("mean: empty operand");
    }
    Node n;
    n.op = Op::Mean;
    n.a = a.id;
    n.data = Mat::Constant(1, 1, data(a).mean());
    check_finite(n.data, "mean");
    return push(std::move(n));
}

Value Tape::mse(Value a, Value b) {
    const Mat& A = data(a);
    const Mat& B = data(b);
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw ShapeError("mse: " + shape_of(A) + " vs " + shape_of(B));
    }
    if (A.size() == 0) {
        throw ShapeError("mse: empty operands");
    }
    Node n;
    n.op = Op::Mse;
    n.a = a.id;
    n.b = b.id;
    n.data = Mat::Constant(1, 1, (A - B).squaredNorm() / static_cast<double>(A.size()));
    check_finite(n.data, "mse");
    return push(std::move(n));
}

Value Tape::sumsq(Value a) {
    Node n;
    n.op = Op::SumSq;
    n.a = a.id;
    n.data = Mat::Constant(1, 1, data(a).squaredNorm());
    check_finite(n.data, "sumsq");
    return push(std::move(n));
}

Value Tape::cosine(Value a, Value b) {
    const Mat& A = data(a);
    const Mat& B = data(b);
    if (A.size() != B.size()) {
        throw ShapeError("cosine: " + shape_of(A) + " vs " + shape_of(B));
    }
    const double na = A.norm();
    const double nb = B.norm();
    if (na < 1e-12 || nb < 1e-12) {
        throw DegenerateError("cosine: operand norm below 1e-12");
    }
    Node n;
    n.op = Op::Cosine;
    n.a = a.id;
    n.b = b.id;
    n.data = Mat::Constant(1, 1, A.cwiseProduct(B).sum() / (na * nb));
    check_finite(n.data, "cosine");
    return push(std::move(n));
}

Value Tape::logsumexp(Value a) {
    const Mat& A = data(a);
    if (A.size() == 0) {
        throw ShapeError("logsumexp: empty operand");
    }
    const double m = A.maxCoeff();
    const double s = (A.array() - m).exp().sum();
    Node n;
    n.op = Op::LogSumExp;
    n.a = a.id;
    n.data = Mat::Constant(1, 1, m + std::log(s));
    check_finite(n.data, "logsumexp");
    return push(std::move(n));
}

Value Tape::concat_cols(Value a, Value b) {
    const Mat& A = data(a);
    const Mat& B = data(b);
    if (A.rows() != B.rows()) {
        throw ShapeError("concat_cols: " + shape_of(A) + " | " + shape_of(B));
    }
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.id;
    n.b = b.id;
    n.index = static_cast<int>(A.cols());
    n.data.resize(A.rows(), A.cols() + B.cols());
    n.data << A, B;
    return push(std::move(n));
}

Value Tape::row(Value a, int r) {
    const Mat& A = data(a);
    if (r < 0 || r >= A.rows()) {
        throw ShapeError("row: index " + std::to_string(r) + " out of " + shape_of(A));
    }
    Node n;
    n.op = Op::RowPick;
    n.a = a.id;
    n.index = r;
    n.data = A.row(r);
    return push(std::move(n));
}

Value Tape::row_normalize(Value a) {
    const Mat& A = data(a);
    Node n;
    n.op = Op::RowNormalize;
    n.a = a.id;
    n.data.resizeLike(A);
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
        const double nr = A.row(r).norm();
        if (nr < 1e-12) {
            throw DegenerateError("row_normalize: row " + std::to_string(r) +
                                  " has norm below 1e-12");
        }
        n.data.row(r) = A.row(r) / nr;
    }
    check_finite(n.data, "row_normalize");
    return push(std::move(n));
}

Value Tape::style_nce(Value embeddings, std::vector<int> env_labels, double tau) {
    const Mat& H = data(embeddings);
    const int nrows = static_cast<int>(H.rows());
    if (nrows != static_cast<int>(env_labels.size())) {
        throw ShapeError("style_nce: " + std::to_string(env_labels.size()) +
                         " labels for " + std::to_string(nrows) + " rows");
    }
    if (tau <= 0.0) {
        throw ConfigError("style_nce: temperature must be positive");
    }

    // Samples with a same-environment partner act as anchors and need at
    // least one different-environment negative; singleton samples only serve
    // as negatives.
    bool any_anchor = false;
    for (int i = 0; i < nrows; ++i) {
        bool has_pos = false;
        bool has_neg = false;
        for (int k = 0; k < nrows; ++k) {
            if (k == i) continue;
            (env_labels[k] == env_labels[i] ? has_pos : has_neg) = true;
        }
        if (has_pos && !has_neg) {
            throw ConfigError("style_nce: environment " + std::to_string(env_labels[i]) +
                              " has no cross-environment negative");
        }
        any_anchor = any_anchor || has_pos;
    }
    if (!any_anchor) {
        throw ConfigError("style_nce: no same-environment positive pair in the batch");
    }

    // Cosine similarities between all rows.
    Eigen::VectorXd norms(nrows);
    Mat P(nrows, H.cols());
    for (int r = 0; r < nrows; ++r) {
        norms(r) = H.row(r).norm();
        if (norms(r) < 1e-12) {
            throw DegenerateError("style_nce: row " + std::to_string(r) +
                                  " has norm below 1e-12");
        }
        P.row(r) = H.row(r) / norms(r);
    }
    const Mat S = P * P.transpose();

    double loss = 0.0;
    int pairs = 0;
    for (int i = 0; i < nrows; ++i) {
        for (int j = 0; j < nrows; ++j) {
            if (j == i || env_labels[j] != env_labels[i]) continue;
            // denominator over {j} plus every different-environment sample,
            // computed with a max shift for stability
            double mx = S(i, j) / tau;
            for (int k = 0; k < nrows; ++k) {
                if (env_labels[k] != env_labels[i]) mx = std::max(mx, S(i, k) / tau);
            }
            double denom = std::exp(S(i, j) / tau - mx);
            for (int k = 0; k < nrows; ++k) {
                if (env_labels[k] != env_labels[i]) denom += std::exp(S(i, k) / tau - mx);
            }
            loss += -(S(i, j) / tau) + mx + std::log(denom);
            ++pairs;
        }
    }
    loss /= static_cast<double>(pairs);

    Node n;
    n.op = Op::StyleNce;
    n.a = embeddings.id;
    n.data = Mat::Constant(1, 1, loss);
    n.nce = std::make_shared<NcePayload>(NcePayload{std::move(env_labels), tau});
    check_finite(n.data, "style_nce");
    return push(std::move(n));
}

void Tape::backward(Value root) {
    const Mat& r = data(root);
    if (r.rows() != 1 || r.cols() != 1) {
        throw ShapeError("backward: root is " + shape_of(r) + ", expected scalar 1x1");
    }

    // Mark ancestors; creation order is topological.
    std::vector<char> reach(nodes_.size(), 0);
    reach[static_cast<std::size_t>(root.id)] = 1;
    for (int id = root.id; id >= 0; --id) {
        if (!reach[static_cast<std::size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.a >= 0) reach[static_cast<std::size_t>(n.a)] = 1;
        if (n.b >= 0) reach[static_cast<std::size_t>(n.b)] = 1;
    }

    for (int id = 0; id <= root.id; ++id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (reach[static_cast<std::size_t>(id)]) {
            n.grad = Mat::Zero(n.data.rows(), n.data.cols());
        } else {
            n.grad.resize(0, 0);
        }
    }
    nodes_[static_cast<std::size_t>(root.id)].grad(0, 0) = 1.0;

    for (int id = root.id; id >= 0; --id) {
        if (reach[static_cast<std::size_t>(id)]) backprop_node(id);
    }
}

void Tape::backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::Leaf) return;
    const Mat& g = n.grad;
    Mat& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
    const Mat& A = nodes_[static_cast<std::size_t>(n.a)].data;

    switch (n.op) {
        case Op::MatMul: {
            const Mat& B = nodes_[static_cast<std::size_t>(n.b)].data;
            ga.noalias() += g * B.transpose();
            nodes_[static_cast<std::size_t>(n.b)].grad.noalias() += A.transpose() * g;
            break;
        }
        case Op::Add:
            ga += g;
            nodes_[static_cast<std::size_t>(n.b)].grad += g;
            break;
        case Op::AddRowVec:
            ga += g;
            nodes_[static_cast<std::size_t>(n.b)].grad += g.colwise().sum();
            break;
        case Op::Sub:
            ga += g;
            nodes_[static_cast<std::size_t>(n.b)].grad -= g;
            break;
        case Op::Mul: {
            const Mat& B = nodes_[static_cast<std::size_t>(n.b)].data;
            ga += g.cwiseProduct(B);
            nodes_[static_cast<std::size_t>(n.b)].grad += g.cwiseProduct(A);
            break;
        }
        case Op::Scale:
            ga += g * n.factor;
            break;
        case Op::Relu:
            // derivative at exactly 0 defined as 0
            ga += g.cwiseProduct((A.array() > 0.0).cast<double>().matrix());
            break;
        case Op::Tanh:
            ga += g.cwiseProduct((1.0 - n.data.array().square()).matrix());
            break;
        case Op::Sum:
            ga.array() += g(0, 0);
            break;
        case Op::Mean:
            ga.array() += g(0, 0) / static_cast<double>(A.size());
            break;
        case Op::Mse: {
            const Mat& B = nodes_[static_cast<std::size_t>(n.b)].data;
            const double c = 2.0 * g(0, 0) / static_cast<double>(A.size());
            ga += c * (A - B);
            nodes_[static_cast<std::size_t>(n.b)].grad -= c * (A - B);
            break;
        }
        case Op::SumSq:
            ga += 2.0 * g(0, 0) * A;
            break;
        case Op::Cosine: {
            const Mat& B = nodes_[static_cast<std::size_t>(n.b)].data;
            const double na = A.norm();
            const double nb = B.norm();
            const double cos = n.data(0, 0);
            ga += g(0, 0) * (B / (na * nb) - cos * A / (na * na));
            nodes_[static_cast<std::size_t>(n.b)].grad +=
                g(0, 0) * (A / (na * nb) - cos * B / (nb * nb));
            break;
        }
        case Op::LogSumExp: {
            const double lse = n.data(0, 0);
            ga += g(0, 0) * (A.array() - lse).exp().matrix();
            break;
        }
        case Op::ConcatCols: {
            const int split = n.index;
            ga += g.leftCols(split);
            nodes_[static_cast<std::size_t>(n.b)].grad += g.rightCols(g.cols() - split);
            break;
        }
        case Op::RowPick:
            ga.row(n.index) += g.row(0);
            break;
        case Op::RowNormalize: {
            for (Eigen::Index r = 0; r < A.rows(); ++r) {
                const double nr = A.row(r).norm();
                const Eigen::RowVectorXd p = n.data.row(r);
                const Eigen::RowVectorXd gr = g.row(r);
                ga.row(r) += (gr - (gr.dot(p)) * p) / nr;
            }
            break;
        }
        case Op::StyleNce: {
            const NcePayload& pl = *n.nce;
            const int nrows = static_cast<int>(A.rows());
            Eigen::VectorXd norms(nrows);
            Mat P(nrows, A.cols());
            for (int r = 0; r < nrows; ++r) {
                norms(r) = A.row(r).norm();
                P.row(r) = A.row(r) / norms(r);
            }
            const Mat S = P * P.transpose();

            // dLoss/dS, accumulated over ordered positive pairs
            int pairs = 0;
            for (int i = 0; i < nrows; ++i) {
                for (int j = 0; j < nrows; ++j) {
                    if (j != i && pl.env_labels[j] == pl.env_labels[i]) ++pairs;
                }
            }
            Mat dS = Mat::Zero(nrows, nrows);
            const double inv_pairs = 1.0 / static_cast<double>(pairs);
            for (int i = 0; i < nrows; ++i) {
                for (int j = 0; j < nrows; ++j) {
                    if (j == i || pl.env_labels[j] != pl.env_labels[i]) continue;
                    double mx = S(i, j) / pl.tau;
                    for (int k = 0; k < nrows; ++k) {
                        if (pl.env_labels[k] != pl.env_labels[i]) {
                            mx = std::max(mx, S(i, k) / pl.tau);
                        }
                    }
                    double denom = std::exp(S(i, j) / pl.tau - mx);
                    for (int k = 0; k < nrows; ++k) {
                        if (pl.env_labels[k] != pl.env_labels[i]) {
                            denom += std::exp(S(i, k) / pl.tau - mx);
                        }
                    }
                    dS(i, j) += inv_pairs *
                                (-1.0 / pl.tau +
                                 std::exp(S(i, j) / pl.tau - mx) / denom / pl.tau);
                    for (int k = 0; k < nrows; ++k) {
                        if (pl.env_labels[k] != pl.env_labels[i]) {
                            dS(i, k) += inv_pairs *
                                        std::exp(S(i, k) / pl.tau - mx) / denom / pl.tau;
                        }
                    }
                }
            }

            // S_ik = p_i . p_k, then rows through the normalization.
            Mat dP = Mat::Zero(nrows, A.cols());
            for (int i = 0; i < nrows; ++i) {
                for (int k = 0; k < nrows; ++k) {
                    if (dS(i, k) == 0.0) continue;
                    dP.row(i) += dS(i, k) * P.row(k);
                    dP.row(k) += dS(i, k) * P.row(i);
                }
            }
            for (int r = 0; r < nrows; ++r) {
                const Eigen::RowVectorXd p = P.row(r);
                const Eigen::RowVectorXd gr = dP.row(r);
                ga.row(r) += g(0, 0) * (gr - gr.dot(p) * p) / norms(r);
            }
            break;
        }
        case Op::Leaf:
            break;
    }
}

Mat Tape::grad_wrt_activation(Value root, Value target) {
    if (target.id > root.id) {
        throw Error("grad_wrt_activation: target is not an ancestor of root");
    }
    backward(root);
    const Mat& g = grad(target);
    if (g.size() == 0) {
        throw Error("grad_wrt_activation: target is not an ancestor of root");
    }
    return g;
}

}  // namespace trajkit::ad
