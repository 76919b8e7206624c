#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "trajkit/mlp.hpp"
#include "trajkit/optim.hpp"
#include "trajkit/rng.hpp"
#include "trajkit/tape.hpp"

using trajkit::Rng;
using namespace trajkit::ad;

namespace {

Mat random_mat(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    }
    return m;
}

// Central finite differences of a scalar-valued graph builder against the
// tape gradient for every entry of every input matrix. The builder receives
// the leaf values and must return the scalar root.
void check_gradients(const std::function<Value(Tape&, const std::vector<Value>&)>& build,
                     std::vector<Mat> inputs, double step = 1e-5, double tol = 1e-5) {
    Tape tape;
    std::vector<Value> leaves;
    for (const Mat& m : inputs) leaves.push_back(tape.leaf(m));
    Value root = build(tape, leaves);
    tape.backward(root);

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Mat analytic = tape.grad(leaves[i]);
        for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
            for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
                auto eval = [&](double delta) {
                    std::vector<Mat> shifted = inputs;
                    shifted[i](r, c) += delta;
                    Tape t2;
                    std::vector<Value> l2;
                    for (const Mat& m : shifted) l2.push_back(t2.leaf(m));
                    return t2.scalar_value(build(t2, l2));
                };
                const double numeric = (eval(step) - eval(-step)) / (2.0 * step);
                const double denom = std::max({std::abs(numeric), std::abs(analytic(r, c)), 1.0});
                CAPTURE(i);
                CAPTURE(r);
                CAPTURE(c);
                CHECK(std::abs(numeric - analytic(r, c)) / denom < tol);
            }
        }
    }
}

}  // namespace

TEST_CASE("forward op hand values") {
    Tape tape;
    Mat a(1, 2);
    a << 1, 2;
    Mat b(2, 1);
    b << 3, 4;
    CHECK(tape.data(tape.matmul(tape.leaf(a), tape.leaf(b)))(0, 0) == doctest::Approx(11.0));

    Mat v(1, 3);
    v << -1, 0, 2;
    const Mat r = tape.data(tape.relu(tape.leaf(v)));
    CHECK(r(0, 0) == 0.0);
    CHECK(r(0, 1) == 0.0);
    CHECK(r(0, 2) == 2.0);

    Mat u(1, 4);
    u << 0.3, -1.2, 2.0, 0.7;
    Value ul = tape.leaf(u);
    CHECK(tape.scalar_value(tape.cosine(ul, ul)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("shape and finiteness errors are typed") {
    Tape tape;
    Value a = tape.leaf(Mat::Zero(2, 3));
    Value b = tape.leaf(Mat::Zero(2, 3));
    CHECK_THROWS_AS((void)tape.matmul(a, b), trajkit::ShapeError);
    CHECK_THROWS_AS((void)tape.add(a, tape.leaf(Mat::Zero(3, 2))), trajkit::ShapeError);

    Mat inf = Mat::Constant(1, 1, 1e308);
    Value big = tape.leaf(inf);
    CHECK_THROWS_AS((void)tape.mul(tape.scale(big, 1e10), big), trajkit::NonFiniteError);

    CHECK_THROWS_AS(tape.backward(a), trajkit::ShapeError);  // non-scalar root
}

TEST_CASE("backward hand values") {
    SUBCASE("x squared") {
        Tape tape;
        Value x = tape.leaf(Mat::Constant(1, 1, 3.0));
        Value y = tape.mul(x, x);
        tape.backward(y);
        CHECK(tape.grad(x)(0, 0) == doctest::Approx(6.0).epsilon(1e-14));
    }
    SUBCASE("mse at its minimum has zero gradients") {
        Rng rng(5);
        Tape tape;
        Mat y = random_mat(rng, 4, 6);
        Value yhat = tape.leaf(y);
        Value target = tape.leaf(y);
        Value loss = tape.mse(yhat, target);
        tape.backward(loss);
        CHECK(tape.grad(yhat).cwiseAbs().maxCoeff() == 0.0);
        CHECK(tape.grad(target).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("linear root gives constant gradient") {
        Tape tape;
        Value t = tape.leaf(Mat::Constant(3, 2, 0.4));
        Value root = tape.sum(tape.scale(t, 2.0));
        tape.backward(root);
        CHECK((tape.grad(t).array() == 2.0).all());
    }
}

TEST_CASE("every op matches central finite differences") {
    Rng rng(17);

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sum(t.matmul(l[0], l[1]));
    }, {random_mat(rng, 3, 4), random_mat(rng, 4, 2)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sum(t.add(l[0], l[1]));
    }, {random_mat(rng, 3, 3), random_mat(rng, 3, 3)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sumsq(t.add_rowvec(l[0], l[1]));
    }, {random_mat(rng, 4, 3), random_mat(rng, 1, 3)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sumsq(t.sub(l[0], l[1]));
    }, {random_mat(rng, 2, 5), random_mat(rng, 2, 5)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sum(t.mul(l[0], l[1]));
    }, {random_mat(rng, 3, 2), random_mat(rng, 3, 2)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sum(t.scale(l[0], -1.7));
    }, {random_mat(rng, 2, 2)});

    // keep relu inputs away from the kink
    Mat relu_in = random_mat(rng, 3, 3);
    relu_in = relu_in.unaryExpr([](double v) { return std::abs(v) < 0.05 ? v + 0.1 : v; });
    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sumsq(t.relu(l[0]));
    }, {relu_in}, 1e-5, 1e-3);

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sum(t.tanh(l[0]));
    }, {random_mat(rng, 3, 3)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.mean(t.mul(l[0], l[0]));
    }, {random_mat(rng, 4, 4)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.mse(l[0], l[1]);
    }, {random_mat(rng, 3, 4), random_mat(rng, 3, 4)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.cosine(l[0], l[1]);
    }, {random_mat(rng, 1, 5), random_mat(rng, 1, 5)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.logsumexp(l[0]);
    }, {random_mat(rng, 1, 6)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sumsq(t.concat_cols(l[0], l[1]));
    }, {random_mat(rng, 2, 3), random_mat(rng, 2, 4)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sumsq(t.row(l[0], 1));
    }, {random_mat(rng, 3, 4)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.sum(t.mul(t.row_normalize(l[0]), l[1]));
    }, {random_mat(rng, 3, 4), random_mat(rng, 3, 4)});

    check_gradients([](Tape& t, const std::vector<Value>& l) {
        return t.style_nce(l[0], {0, 0, 1, 1, 2, 2}, 0.35);
    }, {random_mat(rng, 6, 5)});
}

TEST_CASE("three layer mlp gradient matches finite differences") {
    Rng rng(23);
    Mlp net({5, 7, 6, 3}, {Act::Relu, Act::Tanh, Act::Identity}, rng);
    const Mat x = random_mat(rng, 4, 5);
    const Mat y = random_mat(rng, 4, 3);

    Tape tape;
    auto binding = net.bind(tape);
    Value out = net.apply(tape, binding, tape.leaf(x));
    Value loss = tape.mse(out, tape.leaf(y));
    tape.backward(loss);
    net.accumulate_grads(tape, binding);

    auto loss_at = [&](const Mlp& m) {
        return (m.infer(x) - y).squaredNorm() / static_cast<double>(y.size());
    };
    const double step = 1e-5;
    auto params = net.params();
    for (Param* p : params) {
        CHECK(p->has_grad);
        for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                const double keep = p->value(r, c);
                p->value(r, c) = keep + step;
                const double hi = loss_at(net);
                p->value(r, c) = keep - step;
                const double lo = loss_at(net);
                p->value(r, c) = keep;
                const double numeric = (hi - lo) / (2.0 * step);
                const double denom = std::max({std::abs(numeric), std::abs(p->grad(r, c)), 1.0});
                CHECK(std::abs(numeric - p->grad(r, c)) / denom < 1e-5);
            }
        }
    }
}

TEST_CASE("backward is linear in the root") {
    Rng rng(31);
    const Mat x = random_mat(rng, 3, 3);
    const Mat y = random_mat(rng, 3, 3);
    const double a = 0.7, b = -1.3;

    auto grad_of = [&](double ca, double cb) {
        Tape t;
        Value xl = t.leaf(x);
        Value f = t.sumsq(xl);
        Value g = t.mse(xl, t.leaf(y));
        Value root = t.add(t.scale(f, ca), t.scale(g, cb));
        t.backward(root);
        return Mat(t.grad(xl));
    };
    const Mat combined = grad_of(a, b);
    const Mat expected = a * grad_of(1, 0) + b * grad_of(0, 1);
    CHECK((combined - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two identical passes are bit identical") {
    auto run = [] {
        Rng rng(99);
        Mlp net({4, 6, 2}, {Act::Tanh, Act::Identity}, rng);
        Mat x = random_mat(rng, 3, 4);
        Tape tape;
        auto binding = net.bind(tape);
        Value out = net.apply(tape, binding, tape.leaf(x));
        Value loss = tape.sumsq(out);
        tape.backward(loss);
        net.accumulate_grads(tape, binding);
        std::vector<double> bits;
        for (const Param* p : static_cast<const Mlp&>(net).params()) {
            for (Eigen::Index i = 0; i < p->value.size(); ++i) bits.push_back(p->value.data()[i]);
            for (Eigen::Index i = 0; i < p->grad.size(); ++i) bits.push_back(p->grad.data()[i]);
        }
        bits.push_back(tape.scalar_value(loss));
        return bits;
    };
    CHECK(run() == run());
}

TEST_CASE("grad_wrt_activation") {
    SUBCASE("linear case gives all twos") {
        Tape tape;
        Value t = tape.leaf(Mat::Constant(2, 3, 1.5));
        Value root = tape.sum(tape.scale(t, 2.0));
        const Mat g = tape.grad_wrt_activation(root, t);
        CHECK((g.array() == 2.0).all());
    }
    SUBCASE("stationary point of a decoder gives zero gradient") {
        Rng rng(7);
        Mlp g({3, 4}, {Act::Identity}, rng);
        Mat t0 = random_mat(rng, 1, 3);
        const Mat y = g.infer(t0);
        Tape tape;
        Value t = tape.leaf(t0);
        Value out = g.forward(tape, t);
        Value loss = tape.mse(out, tape.leaf(y));
        const Mat grad = tape.grad_wrt_activation(loss, t);
        CHECK(grad.cwiseAbs().maxCoeff() < 1e-14);
    }
    SUBCASE("random decoder matches finite differences on the activation") {
        Rng rng(11);
        Mlp g({4, 8, 6}, {Act::Tanh, Act::Identity}, rng);
        const Mat t0 = random_mat(rng, 1, 4);
        const Mat y = random_mat(rng, 1, 6);
        Tape tape;
        Value t = tape.leaf(t0);
        Value loss = tape.mse(g.forward(tape, t), tape.leaf(y));
        const Mat analytic = tape.grad_wrt_activation(loss, t);
        const double step = 1e-5;
        for (Eigen::Index c = 0; c < t0.cols(); ++c) {
            auto eval = [&](double d) {
                Mat tt = t0;
                tt(0, c) += d;
                return (g.infer(tt) - y).squaredNorm() / static_cast<double>(y.size());
            };
            const double numeric = (eval(step) - eval(-step)) / (2.0 * step);
            const double denom = std::max({std::abs(numeric), std::abs(analytic(0, c)), 1.0});
            CHECK(std::abs(numeric - analytic(0, c)) / denom < 1e-5);
        }
    }
    SUBCASE("non-ancestor target is an error") {
        Tape tape;
        Value a = tape.leaf(Mat::Constant(1, 1, 1.0));
        Value b = tape.leaf(Mat::Constant(1, 1, 2.0));
        Value root = tape.mul(a, a);
        CHECK_THROWS_AS((void)tape.grad_wrt_activation(root, b), trajkit::Error);
    }
    SUBCASE("parameter grads accumulate separately from activation reads") {
        Rng rng(3);
        Mlp g({2, 2}, {Act::Identity}, rng);
        Tape tape;
        auto binding = g.bind(tape);
        Value t = tape.leaf(Mat::Constant(1, 2, 0.5));
        Value loss = tape.sumsq(g.apply(tape, binding, t));
        (void)tape.grad_wrt_activation(loss, t);
        for (Param* p : g.params()) CHECK_FALSE(p->has_grad);
        g.accumulate_grads(tape, binding);
        for (Param* p : g.params()) CHECK(p->has_grad);
    }
}

TEST_CASE("optimizer steps") {
    SUBCASE("sgd definition") {
        Param p;
        p.value = Mat::Constant(1, 1, 1.0);
        p.grad = Mat::Constant(1, 1, 2.0);
        p.has_grad = true;
        Optimizer opt({Algo::Sgd, 0.1}, {&p});
        opt.step();
        CHECK(p.value(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
        CHECK_FALSE(p.has_grad);
    }
    SUBCASE("zero gradient leaves parameters unchanged under sgd") {
        Param p;
        p.value = Mat::Constant(2, 2, 3.0);
        p.grad = Mat::Zero(2, 2);
        p.has_grad = true;
        Optimizer opt({Algo::Sgd, 0.5}, {&p});
        opt.step();
        CHECK((p.value.array() == 3.0).all());
    }
    SUBCASE("missing gradient is a typed error") {
        Param p;
        p.value = Mat::Constant(1, 1, 1.0);
        p.grad = Mat::Zero(1, 1);
        Optimizer opt({Algo::Sgd, 0.1}, {&p});
        CHECK_THROWS_AS(opt.step(), trajkit::MissingGradError);
    }
    SUBCASE("adam converges on a convex quadratic") {
        Param p;
        p.value = Mat::Constant(1, 1, 2.0);
        p.grad = Mat::Zero(1, 1);
        Optimizer opt({Algo::Adam, 0.01}, {&p});
        for (int i = 0; i < 500; ++i) {
            p.grad(0, 0) = 2.0 * (p.value(0, 0) - 3.0);
            p.has_grad = true;
            opt.step();
        }
        CHECK(std::abs(p.value(0, 0) - 3.0) < 1e-2);
    }
}

TEST_CASE("mlp construction and checkpointing") {
    Rng rng(41);
    Mlp net({5, 8, 3}, {Act::Relu, Act::Identity}, rng);
    CHECK(net.param_count() == 5 * 8 + 8 + 8 * 3 + 3);

    SUBCASE("zero params map everything to zero") {
        Rng r2(1);
        Mlp z({4, 3}, {Act::Identity}, r2);
        z.zero_last_layer();
        CHECK(z.infer(random_mat(rng, 2, 4)).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("json round trip is lossless at 64-bit precision") {
        const auto file = std::filesystem::temp_directory_path() / "trajkit_test_mlp.json";
        net.save(file);
        Mlp back = Mlp::load(file);
        CHECK(back.bit_equal(net));
        std::filesystem::remove(file);
    }
    SUBCASE("inconsistent construction is rejected") {
        Rng r3(1);
        CHECK_THROWS_AS(Mlp({3}, {}, r3), trajkit::ConfigError);
        CHECK_THROWS_AS(Mlp({3, -1}, {Act::Relu}, r3), trajkit::ConfigError);
        CHECK_THROWS_AS(Mlp({3, 2}, {}, r3), trajkit::ConfigError);
    }
}
