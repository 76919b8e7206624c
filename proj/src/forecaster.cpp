#include "trajkit/forecaster.hpp"

#include <fstream>

#include "trajkit/error.hpp"

namespace trajkit::model {

using ad::Act;

const char* group_name(Group g) {
    switch (g) {
        case Group::Phi: return "phi";
        case Group::Psi: return "psi";
        case Group::F: return "f";
        case Group::G: return "g";
        case Group::H: return "h";
    }
    return "?";
}

nlohmann::json ArchConfig::to_json() const {
    return {{"past_channels", past_channels}, {"z_dim", z_dim},       {"c_dim", c_dim},
            {"p_dim", p_dim},                 {"phi_hidden", phi_hidden},
            {"psi_hidden", psi_hidden},       {"f_hidden", f_hidden}, {"g_hidden", g_hidden},
            {"h_hidden", h_hidden},           {"modular", modular}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
    ArchConfig a;
    a.past_channels = j.value("past_channels", 2);
    a.z_dim = j.value("z_dim", 64);
    a.c_dim = j.value("c_dim", 32);
    a.p_dim = j.value("p_dim", 16);
    a.phi_hidden = j.value("phi_hidden", 128);
    a.psi_hidden = j.value("psi_hidden", 128);
    a.f_hidden = j.value("f_hidden", 64);
    a.g_hidden = j.value("g_hidden", 128);
    a.h_hidden = j.value("h_hidden", 32);
    a.modular = j.value("modular", true);
    return a;
}

Forecaster Forecaster::init(const ArchConfig& arch, Rng& rng) {
    Forecaster m;
    m.arch_ = arch;
    m.phi_ = Mlp({arch.phi_in(), arch.phi_hidden, arch.z_dim}, {Act::Relu, Act::Identity}, rng);
    m.psi_ = Mlp({arch.style_in(), arch.psi_hidden, arch.c_dim}, {Act::Relu, Act::Identity}, rng);
    m.f_ = Mlp({arch.z_dim + arch.c_dim, arch.f_hidden, arch.z_dim}, {Act::Relu, Act::Identity},
               rng);
    // zero-initialized final layer: the modulated model starts exactly at the
    // invariant one
    m.f_.zero_last_layer();
    m.g_ = Mlp({arch.z_dim, arch.g_hidden, arch.out_dim()}, {Act::Relu, Act::Identity}, rng);
    // tanh keeps the projection head away from all-dead rows, whose zero
    // output would be a degenerate (unnormalizable) embedding
    m.h_ = Mlp({arch.c_dim, arch.h_hidden, arch.p_dim}, {Act::Tanh, Act::Identity}, rng);
    return m;
}

Mlp& Forecaster::net(Group g) {
    switch (g) {
        case Group::Phi: return phi_;
        case Group::Psi: return psi_;
        case Group::F: return f_;
        case Group::G: return g_;
        case Group::H: return h_;
    }
    throw Error("unreachable");
}

const Mlp& Forecaster::net(Group g) const {
    return const_cast<Forecaster*>(this)->net(g);
}

void Forecaster::freeze(Group g, bool frozen) {
    frozen_[static_cast<int>(g)] = frozen;
}

bool Forecaster::is_frozen(Group g) const { return frozen_[static_cast<int>(g)]; }

Eigen::VectorXd Forecaster::input_features(const InstanceWindow& w) {
    const int past_len = static_cast<int>(w.past.rows() * w.past.cols());
    const int nbr_len = static_cast<int>(w.neighbor_past.rows() * 2);
    Eigen::VectorXd v(past_len + nbr_len);
    int idx = 0;
    for (int t = 0; t < w.past.rows(); ++t) {
        for (int c = 0; c < w.past.cols(); ++c) v(idx++) = w.past(t, c);
    }
    for (int r = 0; r < w.neighbor_past.rows(); ++r) {
        v(idx++) = w.neighbor_past(r, 0);
        v(idx++) = w.neighbor_past(r, 1);
    }
    return v;
}

Mat Forecaster::input_batch(const std::vector<InstanceWindow>& ws) {
    if (ws.empty()) throw ConfigError("input_batch: empty batch");
    const Eigen::VectorXd first = input_features(ws[0]);
    Mat x(static_cast<Eigen::Index>(ws.size()), first.size());
    x.row(0) = first;
    for (std::size_t i = 1; i < ws.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = input_features(ws[i]);
    }
    return x;
}

Mat Forecaster::future_batch(const std::vector<InstanceWindow>& ws) {
    if (ws.empty()) throw ConfigError("future_batch: empty batch");
    Mat y(static_cast<Eigen::Index>(ws.size()), data::kFutureSteps * 2);
    for (std::size_t i = 0; i < ws.size(); ++i) {
        for (int t = 0; t < data::kFutureSteps; ++t) {
            y(static_cast<Eigen::Index>(i), 2 * t) = ws[i].future(t, 0);
            y(static_cast<Eigen::Index>(i), 2 * t + 1) = ws[i].future(t, 1);
        }
    }
    return y;
}

Mat Forecaster::style_batch(const std::vector<InstanceWindow>& ws) {
    if (ws.empty()) throw ConfigError("style_batch: empty batch");
    Mat o(static_cast<Eigen::Index>(ws.size()), ws[0].style_feature.size());
    for (std::size_t i = 0; i < ws.size(); ++i) {
        o.row(static_cast<Eigen::Index>(i)) = ws[i].style_feature;
    }
    return o;
}

Forecaster::Bindings Forecaster::bind(Tape& tape) const {
    return Bindings{phi_.bind(tape), psi_.bind(tape), f_.bind(tape), g_.bind(tape),
                    h_.bind(tape)};
}

void Forecaster::accumulate_grads(const Tape& tape, const Bindings& b) {
    if (!is_frozen(Group::Phi)) phi_.accumulate_grads(tape, b.phi);
    if (!is_frozen(Group::Psi)) psi_.accumulate_grads(tape, b.psi);
    if (!is_frozen(Group::F)) f_.accumulate_grads(tape, b.f);
    if (!is_frozen(Group::G)) g_.accumulate_grads(tape, b.g);
    if (!is_frozen(Group::H)) h_.accumulate_grads(tape, b.h);
}

Value Forecaster::encode_invariant(Tape& tape, const Bindings& b, Value x) const {
    return phi_.apply(tape, b.phi, x);
}

Value Forecaster::encode_style(Tape& tape, const Bindings& b, Value obs) const {
    const Eigen::Index n = tape.data(obs).rows();
    if (n == 0) throw ConfigError("encode_style: empty observation set");
    Value features = psi_.apply(tape, b.psi, obs);
    // mean over observations via a constant averaging row
    Value avg = tape.leaf(Mat::Constant(1, n, 1.0 / static_cast<double>(n)));
    return tape.matmul(avg, features);
}

Value Forecaster::modulate(Tape& tape, const Bindings& b, Value z, Value c) const {
    const Eigen::Index n = tape.data(z).rows();
    if (tape.data(c).rows() != 1) {
        throw ShapeError("modulate: style vector must be a single row");
    }
    Value c_rows = tape.matmul(tape.leaf(Mat::Ones(n, 1)), c);
    Value joint = tape.concat_cols(z, c_rows);
    return tape.add(f_.apply(tape, b.f, joint), z);
}

Value Forecaster::decode(Tape& tape, const Bindings& b, Value zt) const {
    return g_.apply(tape, b.g, zt);
}

Value Forecaster::project(Tape& tape, const Bindings& b, Value c) const {
    return tape.row_normalize(h_.apply(tape, b.h, c));
}

Mat Forecaster::predict(const std::vector<InstanceWindow>& ws,
                        const std::optional<Eigen::VectorXd>& style_c) const {
    const Mat x = input_batch(ws);
    Mat z = phi_.infer(x);
    if (style_c) {
        if (style_c->size() != arch_.c_dim) {
            throw ShapeError("predict: style vector has wrong width");
        }
        Mat joint(z.rows(), z.cols() + style_c->size());
        joint << z, style_c->transpose().replicate(z.rows(), 1);
        z = f_.infer(joint) + z;
    }
    return g_.infer(z);
}

Eigen::VectorXd Forecaster::style_embedding(
    const std::vector<Eigen::VectorXd>& observations) const {
    if (observations.empty()) throw ConfigError("style_embedding: empty observation set");
    Mat o(static_cast<Eigen::Index>(observations.size()), observations[0].size());
    for (std::size_t i = 0; i < observations.size(); ++i) {
        o.row(static_cast<Eigen::Index>(i)) = observations[i];
    }
    return psi_.infer(o).colwise().mean();
}

Eigen::VectorXd Forecaster::project_embedding(const Eigen::VectorXd& c) const {
    const Mat p = h_.infer(c.transpose());
    const double norm = p.norm();
    if (norm < 1e-12) throw DegenerateError("project: embedding norm below 1e-12");
    return p.row(0) / norm;
}

void Forecaster::save(const std::filesystem::path& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint dir " + dir.string());
    phi_.save(dir / "phi.json");
    psi_.save(dir / "psi.json");
    f_.save(dir / "f.json");
    g_.save(dir / "g.json");
    h_.save(dir / "h.json");
    std::ofstream arch(dir / "arch.json");
    if (!arch) throw IoError("cannot write arch descriptor");
    arch << arch_.to_json().dump(2) << "\n";
}

Forecaster Forecaster::load(const std::filesystem::path& dir) {
    std::ifstream arch_in(dir / "arch.json");
    if (!arch_in) throw MissingArtifactError("missing checkpoint " + dir.string());
    nlohmann::json j;
    arch_in >> j;
    Forecaster m;
    m.arch_ = ArchConfig::from_json(j);
    m.phi_ = Mlp::load(dir / "phi.json");
    m.psi_ = Mlp::load(dir / "psi.json");
    m.f_ = Mlp::load(dir / "f.json");
    m.g_ = Mlp::load(dir / "g.json");
    m.h_ = Mlp::load(dir / "h.json");
    return m;
}

bool Forecaster::bit_equal(const Forecaster& other) const {
    return phi_.bit_equal(other.phi_) && psi_.bit_equal(other.psi_) &&
           f_.bit_equal(other.f_) && g_.bit_equal(other.g_) && h_.bit_equal(other.h_);
}

Mat denormalize_prediction(const Eigen::RowVectorXd& row, const Vec2& origin) {
    if (row.size() != data::kFutureSteps * 2) {
        throw ShapeError("denormalize_prediction: expected 24 values");
    }
    Mat out(data::kFutureSteps, 2);
    for (int t = 0; t < data::kFutureSteps; ++t) {
        out(t, 0) = row(2 * t) + origin.x;
        out(t, 1) = row(2 * t + 1) + origin.y;
    }
    return out;
}

Mat denormalize_future(const InstanceWindow& w) {
    Mat out(data::kFutureSteps, 2);
    for (int t = 0; t < data::kFutureSteps; ++t) {
        out(t, 0) = w.future(t, 0) + w.origin.x;
        out(t, 1) = w.future(t, 1) + w.origin.y;
    }
    return out;
}

}  // namespace trajkit::model
