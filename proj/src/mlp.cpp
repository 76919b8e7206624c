#include "trajkit/mlp.hpp"

#include <cmath>
#include <fstream>

#include "trajkit/error.hpp"

namespace trajkit::ad {

std::string act_name(Act a) {
    switch (a) {
        case Act::Relu: return "relu";
        case Act::Tanh: return "tanh";
        case Act::Identity: return "identity";
    }
    return "identity";
}

Act act_from_name(const std::string& name) {
    if (name == "relu") return Act::Relu;
    if (name == "tanh") return Act::Tanh;
    if (name == "identity") return Act::Identity;
    throw ConfigError("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<int> widths, std::vector<Act> activations, Rng& rng)
    : widths_(std::move(widths)), activations_(std::move(activations)) {
    if (widths_.size() < 2) {
        throw ConfigError("mlp needs at least an input and an output width");
    }
    for (int w : widths_) {
        if (w <= 0) throw ConfigError("mlp widths must be positive");
    }
    if (activations_.size() != widths_.size() - 1) {
        throw ConfigError("mlp needs one activation per layer");
    }
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int fan_in = widths_[l];
        const int fan_out = widths_[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Param w;
        w.value.resize(fan_in, fan_out);
        for (Eigen::Index i = 0; i < w.value.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.value.cols(); ++j) {
                w.value(i, j) = rng.uniform(-bound, bound);
            }
        }
        w.grad = Mat::Zero(fan_in, fan_out);
        weights_.push_back(std::move(w));

        Param b;
        b.value = Mat::Zero(1, fan_out);
        b.grad = Mat::Zero(1, fan_out);
        biases_.push_back(std::move(b));
    }
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (const auto& w : weights_) n += static_cast<std::size_t>(w.value.size());
    for (const auto& b : biases_) n += static_cast<std::size_t>(b.value.size());
    return n;
}

void Mlp::zero_last_layer() {
    if (weights_.empty()) return;
    weights_.back().value.setZero();
    biases_.back().value.setZero();
}

Mlp::Binding Mlp::bind(Tape& tape) const {
    Binding binding;
    binding.w.reserve(weights_.size());
    binding.b.reserve(biases_.size());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        binding.w.push_back(tape.leaf(weights_[l].value));
        binding.b.push_back(tape.leaf(biases_[l].value));
    }
    return binding;
}

Value Mlp::apply(Tape& tape, const Binding& binding, Value x) const {
    if (tape.data(x).cols() != in_dim()) {
        throw ShapeError("mlp: input has " + std::to_string(tape.data(x).cols()) +
                         " features, expected " + std::to_string(in_dim()));
    }
    Value h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = tape.add_rowvec(tape.matmul(h, binding.w[l]), binding.b[l]);
        switch (activations_[l]) {
            case Act::Relu: h = tape.relu(h); break;
            case Act::Tanh: h = tape.tanh(h); break;
            case Act::Identity: break;
        }
    }
    return h;
}

void Mlp::accumulate_grads(const Tape& tape, const Binding& binding) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const Mat& gw = tape.grad(binding.w[l]);
        const Mat& gb = tape.grad(binding.b[l]);
        if (gw.size() == 0 || gb.size() == 0) continue;  // not part of the backward pass
        weights_[l].grad += gw;
        weights_[l].has_grad = true;
        biases_[l].grad += gb;
        biases_[l].has_grad = true;
    }
}

Value Mlp::forward(Tape& tape, Value x) const {
    return apply(tape, bind(tape), x);
}

Mat Mlp::infer(const Mat& x) const {
    if (x.cols() != in_dim()) {
        throw ShapeError("mlp: input has " + std::to_string(x.cols()) +
                         " features, expected " + std::to_string(in_dim()));
    }
    Mat h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = (h * weights_[l].value).rowwise() + biases_[l].value.row(0);
        switch (activations_[l]) {
            case Act::Relu: h = h.cwiseMax(0.0); break;
            case Act::Tanh: h = h.array().tanh().matrix(); break;
            case Act::Identity: break;
        }
    }
    if (!h.allFinite()) throw NonFiniteError("mlp: non-finite activation");
    return h;
}

std::vector<Param*> Mlp::params() {
    std::vector<Param*> out;
    for (auto& w : weights_) out.push_back(&w);
    for (auto& b : biases_) out.push_back(&b);
    return out;
}

std::vector<const Param*> Mlp::params() const {
    std::vector<const Param*> out;
    for (const auto& w : weights_) out.push_back(&w);
    for (const auto& b : biases_) out.push_back(&b);
    return out;
}

void Mlp::zero_grads() {
    for (auto* p : params()) p->zero_grad();
}

namespace {

nlohmann::json mat_to_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Mat mat_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    if (static_cast<Eigen::Index>(j.size()) != rows) {
        throw ParseError("checkpoint: matrix row count mismatch");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != cols) {
            throw ParseError("checkpoint: matrix column count mismatch");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
    }
    return m;
}

}  // namespace

nlohmann::json Mlp::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["widths"] = widths_;
    nlohmann::json acts = nlohmann::json::array();
    for (Act a : activations_) acts.push_back(act_name(a));
    j["activations"] = std::move(acts);
    nlohmann::json ws = nlohmann::json::array();
    nlohmann::json bs = nlohmann::json::array();
    for (const auto& w : weights_) ws.push_back(mat_to_json(w.value));
    for (const auto& b : biases_) bs.push_back(mat_to_json(b.value));
    j["weights"] = std::move(ws);
    j["biases"] = std::move(bs);
    return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
    if (j.value("version", 0) != 1) {
        throw ParseError("checkpoint: unsupported version");
    }
    Mlp m;
    m.widths_ = j.at("widths").get<std::vector<int>>();
    for (const auto& a : j.at("activations")) {
        m.activations_.push_back(act_from_name(a.get<std::string>()));
    }
    if (m.widths_.size() < 2 || m.activations_.size() != m.widths_.size() - 1) {
        throw ParseError("checkpoint: inconsistent layer description");
    }
    for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) {
        Param w;
        w.value = mat_from_json(j.at("weights").at(l), m.widths_[l], m.widths_[l + 1]);
        w.grad = Mat::Zero(m.widths_[l], m.widths_[l + 1]);
        m.weights_.push_back(std::move(w));
        Param b;
        b.value = mat_from_json(j.at("biases").at(l), 1, m.widths_[l + 1]);
        b.grad = Mat::Zero(1, m.widths_[l + 1]);
        m.biases_.push_back(std::move(b));
    }
    return m;
}

void Mlp::save(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << to_json().dump();
    if (!out) throw IoError("failed writing " + file.string());
}

Mlp Mlp::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw MissingArtifactError("cannot read " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + file.string() + ": " + e.what());
    }
    return from_json(j);
}

bool Mlp::bit_equal(const Mlp& other) const {
    if (widths_ != other.widths_) return false;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        if (weights_[l].value != other.weights_[l].value) return false;
        if (biases_[l].value != other.biases_[l].value) return false;
    }
    return true;
}

}  // namespace trajkit::ad
