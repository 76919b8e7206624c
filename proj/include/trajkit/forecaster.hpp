#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trajkit/mlp.hpp"
#include "trajkit/optim.hpp"
#include "trajkit/window.hpp"

namespace trajkit::model {

using ad::Mat;
using ad::Mlp;
using ad::Tape;
using ad::Value;
using data::InstanceWindow;

// Parameter groups of the modular forecaster.
enum class Group { Phi, Psi, F, G, H };
const char* group_name(Group g);

struct ArchConfig {
    int past_channels = 2;  // 3 when the sigma channel is present
    int z_dim = 64;
    int c_dim = 32;
    int p_dim = 16;
    int phi_hidden = 128;
    int psi_hidden = 128;
    int f_hidden = 64;
    int g_hidden = 128;
    int h_hidden = 32;
    bool modular = true;  // false: invariant encoder + decoder only

    int phi_in() const {
        return data::kPastSteps * past_channels +
               data::kMaxNeighbors * data::kPastSteps * 2;
    }
    int style_in() const { return 2 * data::kWindowSteps * 2; }
    int out_dim() const { return data::kFutureSteps * 2; }

    nlohmann::json to_json() const;
    static ArchConfig from_json(const nlohmann::json& j);
};

// Invariant encoder phi, style encoder psi, residual style modulator f,
// decoder g and projection head h. Sub-networks are individually freezable
// and checkpoint to one file each.
class Forecaster {
public:
    Forecaster() = default;
    static Forecaster init(const ArchConfig& arch, Rng& rng);

    const ArchConfig& arch() const { return arch_; }
    Mlp& net(Group g);
    const Mlp& net(Group g) const;

    void freeze(Group g, bool frozen = true);
    bool is_frozen(Group g) const;

    // Flattened primary past (+ sigma) followed by the masked neighbor block.
    static Eigen::VectorXd input_features(const InstanceWindow& w);
    static Mat input_batch(const std::vector<InstanceWindow>& ws);
    static Mat future_batch(const std::vector<InstanceWindow>& ws);
    static Mat style_batch(const std::vector<InstanceWindow>& ws);

    struct Bindings {
        Mlp::Binding phi, psi, f, g, h;
    };
    Bindings bind(Tape& tape) const;
    // Accumulates gradients for every unfrozen group.
    void accumulate_grads(const Tape& tape, const Bindings& b);

    // z = phi(x); x is batch x phi_in
    Value encode_invariant(Tape& tape, const Bindings& b, Value x) const;
    // c = mean over observation rows of psi(o); obs is batch x style_in
    Value encode_style(Tape& tape, const Bindings& b, Value obs) const;
    // z~ = f([z c]) + z with c (1 x c_dim) broadcast over the batch rows
    Value modulate(Tape& tape, const Bindings& b, Value z, Value c) const;
    // y^ = g(z~), batch x 24
    Value decode(Tape& tape, const Bindings& b, Value zt) const;
    // p = h(c) / ||h(c)||, rowwise
    Value project(Tape& tape, const Bindings& b, Value c) const;

    // Tape-free batched prediction, normalized outputs (batch x 24). With a
    // style vector the modulated path is used, otherwise the invariant path.
    Mat predict(const std::vector<InstanceWindow>& ws,
                const std::optional<Eigen::VectorXd>& style_c = std::nullopt) const;
    // c from one or more full-scene observations (mean of psi outputs).
    Eigen::VectorXd style_embedding(const std::vector<Eigen::VectorXd>& observations) const;
    // p = h(c)/||h(c)|| without a tape.
    Eigen::VectorXd project_embedding(const Eigen::VectorXd& c) const;

    std::vector<ad::Param*> group_params(Group g) { return net(g).params(); }

    void save(const std::filesystem::path& dir) const;
    static Forecaster load(const std::filesystem::path& dir);
    bool bit_equal(const Forecaster& other) const;

private:
    ArchConfig arch_;
    Mlp phi_, psi_, f_, g_, h_;
    bool frozen_[5] = {false, false, false, false, false};
};

// De-normalizes one prediction row (24 values) into absolute 12x2 meters.
Mat denormalize_prediction(const Eigen::RowVectorXd& row, const Vec2& origin);
Mat denormalize_future(const InstanceWindow& w);

}  // namespace trajkit::model
