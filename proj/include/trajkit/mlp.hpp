#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajkit/rng.hpp"
#include "trajkit/tape.hpp"

namespace trajkit::ad {

enum class Act { Relu, Tanh, Identity };

std::string act_name(Act a);
Act act_from_name(const std::string& name);

struct Param {
    Mat value;
    Mat grad;
    bool has_grad = false;

    void zero_grad() {
        grad.setZero();
        has_grad = false;
    }
};

// Small fully connected network, x -> x W1 + b1 -> act -> ... (x is batch x in).
// Weights are initialized uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<int> widths, std::vector<Act> activations, Rng& rng);

    int in_dim() const { return widths_.empty() ? 0 : widths_.front(); }
    int out_dim() const { return widths_.empty() ? 0 : widths_.back(); }
    int layers() const { return static_cast<int>(weights_.size()); }
    const std::vector<int>& widths() const { return widths_; }
    std::size_t param_count() const;

    // Final layer to exact zero; used so a residual modulator starts as identity.
    void zero_last_layer();

    struct Binding {
        std::vector<Value> w;
        std::vector<Value> b;
    };

    // Creates tape leaves holding the current parameter values.
    Binding bind(Tape& tape) const;
    // Forward through the bound parameters; x is batch x in_dim.
    Value apply(Tape& tape, const Binding& binding, Value x) const;
    // Adds the tape gradients of a binding into the persistent param grads.
    void accumulate_grads(const Tape& tape, const Binding& binding);

    // Convenience for a single fresh tape (inference-style, but differentiable).
    Value forward(Tape& tape, Value x) const;

    // Plain forward without a tape.
    Mat infer(const Mat& x) const;

    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    void zero_grads();

    nlohmann::json to_json() const;
    static Mlp from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& file) const;
    static Mlp load(const std::filesystem::path& file);

    bool bit_equal(const Mlp& other) const;

private:
    std::vector<int> widths_;
    std::vector<Act> activations_;
    std::vector<Param> weights_;  // in x out per layer
    std::vector<Param> biases_;   // 1 x out per layer
};

}  // namespace trajkit::ad
