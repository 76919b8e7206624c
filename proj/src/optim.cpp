#include "trajkit/optim.hpp"

#include <cmath>

#include "trajkit/error.hpp"

namespace trajkit::ad {

Optimizer::Optimizer(OptimConfig config, std::vector<Param*> params)
    : config_(config), params_(std::move(params)) {
    if (config_.lr <= 0.0) throw ConfigError("optimizer: learning rate must be positive");
    if (config_.algo == Algo::Adam) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Param* p : params_) {
            m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        }
    }
}

void Optimizer::step() {
    for (const Param* p : params_) {
        if (!p->has_grad) {
            throw MissingGradError("optimizer: step() before gradients were accumulated");
        }
        if (!p->grad.allFinite()) {
            throw NonFiniteError("optimizer: non-finite gradient");
        }
    }
    ++step_count_;
    if (config_.algo == Algo::Sgd) {
        for (Param* p : params_) {
            p->value -= config_.lr * p->grad;
        }
    } else {
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Param* p = params_[i];
            m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p->grad;
            v_[i] = config_.beta2 * v_[i] +
                    (1.0 - config_.beta2) * p->grad.cwiseProduct(p->grad).eval();
            const Mat mhat = m_[i] / bc1;
            const Mat vhat = v_[i] / bc2;
            p->value.array() -=
                config_.lr * mhat.array() / (vhat.array().sqrt() + config_.eps);
        }
    }
    for (Param* p : params_) p->zero_grad();
}

}  // namespace trajkit::ad
