#include "trajkit/loss.hpp"

#include <iostream>

#include "trajkit/error.hpp"

namespace trajkit::loss {

Value task_loss(Tape& tape, Value yhat, Value y) {
    const auto& pred = tape.data(yhat);
    if (pred.rows() == 0) throw ConfigError("task_loss: empty batch");
    if (pred.cols() % 2 != 0) throw ShapeError("task_loss: columns must pair x,y");
    // mean over entries of the squared difference is half the mean squared
    // Euclidean step error for 2D coordinates
    return tape.scale(tape.mse(yhat, y), 2.0);
}

Value invariant_penalty(Tape& tape, Value yhat, Value y) {
    const auto& pred = tape.data(yhat);
    if (pred.rows() == 0) throw ConfigError("invariant_penalty: empty batch");
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    // d/dw [ (1/N) sum (w*yhat - y)^2 ] at w=1  ==  (2/N) sum yhat * (yhat - y)
    Value grad_w = tape.scale(tape.sum(tape.mul(yhat, tape.sub(yhat, y))), 2.0 * inv_n);
    return tape.mul(grad_w, grad_w);
}

Value combined_invariant_objective(Tape& tape, const std::vector<EnvPrediction>& envs,
                                   double lambda) {
    if (lambda < 0.0) throw ConfigError("invariant objective: lambda must be >= 0");
    if (envs.empty()) throw ConfigError("invariant objective: no environments");
    if (envs.size() < 2) {
        static bool warned = false;
        if (!warned) {
            std::cerr << "warning: invariance penalty over a single environment "
                         "cannot separate spurious from invariant features\n";
            warned = true;
        }
    }
    Value total = task_loss(tape, envs[0].yhat, envs[0].y);
    if (lambda > 0.0) {
        total = tape.add(total,
                         tape.scale(invariant_penalty(tape, envs[0].yhat, envs[0].y), lambda));
    }
    for (std::size_t e = 1; e < envs.size(); ++e) {
        Value term = task_loss(tape, envs[e].yhat, envs[e].y);
        if (lambda > 0.0) {
            term = tape.add(term,
                            tape.scale(invariant_penalty(tape, envs[e].yhat, envs[e].y), lambda));
        }
        total = tape.add(total, term);
    }
    return tape.scale(total, 1.0 / static_cast<double>(envs.size()));
}

Value style_contrastive(Tape& tape, Value projected, const std::vector<int>& env_labels,
                        double tau) {
    return tape.style_nce(projected, env_labels, tau);
}

}  // namespace trajkit::loss
