#pragma once

#include <vector>

#include "trajkit/tape.hpp"

namespace trajkit::loss {

using ad::Tape;
using ad::Value;

// Mean over examples and timesteps of the squared Euclidean step error.
// Predictions and targets are batch x (2 * steps), coordinates interleaved.
Value task_loss(Tape& tape, Value yhat, Value y);

// Gradient-norm relaxation of the invariance principle for one environment:
// the squared derivative of the per-entry mean squared error w.r.t. a dummy
// scalar multiplier on the predictions, evaluated at 1. Differentiable in
// yhat, so a single reverse pass covers it.
Value invariant_penalty(Tape& tape, Value yhat, Value y);

struct EnvPrediction {
    Value yhat;
    Value y;
};

// Mean over environments of task risk + lambda * penalty. With lambda = 0 this
// is exactly pooled risk over environment means.
Value combined_invariant_objective(Tape& tape, const std::vector<EnvPrediction>& envs,
                                   double lambda);

// Supervised contrastive loss over projected style embeddings with cosine
// similarity and temperature tau, averaged over ordered same-environment
// pairs. The denominator for anchor i and positive j covers j itself plus
// every sample from a different environment.
Value style_contrastive(Tape& tape, Value projected, const std::vector<int>& env_labels,
                        double tau);

}  // namespace trajkit::loss
