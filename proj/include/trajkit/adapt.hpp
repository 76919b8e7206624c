#pragma once

#include <optional>
#include <vector>

#include "trajkit/forecaster.hpp"
#include "trajkit/train.hpp"

namespace trajkit::adapt {

using model::Forecaster;

enum class FinetuneStrategy {
    AllStyleParams,  // psi, f, g, h
    ModulatorOnly,   // f
};

// Fine-tunes on k batches of new-environment windows (k in [1, 6]). The
// invariant encoder phi stays frozen under both strategies. A quarter of the
// adaptation samples is held out for early stopping.
Forecaster finetune(const Forecaster& checkpoint,
                    const std::vector<data::InstanceWindow>& new_env_samples,
                    FinetuneStrategy strategy, int k_batches,
                    const train::TrainConfig& config);

// Projected (unit-norm) embeddings of `count` observed full trajectories from
// the target environment; cached by callers as refinement targets.
std::vector<Eigen::VectorXd> build_style_references(
    const Forecaster& m, const std::vector<data::InstanceWindow>& new_env_samples,
    int count, std::uint64_t seed);

struct RefineResult {
    Eigen::RowVectorXd yhat;  // normalized prediction row (24 values)
    bool warned = false;      // refinement aborted on a non-finite objective
    std::vector<double> objective_trace;  // value after each accepted step
    int accepted_steps = 0;
};

// Per-instance latent refinement: starting from the modulated latent of the
// forward pass, takes `iters` accepted gradient steps on the latent only,
// each minimizing the mean cosine distance between the projected embedding of
// the pseudo-observation [past; predicted future] and the references. A step
// that fails to decrease the objective is retried with half the step size (at
// most 5 halvings), then refinement stops early. Model weights are never
// touched.
RefineResult test_time_refine(const data::InstanceWindow& window, const Forecaster& m,
                              const Eigen::VectorXd& style_c,
                              const std::vector<Eigen::VectorXd>& references,
                              int iters = 3, double step_size = 0.05);

// The pseudo-observation feature row used by the refinement objective: the
// primary's observed past plus a future, with the neighbor track extrapolated
// by holding its last observed relative offset.
Eigen::RowVectorXd pseudo_observation(const data::InstanceWindow& window,
                                      const Eigen::RowVectorXd& future_row);

}  // namespace trajkit::adapt
