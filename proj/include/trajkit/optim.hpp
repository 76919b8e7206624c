#pragma once

#include <cstdint>
#include <vector>

#include "trajkit/mlp.hpp"

namespace trajkit::ad {

enum class Algo { Sgd, Adam };

struct OptimConfig {
    Algo algo = Algo::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Owns per-parameter moment buffers for one group of parameters. Parameters
// excluded from the group are never touched (frozen groups stay bit-identical).
class Optimizer {
public:
    Optimizer(OptimConfig config, std::vector<Param*> params);

    // Applies one update from the accumulated gradients, then zeroes them.
    void step();
    std::int64_t steps() const { return step_count_; }
    const OptimConfig& config() const { return config_; }

private:
    OptimConfig config_;
    std::vector<Param*> params_;
    std::vector<Mat> m_;
    std::vector<Mat> v_;
    std::int64_t step_count_ = 0;
};

}  // namespace trajkit::ad
