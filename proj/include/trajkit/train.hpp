#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajkit/forecaster.hpp"

namespace trajkit::train {

struct TrainConfig {
    int batch_size = 64;
    // invariant/erm pretrain, contrastive pretrain, modulator, end-to-end
    std::array<int, 4> stage_epochs{100, 50, 20, 300};
    double lr_baseline = 0.001;  // phi and g
    double lr_psi = 0.0005;
    double lr_h = 0.01;
    double lr_f = 0.01;
    double lr_f_adapt = 0.001;
    double lambda = 1.0;
    double tau = 0.1;
    double contrastive_coef = 1.0;
    std::uint64_t seed = 1;
    bool skip_contrastive_pretrain = false;
    bool invariant_stage1 = true;  // false: plain pooled risk for stage 1
    int start_stage = 1;
    int style_obs_count = 8;
    // multiplies stage_epochs; desk-scale suites run shortened schedules
    double epoch_scale = 1.0;

    int scaled_epochs(int stage) const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EnvDataset {
    std::string env;
    std::vector<data::InstanceWindow> train;
    std::vector<data::InstanceWindow> val;
};

struct EpochLog {
    int stage = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0;  // ADE except for the contrastive pretrain stage
};

struct TrainResult {
    model::Forecaster model;
    std::vector<EpochLog> curve;
    nlohmann::json manifest;
};

void write_curve_csv(const std::filesystem::path& file, const std::vector<EpochLog>& curve);

// Pooled empirical risk on merged environments; keeps the best-validation
// parameters. `init` continues from an existing model instead of a fresh one.
TrainResult train_erm(const std::vector<EnvDataset>& envs, const model::ArchConfig& arch,
                      const TrainConfig& config,
                      std::optional<model::Forecaster> init = std::nullopt);

// Per-environment batching with the gradient-norm invariance penalty.
TrainResult train_invariant(const std::vector<EnvDataset>& envs,
                            const model::ArchConfig& arch, const TrainConfig& config,
                            std::optional<model::Forecaster> init = std::nullopt);

// One checkpoint per penalty weight.
std::map<double, TrainResult> lambda_grid_train(const std::vector<EnvDataset>& envs,
                                                const model::ArchConfig& arch,
                                                const TrainConfig& config,
                                                const std::vector<double>& lambda_grid);

// Staged modular protocol: (1) invariant or pooled pretrain of phi+g,
// (2) contrastive pretrain of psi+h, (3) modulator f on the task loss with
// everything else frozen, (4) psi, f, g, h jointly on task + contrastive with
// phi frozen. Set start_stage > 1 to resume from `stage1`.
TrainResult train_modular_staged(const std::vector<EnvDataset>& envs,
                                 const model::ArchConfig& arch, const TrainConfig& config,
                                 std::optional<model::Forecaster> stage1 = std::nullopt);

// Deterministic style references: the embedding input rows of
// `count` windows sampled scene-balanced from the dataset.
std::vector<Eigen::VectorXd> sample_style_observations(
    const std::vector<data::InstanceWindow>& windows, int count, std::uint64_t seed);

// FNV-1a over the window payload; run manifests embed these so reruns are
// checkable.
std::uint64_t dataset_hash(const std::vector<EnvDataset>& envs);

}  // namespace trajkit::train
