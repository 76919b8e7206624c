#include <doctest.h>

#include <cmath>

#include "toy_data.hpp"
#include "trajkit/error.hpp"

using namespace trajkit;
using namespace trajkit::train;
using model::ArchConfig;
using model::Group;

TEST_CASE("config defaults and round trip") {
    TrainConfig c;
    CHECK(c.batch_size == 64);
    CHECK(c.stage_epochs == std::array<int, 4>{100, 50, 20, 300});
    CHECK(c.lr_baseline == 0.001);
    CHECK(c.lr_psi == 0.0005);
    CHECK(c.lr_h == 0.01);
    CHECK(c.lr_f == 0.01);
    CHECK(c.lr_f_adapt == 0.001);
    CHECK(c.contrastive_coef == 1.0);
    const TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK_THROWS_AS((void)TrainConfig::from_json({{"batch_size", -1}}), ConfigError);
}

TEST_CASE("pooled training fits the constant-velocity toy") {
    auto env = testutil::constant_velocity_env("cv", 800, 11, 0.25);
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.batch_size = 16;
    cfg.lr_baseline = 0.003;
    cfg.stage_epochs[0] = 100;
    ArchConfig arch;
    arch.phi_hidden = 64;
    arch.z_dim = 32;
    arch.g_hidden = 64;
    const TrainResult r = train_erm({env}, arch, cfg);
    REQUIRE_FALSE(r.curve.empty());
    double best = 1e9;
    for (const auto& log : r.curve) best = std::min(best, log.val_metric);
    CHECK(best < 0.01);
    CHECK(r.manifest["mode"] == "erm");
    CHECK(r.manifest["config"]["batch_size"] == 16);
}

TEST_CASE("fixed seed reproduces the loss curve bit-identically") {
    auto env = testutil::constant_velocity_env("cv", 80, 3);
    TrainConfig cfg;
    cfg.seed = 9;
    cfg.batch_size = 16;
    cfg.stage_epochs[0] = 6;
    ArchConfig arch;
    arch.phi_hidden = 16;
    arch.z_dim = 8;
    arch.g_hidden = 16;
    const TrainResult a = train_erm({env}, arch, cfg);
    const TrainResult b = train_erm({env}, arch, cfg);
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
        CHECK(a.curve[i].val_metric == b.curve[i].val_metric);
    }
    CHECK(a.model.bit_equal(b.model));
}

TEST_CASE("invariant training") {
    auto env_a = testutil::constant_velocity_env("a", 60, 21);
    auto env_b = testutil::constant_velocity_env("b", 60, 22);
    TrainConfig cfg;
    cfg.seed = 7;
    cfg.batch_size = 16;
    cfg.stage_epochs[0] = 4;
    ArchConfig arch;
    arch.phi_hidden = 16;
    arch.z_dim = 8;
    arch.g_hidden = 16;

    SUBCASE("needs two environments") {
        CHECK_THROWS_AS((void)train_invariant({env_a}, arch, cfg), ConfigError);
    }
    SUBCASE("runs and is deterministic") {
        cfg.lambda = 1.0;
        const TrainResult a = train_invariant({env_a, env_b}, arch, cfg);
        const TrainResult b = train_invariant({env_a, env_b}, arch, cfg);
        REQUIRE(a.curve.size() == b.curve.size());
        for (std::size_t i = 0; i < a.curve.size(); ++i) {
            CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
        }
    }
    SUBCASE("lambda grid emits one checkpoint per lambda") {
        cfg.stage_epochs[0] = 2;
        const std::vector<double> grid{0.001, 0.01, 0.1, 1, 10, 100};
        const auto results = lambda_grid_train({env_a, env_b}, arch, cfg, grid);
        CHECK(results.size() == grid.size());
        for (double l : grid) CHECK(results.count(l) == 1);
    }
}

TEST_CASE("staged modular protocol") {
    auto env_a = testutil::simulated_style_env(0.1, 30, 31);
    auto env_b = testutil::simulated_style_env(0.5, 30, 32);
    const std::vector<EnvDataset> envs{env_a, env_b};
    TrainConfig cfg;
    cfg.seed = 13;
    cfg.batch_size = 16;
    cfg.stage_epochs = {4, 3, 2, 3};
    cfg.style_obs_count = 4;
    ArchConfig arch;
    arch.phi_hidden = 32;
    arch.z_dim = 16;
    arch.c_dim = 8;
    arch.p_dim = 6;
    arch.psi_hidden = 32;
    arch.f_hidden = 16;
    arch.g_hidden = 32;
    arch.h_hidden = 8;

    SUBCASE("stage 3 and 4 leave the invariant encoder bit-identical") {
        TrainConfig stage1_only = cfg;
        stage1_only.stage_epochs = {4, 0, 0, 0};
        const TrainResult r1 = train_invariant(envs, arch, cfg);

        TrainConfig rest = cfg;
        rest.start_stage = 2;
        const TrainResult full = train_modular_staged(envs, arch, rest, r1.model);
        CHECK(full.model.net(Group::Phi).bit_equal(r1.model.net(Group::Phi)));
        // the other groups did move
        CHECK_FALSE(full.model.net(Group::F).bit_equal(r1.model.net(Group::F)));
        // stage curves cover stages 2, 3 and 4
        bool s2 = false, s3 = false, s4 = false;
        for (const auto& log : full.curve) {
            s2 |= log.stage == 2;
            s3 |= log.stage == 3;
            s4 |= log.stage == 4;
        }
        CHECK(s2);
        CHECK(s3);
        CHECK(s4);
    }
    SUBCASE("starting past stage 1 without a checkpoint is a typed error") {
        TrainConfig bad = cfg;
        bad.start_stage = 2;
        CHECK_THROWS_AS((void)train_modular_staged(envs, arch, bad), MissingArtifactError);
    }
    SUBCASE("skip toggle removes stage 2 from the curve") {
        TrainConfig skip = cfg;
        skip.skip_contrastive_pretrain = true;
        skip.stage_epochs = {2, 3, 1, 1};
        const TrainResult r = train_modular_staged(envs, arch, skip);
        for (const auto& log : r.curve) CHECK(log.stage != 2);
    }
    SUBCASE("full run is deterministic at fixed seed") {
        TrainConfig fast = cfg;
        fast.stage_epochs = {2, 2, 1, 2};
        const TrainResult a = train_modular_staged(envs, arch, fast);
        const TrainResult b = train_modular_staged(envs, arch, fast);
        CHECK(a.model.bit_equal(b.model));
    }
}

TEST_CASE("style observation sampling is deterministic and scene balanced") {
    auto env = testutil::simulated_style_env(0.3, 20, 41);
    const auto a = sample_style_observations(env.train, 6, 99);
    const auto b = sample_style_observations(env.train, 6, 99);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK_THROWS_AS((void)sample_style_observations(env.train, 0, 1), ConfigError);
}
