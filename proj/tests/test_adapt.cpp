#include <doctest.h>

#include <cmath>

#include "toy_data.hpp"
#include "trajkit/adapt.hpp"
#include "trajkit/error.hpp"

using namespace trajkit;
using namespace trajkit::adapt;
using model::ArchConfig;
using model::Forecaster;
using model::Group;

namespace {

struct Fixture {
    ArchConfig arch;
    Forecaster base;
    train::EnvDataset new_env;
    train::TrainConfig cfg;

    Fixture() {
        arch.phi_hidden = 32;
        arch.z_dim = 16;
        arch.c_dim = 8;
        arch.p_dim = 6;
        arch.psi_hidden = 32;
        arch.f_hidden = 16;
        arch.g_hidden = 32;
        arch.h_hidden = 8;
        cfg.batch_size = 16;
        cfg.seed = 3;
        cfg.style_obs_count = 4;
        Rng rng(17);
        base = Forecaster::init(arch, rng);
        // a short fit so f and g are not at their random init
        auto env_a = testutil::simulated_style_env(0.1, 25, 51);
        auto env_b = testutil::simulated_style_env(0.5, 25, 52);
        train::TrainConfig t = cfg;
        t.stage_epochs = {3, 2, 1, 2};
        base = train::train_modular_staged({env_a, env_b}, arch, t).model;
        new_env = testutil::simulated_style_env(0.7, 40, 53);
    }
};

}  // namespace

TEST_CASE("finetune strategies") {
    static Fixture fx;

    SUBCASE("k out of range is rejected") {
        CHECK_THROWS_AS(
            (void)finetune(fx.base, fx.new_env.train, FinetuneStrategy::ModulatorOnly, 0, fx.cfg),
            ConfigError);
        CHECK_THROWS_AS(
            (void)finetune(fx.base, fx.new_env.train, FinetuneStrategy::ModulatorOnly, 7, fx.cfg),
            ConfigError);
    }
    SUBCASE("modulator-only changes exactly one parameter group") {
        const Forecaster adapted =
            finetune(fx.base, fx.new_env.train, FinetuneStrategy::ModulatorOnly, 1, fx.cfg);
        CHECK(adapted.net(Group::Phi).bit_equal(fx.base.net(Group::Phi)));
        CHECK(adapted.net(Group::Psi).bit_equal(fx.base.net(Group::Psi)));
        CHECK(adapted.net(Group::G).bit_equal(fx.base.net(Group::G)));
        CHECK(adapted.net(Group::H).bit_equal(fx.base.net(Group::H)));
        CHECK_FALSE(adapted.net(Group::F).bit_equal(fx.base.net(Group::F)));
    }
    SUBCASE("all-style keeps the invariant encoder frozen") {
        const Forecaster adapted =
            finetune(fx.base, fx.new_env.train, FinetuneStrategy::AllStyleParams, 2, fx.cfg);
        CHECK(adapted.net(Group::Phi).bit_equal(fx.base.net(Group::Phi)));
        CHECK_FALSE(adapted.net(Group::F).bit_equal(fx.base.net(Group::F)));
        CHECK_FALSE(adapted.net(Group::G).bit_equal(fx.base.net(Group::G)));
    }
}

TEST_CASE("style references") {
    static Fixture fx;
    const auto refs = build_style_references(fx.base, fx.new_env.train, 5, 7);
    CHECK(refs.size() == 5);
    for (const auto& p : refs) CHECK(p.norm() == doctest::Approx(1.0).epsilon(1e-12));
    const auto again = build_style_references(fx.base, fx.new_env.train, 5, 7);
    for (std::size_t i = 0; i < refs.size(); ++i) CHECK(refs[i] == again[i]);
    CHECK_THROWS_AS((void)build_style_references(fx.base, fx.new_env.train, 0, 7), ConfigError);
}

TEST_CASE("test-time refinement") {
    static Fixture fx;
    const auto& window = fx.new_env.train.front();
    const Eigen::VectorXd c = fx.base.style_embedding(
        train::sample_style_observations(fx.new_env.train, 4, 5));
    const auto refs = build_style_references(fx.base, fx.new_env.train, 4, 9);

    SUBCASE("zero iterations return the plain forward output") {
        const auto r = test_time_refine(window, fx.base, c, refs, 0, 0.05);
        const auto plain = fx.base.predict({window}, c);
        CHECK(r.yhat == plain.row(0));
        CHECK(r.accepted_steps == 0);
    }
    SUBCASE("objective is non-increasing across accepted steps") {
        const auto r = test_time_refine(window, fx.base, c, refs, 5, 0.05);
        for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
            CHECK(r.objective_trace[i] <= r.objective_trace[i - 1]);
        }
    }
    SUBCASE("model parameters are untouched by refinement") {
        const Forecaster before = fx.base;
        (void)test_time_refine(window, fx.base, c, refs, 3, 0.05);
        CHECK(fx.base.bit_equal(before));
    }
    SUBCASE("self-referenced window scores best at the ground truth") {
        // references built from the window's own past+future through the same
        // pseudo-observation featurization
        Eigen::RowVectorXd truth_row(data::kFutureSteps * 2);
        for (int t = 0; t < data::kFutureSteps; ++t) {
            truth_row(2 * t) = window.future(t, 0);
            truth_row(2 * t + 1) = window.future(t, 1);
        }
        const Eigen::RowVectorXd self_obs = pseudo_observation(window, truth_row);
        const Eigen::VectorXd c_self = fx.base.style_embedding({self_obs.transpose()});
        const std::vector<Eigen::VectorXd> self_refs{fx.base.project_embedding(c_self)};

        auto objective_at = [&](const Eigen::RowVectorXd& future_row) {
            const Eigen::RowVectorXd obs = pseudo_observation(window, future_row);
            const Eigen::VectorXd emb =
                fx.base.project_embedding(fx.base.style_embedding({obs.transpose()}));
            return 1.0 - emb.dot(self_refs[0]);
        };
        const auto plain = fx.base.predict({window}, c);
        CHECK(objective_at(truth_row) <= objective_at(plain.row(0)) + 1e-12);
        CHECK(objective_at(truth_row) < 1e-12);
    }
}
