#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "trajkit/error.hpp"
#include "trajkit/rng.hpp"
#include "trajkit/window.hpp"

using namespace trajkit;
using namespace trajkit::data;

namespace {

TrajectoryScene straight_line_scene(int agents, int length, double speed = 1.0) {
    TrajectoryScene scene;
    scene.scene_id = "toy";
    scene.environment = "toy-env";
    for (int a = 0; a < agents; ++a) {
        scene.agent_ids.push_back(a);
        std::vector<Vec2> track;
        for (int t = 0; t < length; ++t) {
            track.push_back({speed * t, 2.0 * a});
        }
        scene.positions.push_back(std::move(track));
    }
    return scene;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("tsv loading") {
    SUBCASE("single agent, twenty frames, one scene") {
        const auto file = temp_file("trajkit_single.tsv");
        {
            std::ofstream out(file);
            for (int t = 0; t < 20; ++t) {
                out << t * 10 << "\t7\t" << 0.5 * t << "\t1.0\n";
            }
        }
        const auto scenes = load_tsv(file);
        REQUIRE(scenes.size() == 1);
        CHECK(scenes[0].num_agents() == 1);
        CHECK(scenes[0].length() == 20);
        CHECK(scenes[0].agent_ids[0] == 7);
        std::filesystem::remove(file);
    }
    SUBCASE("write then load round-trips exactly at 6 decimals") {
        auto scene = straight_line_scene(2, 20, 0.123456);
        const auto file = temp_file("trajkit_roundtrip.tsv");
        write_tsv(file, {scene});
        const auto back = load_tsv(file);
        REQUIRE(back.size() == 1);
        const auto file2 = temp_file("trajkit_roundtrip2.tsv");
        write_tsv(file2, back);
        std::ifstream f1(file), f2(file2);
        std::string s1((std::istreambuf_iterator<char>(f1)), {});
        std::string s2((std::istreambuf_iterator<char>(f2)), {});
        CHECK(s1 == s2);
        std::filesystem::remove(file);
        std::filesystem::remove(file2);
    }
    SUBCASE("malformed rows and frame gaps are typed errors with location") {
        const auto file = temp_file("trajkit_bad.tsv");
        {
            std::ofstream out(file);
            out << "0\t1\t0.0\t0.0\nnot-a-number\t1\t0\t0\n";
        }
        CHECK_THROWS_AS((void)load_tsv(file), ParseError);
        {
            std::ofstream out(file);
            out << "0\t1\t0.0\t0.0\n10\t1\t0.1\t0.0\n30\t1\t0.2\t0.0\n10\t2\t0\t0\n20\t2\t0\t0\n";
        }
        CHECK_THROWS_AS((void)load_tsv(file), ParseError);
        std::filesystem::remove(file);
    }
}

TEST_CASE("two overlapping agents give one window each with the other as neighbor") {
    const auto file = temp_file("trajkit_pair.tsv");
    {
        std::ofstream out(file);
        for (int t = 0; t < 20; ++t) {
            out << t * 10 << "\t1\t" << 1.0 * t << "\t0.0\n";
            out << t * 10 << "\t2\t" << 1.0 * t << "\t3.0\n";
        }
    }
    const auto scenes = load_tsv(file);
    REQUIRE(scenes.size() == 1);
    const auto windows = window_scenes(scenes);
    REQUIRE(windows.size() == 2);
    for (const auto& w : windows) {
        CHECK(w.neighbor_mask.sum() == 1.0);
        // the single neighbor sits 3 m away in y for every step
        for (int t = 0; t < kPastSteps; ++t) {
            CHECK(w.neighbor_past(t, 0) == doctest::Approx(0.0));
            CHECK(std::abs(w.neighbor_past(t, 1)) == doctest::Approx(3.0));
        }
    }
    std::filesystem::remove(file);
}

TEST_CASE("window extraction") {
    SUBCASE("scene of length 20 yields one window per agent") {
        const auto windows = window_scenes({straight_line_scene(3, 20)});
        CHECK(windows.size() == 3);
    }
    SUBCASE("scene of length 25 yields six windows per agent") {
        const auto windows = window_scenes({straight_line_scene(2, 25)});
        CHECK(windows.size() == 2 * 6);
    }
    SUBCASE("short scenes yield nothing") {
        CHECK(window_scenes({straight_line_scene(2, 19)}).empty());
    }
    SUBCASE("normalization puts the last observed step at the origin") {
        const auto windows = window_scenes({straight_line_scene(1, 20)});
        REQUIRE(windows.size() == 1);
        CHECK(windows[0].past(kPastSteps - 1, 0) == 0.0);
        CHECK(windows[0].past(kPastSteps - 1, 1) == 0.0);
        CHECK(windows[0].origin.x == doctest::Approx(7.0));
        // future continues the unit-speed line in normalized coordinates
        CHECK(windows[0].future(0, 0) == doctest::Approx(1.0));
        CHECK(windows[0].future(kFutureSteps - 1, 0) == doctest::Approx(12.0));
    }
    SUBCASE("permuting the scene list permutes windows without changing content") {
        const auto a = straight_line_scene(1, 20, 1.0);
        auto b = straight_line_scene(1, 21, 2.0);
        b.scene_id = "toy2";
        const auto w1 = window_scenes({a, b});
        const auto w2 = window_scenes({b, a});
        REQUIRE(w1.size() == w2.size());
        CHECK(w1[0].scene_id == w2[w2.size() - 1].scene_id);
        CHECK(w1[0].past == w2[w2.size() - 1].past);
    }
    SUBCASE("neighbor ordering matches a brute-force sort at the anchor frame") {
        TrajectoryScene scene;
        scene.scene_id = "four";
        const std::vector<double> offsets{0.0, 5.0, 1.5, -3.0};
        for (int a = 0; a < 4; ++a) {
            scene.agent_ids.push_back(a);
            std::vector<Vec2> track;
            for (int t = 0; t < 20; ++t) track.push_back({1.0 * t, offsets[a]});
            scene.positions.push_back(std::move(track));
        }
        const auto windows = window_scenes({scene});
        REQUIRE(windows.size() == 4);
        // for primary agent 0 the distance order is agent 2 (1.5), 3 (3.0), 1 (5.0)
        const auto& w = windows[0];
        CHECK(w.neighbor_past(0 * kPastSteps, 1) == doctest::Approx(1.5));
        CHECK(w.neighbor_past(1 * kPastSteps, 1) == doctest::Approx(-3.0));
        CHECK(w.neighbor_past(2 * kPastSteps, 1) == doctest::Approx(5.0));
        CHECK(w.neighbor_mask.sum() == 3.0);
    }
}

TEST_CASE("curvature sigma") {
    SUBCASE("straight line gives sigma equal to alpha everywhere") {
        std::vector<Vec2> line;
        for (int t = 0; t < 20; ++t) line.push_back({0.7 * t, -0.2 * t});
        for (double alpha : {1.0, 2.0, 8.0}) {
            const auto sigma = curvature_sigma(line, alpha);
            REQUIRE(sigma.size() == line.size());
            for (double s : sigma) CHECK(s == doctest::Approx(alpha).epsilon(1e-12));
        }
    }
    SUBCASE("direct substitution: alpha 2, gamma 0.25 gives 2.5") {
        // velocity changes from (1,0) to (1.5,0) across the probe window:
        // gamma = 0.5^2 = 0.25
        std::vector<Vec2> traj;
        Vec2 p{0, 0};
        for (int t = 0; t < 24; ++t) {
            traj.push_back(p);
            p += (t < 6 ? Vec2{1.0, 0.0} : Vec2{1.5, 0.0});
        }
        const auto sigma = curvature_sigma(traj, 2.0);
        // at t=0 the velocity window spans the speed change
        CHECK(sigma[0] == doctest::Approx(2.0 * (0.25 + 1.0)).epsilon(1e-12));
    }
    SUBCASE("right-angle turn with unit steps gives sigma = 3 alpha") {
        std::vector<Vec2> traj;
        Vec2 p{0, 0};
        for (int t = 0; t < 12; ++t) {
            traj.push_back(p);
            p += Vec2{1.0, 0.0};
        }
        Vec2 corner = traj.back();
        for (int t = 1; t < 12; ++t) {
            traj.push_back(corner + Vec2{0.0, 1.0 * t});
        }
        const auto sigma = curvature_sigma(traj, 1.5);
        // velocity flips from (1,0) to (0,1) at step 11; the probe window of
        // length 8 first spans the flip at t=3: gamma = 1 + 1 = 2
        CHECK(sigma[2] == doctest::Approx(1.5).epsilon(1e-12));
        CHECK(sigma[3] == doctest::Approx(1.5 * 3.0).epsilon(1e-12));
        CHECK(sigma[10] == doctest::Approx(1.5 * 3.0).epsilon(1e-12));
    }
    SUBCASE("doubling alpha doubles sigma exactly") {
        std::vector<Vec2> traj;
        trajkit::Rng rng(5);
        Vec2 p{0, 0};
        for (int t = 0; t < 20; ++t) {
            traj.push_back(p);
            p += Vec2{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        }
        const auto s1 = curvature_sigma(traj, 3.0);
        const auto s2 = curvature_sigma(traj, 6.0);
        for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s2[i] == 2.0 * s1[i]);
    }
    SUBCASE("translation invariance") {
        std::vector<Vec2> traj, shifted;
        trajkit::Rng rng(6);
        Vec2 p{0, 0};
        for (int t = 0; t < 20; ++t) {
            traj.push_back(p);
            shifted.push_back(p + Vec2{100.0, -50.0});
            p += Vec2{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        }
        const auto s1 = curvature_sigma(traj, 2.0);
        const auto s2 = curvature_sigma(shifted, 2.0);
        for (std::size_t i = 0; i < s1.size(); ++i) {
            CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-12));
        }
    }
    SUBCASE("guards") {
        std::vector<Vec2> tiny{{0, 0}, {1, 0}, {2, 0}};
        CHECK_THROWS_AS((void)curvature_sigma(tiny, 1.0), ConfigError);
        std::vector<Vec2> ok(12, Vec2{0, 0});
        for (std::size_t t = 0; t < ok.size(); ++t) ok[t] = {1.0 * t, 0};
        CHECK_THROWS_AS((void)curvature_sigma(ok, 0.0), ConfigError);
        CHECK_THROWS_AS((void)curvature_sigma(ok, -1.0), ConfigError);
    }
}

TEST_CASE("spurious environment tagging") {
    std::map<std::string, std::vector<TrajectoryScene>> subsets;
    subsets["hotel"] = {straight_line_scene(2, 20)};
    subsets["univ"] = {straight_line_scene(2, 20)};
    std::map<std::string, double> alphas{{"hotel", 1.0}, {"univ", 2.0}};
    const auto envs = make_spurious_environments(subsets, alphas);
    REQUIRE(envs.size() == 2);
    CHECK(envs[0].id == "hotel@a1");
    CHECK(envs[1].id == "univ@a2");
    for (const auto& env : envs) {
        for (const auto& w : env.windows) {
            CHECK(w.has_sigma());
            CHECK(w.environment == env.id);
            // straight line: sigma equals alpha on every observed step
            for (int t = 0; t < kPastSteps; ++t) {
                CHECK(w.past(t, 2) == doctest::Approx(env.parameter).epsilon(1e-12));
            }
        }
    }

    CHECK_THROWS_AS((void)make_spurious_environments(subsets, {{"zara9", 1.0}}), ConfigError);
    CHECK_THROWS_AS((void)make_spurious_environments(subsets, {{"hotel", 0.0}}), ConfigError);
}
