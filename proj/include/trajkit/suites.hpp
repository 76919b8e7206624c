#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "trajkit/adapt.hpp"
#include "trajkit/metrics.hpp"
#include "trajkit/scenario.hpp"
#include "trajkit/train.hpp"
#include "trajkit/window.hpp"

namespace trajkit::suite {

// Dataset sizing plus the schedule multiplier the desk-scale suites apply to
// the per-stage epoch counts.
struct Scale {
    std::string name;
    sim::DatasetCounts style_counts;      // training-style environments
    sim::DatasetCounts ood_counts;        // held-out style environments
    sim::DatasetCounts subset_counts;     // synthesized location subsets
    double epoch_scale = 1.0;
};

Scale desk_scale();
Scale paper_scale();
Scale smoke_scale();  // minutes-scale data for unit tests
Scale scale_by_name(const std::string& name);

inline const std::vector<double> kTrainStyles{0.1, 0.3, 0.5};
inline const std::vector<double> kOodStyles{0.4, 0.6, 0.7, 0.8};
inline const std::vector<std::string> kSubsets{"hotel", "univ", "zara1", "zara2", "eth"};
inline const std::vector<double> kTrainAlphas{1.0, 2.0, 4.0, 8.0};
inline const std::vector<double> kTestAlphas{1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0};

// Generates (or reuses, when the manifest matches) every style environment.
void ensure_style_datasets(const std::filesystem::path& data_dir, const Scale& scale,
                           std::uint64_t seed);
// Synthesized stand-ins for the five location subsets; real recordings placed
// as <data_dir>/subsets/<name>.tsv are used instead when present.
void ensure_subset_datasets(const std::filesystem::path& data_dir, const Scale& scale,
                            std::uint64_t seed);

struct StyleData {
    std::vector<train::EnvDataset> train_envs;
    // environment id -> windows; "IID:<env>" test splits plus OOD test splits
    std::map<std::string, std::vector<data::InstanceWindow>> test;
    // observation/adaptation pools disjoint from test
    std::map<std::string, std::vector<data::InstanceWindow>> pool;
};
StyleData load_style_data(const std::filesystem::path& data_dir, const Scale& scale);

struct SpuriousData {
    std::vector<train::EnvDataset> train_envs;  // four subsets at alpha 1/2/4/8
    // test alpha -> windows of the held-out subset tagged with that alpha
    std::map<double, std::vector<data::InstanceWindow>> test_by_alpha;
};
SpuriousData load_spurious_data(const std::filesystem::path& data_dir, const Scale& scale);

struct SuiteConfig {
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    Scale scale = desk_scale();
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    train::TrainConfig base;
    std::uint64_t data_seed = 424242;
};

// Robustness under the controlled spurious channel: pooled-risk and
// invariance-trained backbones evaluated across the test strength sweep.
// Environment ids in the report are "eth@a<alpha>".
eval::EvalReport run_spurious_suite(const SuiteConfig& cfg);

// Zero-shot style generalization of vanilla / invariant / modular / inv_mod
// across IID and held-out separation styles.
eval::EvalReport run_style_suite(const SuiteConfig& cfg);

// Low-shot transfer on the d=0.6 style: fine-tune-all vs modulator-only vs
// modulator-only + test-time refinement, k in [1, 6] batches.
eval::EvalReport run_transfer_suite(const SuiteConfig& cfg);

struct ContrastiveArm {
    bool pretrained = false;
    std::uint64_t seed = 0;
    std::vector<double> stage4_val;  // per-epoch validation ADE
};
// Stage-2 ablation: stage-4 validation traces with and without the
// contrastive pretrain, truncated at a quarter of the stage-4 schedule.
std::vector<ContrastiveArm> run_contrastive_suite(const SuiteConfig& cfg);

// Writes rows + aggregates + gnuplot-ready column data under out_dir.
void write_suite_report(const eval::EvalReport& report, const SuiteConfig& cfg,
                        const std::string& suite_name);

}  // namespace trajkit::suite
