#include "trajkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "trajkit/error.hpp"
#include "trajkit/loss.hpp"
#include "trajkit/metrics.hpp"

namespace trajkit::train {

using model::Forecaster;
using model::Group;

int TrainConfig::scaled_epochs(int stage) const {
    const int raw = stage_epochs.at(static_cast<std::size_t>(stage));
    return std::max(1, static_cast<int>(std::lround(raw * epoch_scale)));
}

nlohmann::json TrainConfig::to_json() const {
    return {{"batch_size", batch_size},
            {"stage_epochs", stage_epochs},
            {"lr_baseline", lr_baseline},
            {"lr_psi", lr_psi},
            {"lr_h", lr_h},
            {"lr_f", lr_f},
            {"lr_f_adapt", lr_f_adapt},
            {"lambda", lambda},
            {"tau", tau},
            {"contrastive_coef", contrastive_coef},
            {"seed", seed},
            {"skip_contrastive_pretrain", skip_contrastive_pretrain},
            {"invariant_stage1", invariant_stage1},
            {"start_stage", start_stage},
            {"style_obs_count", style_obs_count},
            {"epoch_scale", epoch_scale}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("stage_epochs")) {
        const auto v = j.at("stage_epochs").get<std::vector<int>>();
        if (v.size() != 4) throw ConfigError("stage_epochs needs 4 entries");
        std::copy(v.begin(), v.end(), c.stage_epochs.begin());
    }
    c.lr_baseline = j.value("lr_baseline", c.lr_baseline);
    c.lr_psi = j.value("lr_psi", c.lr_psi);
    c.lr_h = j.value("lr_h", c.lr_h);
    c.lr_f = j.value("lr_f", c.lr_f);
    c.lr_f_adapt = j.value("lr_f_adapt", c.lr_f_adapt);
    c.lambda = j.value("lambda", c.lambda);
    c.tau = j.value("tau", c.tau);
    c.contrastive_coef = j.value("contrastive_coef", c.contrastive_coef);
    c.seed = j.value("seed", c.seed);
    c.skip_contrastive_pretrain =
        j.value("skip_contrastive_pretrain", c.skip_contrastive_pretrain);
    c.invariant_stage1 = j.value("invariant_stage1", c.invariant_stage1);
    c.start_stage = j.value("start_stage", c.start_stage);
    c.style_obs_count = j.value("style_obs_count", c.style_obs_count);
    c.epoch_scale = j.value("epoch_scale", c.epoch_scale);
    if (c.batch_size <= 0 || c.lambda < 0.0 || c.tau <= 0.0 || c.epoch_scale <= 0.0) {
        throw ConfigError("invalid training configuration");
    }
    return c;
}

void write_curve_csv(const std::filesystem::path& file, const std::vector<EpochLog>& curve) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << "stage,epoch,train_loss,val_metric\n";
    for (const EpochLog& e : curve) {
        out << e.stage << "," << e.epoch << "," << e.train_loss << "," << e.val_metric << "\n";
    }
}

namespace {

using ad::Mat;
using ad::Optimizer;
using ad::Tape;
using ad::Value;

// Feature matrices assembled once so batching is row gathering.
struct PreparedEnv {
    std::string env;
    Mat x_train, y_train, s_train;
    Mat x_val, y_val;
    std::vector<int> scene_of_train;          // train row -> scene index
    std::vector<std::vector<int>> scene_rows; // scene index -> train rows
};

Mat gather_rows(const Mat& m, const std::vector<int>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    }
    return out;
}

PreparedEnv prepare_env(const EnvDataset& env) {
    if (env.train.empty()) throw ConfigError("environment '" + env.env + "' has no training data");
    PreparedEnv p;
    p.env = env.env;
    p.x_train = Forecaster::input_batch(env.train);
    p.y_train = Forecaster::future_batch(env.train);
    p.s_train = Forecaster::style_batch(env.train);
    if (!env.val.empty()) {
        p.x_val = Forecaster::input_batch(env.val);
        p.y_val = Forecaster::future_batch(env.val);
    }
    std::map<std::string, int> scene_index;
    for (const auto& w : env.train) {
        auto [it, inserted] = scene_index.try_emplace(w.scene_id,
                                                      static_cast<int>(scene_index.size()));
        p.scene_of_train.push_back(it->second);
    }
    p.scene_rows.resize(scene_index.size());
    for (int row = 0; row < static_cast<int>(p.scene_of_train.size()); ++row) {
        p.scene_rows[static_cast<std::size_t>(p.scene_of_train[static_cast<std::size_t>(row)])].push_back(row);
    }
    return p;
}

// Cyclic shuffled index stream; an exhausted environment reshuffles and keeps
// serving batches.
class BatchStream {
public:
    BatchStream(int n, Rng rng) : rng_(rng), order_(static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
        rng_.shuffle(order_);
    }

    std::vector<int> next(int count) {
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(count));
        while (static_cast<int>(out.size()) < count) {
            if (cursor_ == order_.size()) {
                rng_.shuffle(order_);
                cursor_ = 0;
            }
            out.push_back(order_[cursor_++]);
        }
        return out;
    }

private:
    Rng rng_;
    std::vector<int> order_;
    std::size_t cursor_ = 0;
};

double validation_ade_invariant(const Forecaster& m, const std::vector<PreparedEnv>& envs) {
    double total = 0.0;
    int used = 0;
    for (const PreparedEnv& env : envs) {
        if (env.x_val.rows() == 0) continue;
        const Mat z = m.net(Group::Phi).infer(env.x_val);
        const Mat pred = m.net(Group::G).infer(z);
        total += eval::mean_ade(pred, env.y_val);
        ++used;
    }
    if (used == 0) throw ConfigError("no validation data");
    return total / used;
}

Eigen::VectorXd env_style_vector(const Forecaster& m, const PreparedEnv& env,
                                 const std::vector<int>& rows) {
    const Mat obs = gather_rows(env.s_train, rows);
    return m.net(Group::Psi).infer(obs).colwise().mean();
}

std::vector<int> sample_scene_rows(const PreparedEnv& env, int count, Rng& rng) {
    // one window per sampled scene, scenes cycled without replacement
    std::vector<int> scenes(env.scene_rows.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) scenes[i] = static_cast<int>(i);
    rng.shuffle(scenes);
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(count));
    std::size_t cursor = 0;
    while (static_cast<int>(rows.size()) < count) {
        if (cursor == scenes.size()) {
            rng.shuffle(scenes);
            cursor = 0;
        }
        const auto& members = env.scene_rows[static_cast<std::size_t>(scenes[cursor++])];
        rows.push_back(members[rng.next() % members.size()]);
    }
    return rows;
}

double validation_ade_modular(const Forecaster& m, const std::vector<PreparedEnv>& envs,
                              int style_obs_count, std::uint64_t seed) {
    double total = 0.0;
    int used = 0;
    for (std::size_t e = 0; e < envs.size(); ++e) {
        const PreparedEnv& env = envs[e];
        if (env.x_val.rows() == 0) continue;
        Rng rng(Rng::splitmix(seed + 31 * e));
        const auto rows = sample_scene_rows(env, style_obs_count, rng);
        const Eigen::VectorXd c = env_style_vector(m, env, rows);
        const Mat z = m.net(Group::Phi).infer(env.x_val);
        Mat joint(z.rows(), z.cols() + c.size());
        joint << z, c.transpose().replicate(z.rows(), 1);
        const Mat zt = m.net(Group::F).infer(joint) + z;
        const Mat pred = m.net(Group::G).infer(zt);
        total += eval::mean_ade(pred, env.y_val);
        ++used;
    }
    if (used == 0) throw ConfigError("no validation data");
    return total / used;
}

// Balanced contrastive batch: batch_size rows split across environments,
// drawn scene-level. Environment label = index into `envs`.
struct ContrastiveBatch {
    Mat obs;
    std::vector<int> labels;
};

ContrastiveBatch contrastive_batch(const std::vector<PreparedEnv>& envs, int batch_size,
                                   Rng& rng) {
    const int n_envs = static_cast<int>(envs.size());
    const int base = batch_size / n_envs;
    ContrastiveBatch out;
    std::vector<Mat> blocks;
    for (int e = 0; e < n_envs; ++e) {
        int quota = base + (e < batch_size % n_envs ? 1 : 0);
        quota = std::max(quota, 2);  // every anchor needs a positive
        const auto rows = sample_scene_rows(envs[static_cast<std::size_t>(e)], quota, rng);
        blocks.push_back(gather_rows(envs[static_cast<std::size_t>(e)].s_train, rows));
        for (int i = 0; i < quota; ++i) out.labels.push_back(e);
    }
    Eigen::Index total = 0;
    for (const Mat& b : blocks) total += b.rows();
    out.obs.resize(total, blocks[0].cols());
    Eigen::Index at = 0;
    for (const Mat& b : blocks) {
        out.obs.middleRows(at, b.rows()) = b;
        at += b.rows();
    }
    return out;
}

struct BestSnapshot {
    double metric = std::numeric_limits<double>::infinity();
    Forecaster model;

    void offer(double value, const Forecaster& m) {
        if (value < metric) {
            metric = value;
            model = m;
        }
    }
};

[[noreturn]] void divergence(int stage, int epoch, const char* what) {
    throw DivergenceError("training diverged (stage " + std::to_string(stage) + ", epoch " +
                          std::to_string(epoch) + "): " + what);
}

nlohmann::json base_manifest(const std::vector<EnvDataset>& envs, const TrainConfig& config,
                             const char* mode) {
    nlohmann::json env_list = nlohmann::json::array();
    for (const EnvDataset& e : envs) {
        env_list.push_back({{"id", e.env},
                            {"train_windows", e.train.size()},
                            {"val_windows", e.val.size()}});
    }
    return {{"mode", mode},
            {"config", config.to_json()},
            {"environments", std::move(env_list)},
            {"dataset_hash", dataset_hash(envs)}};
}

// Shared driver for the pooled-risk and invariant objectives; `pooled` merges
// all environments into one stream, otherwise each step draws one batch per
// environment and applies the penalty.
TrainResult train_backbone(const std::vector<EnvDataset>& env_data,
                           const model::ArchConfig& arch, const TrainConfig& config,
                           std::optional<Forecaster> init, bool pooled, double lambda,
                           int epochs, int stage_tag) {
    if (!pooled && env_data.size() < 2) {
        throw ConfigError("invariant training needs at least 2 environments");
    }
    std::vector<PreparedEnv> envs;
    envs.reserve(env_data.size());
    for (const EnvDataset& e : env_data) envs.push_back(prepare_env(e));

    Rng rng(config.seed);
    Forecaster m = init ? std::move(*init) : Forecaster::init(arch, rng);

    std::vector<BatchStream> streams;
    int max_rows = 0;
    if (pooled) {
        // merged stream over (env, row) pairs realized as one big matrix
        Eigen::Index total = 0;
        for (const PreparedEnv& e : envs) total += e.x_train.rows();
        Mat x(total, envs[0].x_train.cols());
        Mat y(total, envs[0].y_train.cols());
        Eigen::Index at = 0;
        for (const PreparedEnv& e : envs) {
            x.middleRows(at, e.x_train.rows()) = e.x_train;
            y.middleRows(at, e.y_train.rows()) = e.y_train;
            at += e.x_train.rows();
        }
        PreparedEnv merged;
        merged.env = "pooled";
        merged.x_train = std::move(x);
        merged.y_train = std::move(y);
        envs.insert(envs.begin(), std::move(merged));  // keep originals for validation
        streams.emplace_back(static_cast<int>(envs[0].x_train.rows()), rng.fork(1));
        max_rows = static_cast<int>(envs[0].x_train.rows());
    } else {
        for (std::size_t e = 0; e < envs.size(); ++e) {
            streams.emplace_back(static_cast<int>(envs[e].x_train.rows()), rng.fork(1 + e));
            max_rows = std::max(max_rows, static_cast<int>(envs[e].x_train.rows()));
        }
    }
    const int steps_per_epoch = std::max(1, (max_rows + config.batch_size - 1) / config.batch_size);

    Optimizer opt({ad::Algo::Adam, config.lr_baseline},
                  [&] {
                      auto params = m.net(Group::Phi).params();
                      const auto g = m.net(Group::G).params();
                      params.insert(params.end(), g.begin(), g.end());
                      return params;
                  }());

    TrainResult result;
    BestSnapshot best;
    const std::vector<PreparedEnv> val_view(envs.begin() + (pooled ? 1 : 0), envs.end());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            Tape tape;
            const auto phi_b = m.net(Group::Phi).bind(tape);
            const auto g_b = m.net(Group::G).bind(tape);
            Value objective;
            try {
                if (pooled) {
                    const auto rows = streams[0].next(config.batch_size);
                    Value x = tape.leaf(gather_rows(envs[0].x_train, rows));
                    Value y = tape.leaf(gather_rows(envs[0].y_train, rows));
                    Value pred = m.net(Group::G).apply(tape, g_b,
                                                       m.net(Group::Phi).apply(tape, phi_b, x));
                    objective = loss::task_loss(tape, pred, y);
                } else {
                    std::vector<loss::EnvPrediction> preds;
                    for (std::size_t e = 0; e < envs.size(); ++e) {
                        const auto rows = streams[e].next(config.batch_size);
                        Value x = tape.leaf(gather_rows(envs[e].x_train, rows));
                        Value y = tape.leaf(gather_rows(envs[e].y_train, rows));
                        Value pred = m.net(Group::G).apply(
                            tape, g_b, m.net(Group::Phi).apply(tape, phi_b, x));
                        preds.push_back({pred, y});
                    }
                    objective = loss::combined_invariant_objective(tape, preds, lambda);
                }
                tape.backward(objective);
            } catch (const NonFiniteError& e) {
                divergence(stage_tag, epoch, e.what());
            }
            m.net(Group::Phi).accumulate_grads(tape, phi_b);
            m.net(Group::G).accumulate_grads(tape, g_b);
            opt.step();
            epoch_loss += tape.scalar_value(objective);
        }
        epoch_loss /= steps_per_epoch;
        if (!std::isfinite(epoch_loss)) divergence(stage_tag, epoch, "loss is not finite");
        const double val = validation_ade_invariant(m, val_view);
        result.curve.push_back({stage_tag, epoch, epoch_loss, val});
        best.offer(val, m);
    }
    result.model = std::move(best.model);
    return result;
}

}  // namespace

std::vector<Eigen::VectorXd> sample_style_observations(
    const std::vector<data::InstanceWindow>& windows, int count, std::uint64_t seed) {
    if (count < 1) throw ConfigError("style observation count must be >= 1");
    if (windows.empty()) throw ConfigError("no windows to sample style observations from");
    EnvDataset tmp;
    tmp.env = windows[0].environment;
    tmp.train = windows;
    const PreparedEnv prepared = prepare_env(tmp);
    Rng rng(Rng::splitmix(seed ^ 0xabcdef));
    const auto rows = sample_scene_rows(prepared, count, rng);
    std::vector<Eigen::VectorXd> out;
    out.reserve(rows.size());
    for (int r : rows) out.push_back(prepared.s_train.row(r));
    return out;
}

std::uint64_t dataset_hash(const std::vector<EnvDataset>& envs) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix_bytes = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const EnvDataset& env : envs) {
        mix_bytes(env.env.data(), env.env.size());
        for (const auto& w : env.train) {
            mix_bytes(w.past.data(), sizeof(double) * static_cast<std::size_t>(w.past.size()));
            mix_bytes(w.future.data(), sizeof(double) * static_cast<std::size_t>(w.future.size()));
        }
    }
    return h;
}

TrainResult train_erm(const std::vector<EnvDataset>& envs, const model::ArchConfig& arch,
                      const TrainConfig& config, std::optional<Forecaster> init) {
    TrainResult r = train_backbone(envs, arch, config, std::move(init), /*pooled=*/true,
                                   0.0, config.scaled_epochs(0), 1);
    r.manifest = base_manifest(envs, config, "erm");
    return r;
}

TrainResult train_invariant(const std::vector<EnvDataset>& envs, const model::ArchConfig& arch,
                            const TrainConfig& config, std::optional<Forecaster> init) {
    TrainResult r = train_backbone(envs, arch, config, std::move(init), /*pooled=*/false,
                                   config.lambda, config.scaled_epochs(0), 1);
    r.manifest = base_manifest(envs, config, "invariant");
    return r;
}

std::map<double, TrainResult> lambda_grid_train(const std::vector<EnvDataset>& envs,
                                                const model::ArchConfig& arch,
                                                const TrainConfig& config,
                                                const std::vector<double>& lambda_grid) {
    std::map<double, TrainResult> out;
    for (double lambda : lambda_grid) {
        TrainConfig c = config;
        c.lambda = lambda;
        out.emplace(lambda, train_invariant(envs, arch, c));
    }
    return out;
}

TrainResult train_modular_staged(const std::vector<EnvDataset>& env_data,
                                 const model::ArchConfig& arch, const TrainConfig& config,
                                 std::optional<Forecaster> stage1) {
    if (config.start_stage < 1 || config.start_stage > 4) {
        throw ConfigError("start_stage must be in [1, 4]");
    }
    if (config.start_stage > 1 && !stage1) {
        throw MissingArtifactError("starting at stage " + std::to_string(config.start_stage) +
                                   " requires a stage-1 checkpoint");
    }

    TrainResult result;
    Forecaster m;
    if (config.start_stage == 1) {
        TrainResult r1 = config.invariant_stage1
                             ? train_invariant(env_data, arch, config, std::move(stage1))
                             : train_erm(env_data, arch, config, std::move(stage1));
        m = std::move(r1.model);
        result.curve = std::move(r1.curve);
    } else {
        m = std::move(*stage1);
    }

    std::vector<PreparedEnv> envs;
    envs.reserve(env_data.size());
    for (const EnvDataset& e : env_data) envs.push_back(prepare_env(e));
    Rng rng(Rng::splitmix(config.seed ^ 0x51a9e));

    // ---- stage 2: style encoder + projection head on the contrastive task
    if (config.start_stage <= 2 && !config.skip_contrastive_pretrain) {
        const int epochs = config.scaled_epochs(1);
        const int steps = std::max(1, static_cast<int>(envs[0].x_train.rows()) / config.batch_size);
        Optimizer opt_psi({ad::Algo::Adam, config.lr_psi}, m.net(Group::Psi).params());
        Optimizer opt_h({ad::Algo::Adam, config.lr_h}, m.net(Group::H).params());
        Rng batch_rng = rng.fork(2);
        BestSnapshot best;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            double epoch_loss = 0.0;
            for (int step = 0; step < steps; ++step) {
                const ContrastiveBatch batch =
                    contrastive_batch(envs, config.batch_size, batch_rng);
                Tape tape;
                const auto psi_b = m.net(Group::Psi).bind(tape);
                const auto h_b = m.net(Group::H).bind(tape);
                try {
                    Value c = m.net(Group::Psi).apply(tape, psi_b, tape.leaf(batch.obs));
                    Value p = tape.row_normalize(m.net(Group::H).apply(tape, h_b, c));
                    Value l = loss::style_contrastive(tape, p, batch.labels, config.tau);
                    tape.backward(l);
                    epoch_loss += tape.scalar_value(l);
                } catch (const NonFiniteError& e) {
                    divergence(2, epoch, e.what());
                }
                m.net(Group::Psi).accumulate_grads(tape, psi_b);
                m.net(Group::H).accumulate_grads(tape, h_b);
                opt_psi.step();
                opt_h.step();
            }
            epoch_loss /= steps;
            // fixed seeded validation batch, contrastive loss as the metric
            Rng val_rng(Rng::splitmix(config.seed ^ 0x7eef));
            const ContrastiveBatch vb = contrastive_batch(envs, config.batch_size, val_rng);
            Tape vt;
            Value vc = m.net(Group::Psi).forward(vt, vt.leaf(vb.obs));
            Value vp = vt.row_normalize(m.net(Group::H).forward(vt, vc));
            const double val = vt.scalar_value(loss::style_contrastive(vt, vp, vb.labels,
                                                                       config.tau));
            result.curve.push_back({2, epoch, epoch_loss, val});
            best.offer(val, m);
        }
        m = std::move(best.model);
    }

    // ---- stage 3: modulator alone on the task loss
    if (config.start_stage <= 3) {
        const int epochs = config.scaled_epochs(2);
        int max_rows = 0;
        for (const PreparedEnv& e : envs) max_rows = std::max(max_rows, static_cast<int>(e.x_train.rows()));
        const int steps = std::max(1, max_rows / config.batch_size);
        m.freeze(Group::Phi);
        m.freeze(Group::Psi);
        m.freeze(Group::G);
        m.freeze(Group::H);
        Optimizer opt_f({ad::Algo::Adam, config.lr_f}, m.net(Group::F).params());
        std::vector<BatchStream> streams;
        for (std::size_t e = 0; e < envs.size(); ++e) {
            streams.emplace_back(static_cast<int>(envs[e].x_train.rows()), rng.fork(30 + e));
        }
        Rng obs_rng = rng.fork(3);
        BestSnapshot best;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            double epoch_loss = 0.0;
            for (int step = 0; step < steps; ++step) {
                Tape tape;
                const auto b = m.bind(tape);
                Value total;
                try {
                    for (std::size_t e = 0; e < envs.size(); ++e) {
                        const auto rows = streams[e].next(config.batch_size);
                        const auto obs_rows =
                            sample_scene_rows(envs[e], config.style_obs_count, obs_rng);
                        Value x = tape.leaf(gather_rows(envs[e].x_train, rows));
                        Value y = tape.leaf(gather_rows(envs[e].y_train, rows));
                        Value obs = tape.leaf(gather_rows(envs[e].s_train, obs_rows));
                        Value z = m.encode_invariant(tape, b, x);
                        Value c = m.encode_style(tape, b, obs);
                        Value pred = m.decode(tape, b, m.modulate(tape, b, z, c));
                        Value l = loss::task_loss(tape, pred, y);
                        total = (e == 0) ? l : tape.add(total, l);
                    }
                    total = tape.scale(total, 1.0 / static_cast<double>(envs.size()));
                    tape.backward(total);
                    epoch_loss += tape.scalar_value(total);
                } catch (const NonFiniteError& e) {
                    divergence(3, epoch, e.what());
                }
                m.accumulate_grads(tape, b);
                opt_f.step();
            }
            epoch_loss /= steps;
            const double val =
                validation_ade_modular(m, envs, config.style_obs_count, config.seed);
            result.curve.push_back({3, epoch, epoch_loss, val});
            best.offer(val, m);
        }
        m = std::move(best.model);
        m.freeze(Group::Phi);  // snapshots copy values, not flags
    }

    // ---- stage 4: psi, f, g, h jointly on task + contrastive, phi frozen
    if (config.start_stage <= 4) {
        const int epochs = config.scaled_epochs(3);
        int max_rows = 0;
        for (const PreparedEnv& e : envs) max_rows = std::max(max_rows, static_cast<int>(e.x_train.rows()));
        const int steps = std::max(1, max_rows / config.batch_size);
        m.freeze(Group::Phi, true);
        m.freeze(Group::Psi, false);
        m.freeze(Group::F, false);
        m.freeze(Group::G, false);
        m.freeze(Group::H, false);
        Optimizer opt_psi({ad::Algo::Adam, config.lr_psi}, m.net(Group::Psi).params());
        Optimizer opt_f({ad::Algo::Adam, config.lr_f}, m.net(Group::F).params());
        Optimizer opt_g({ad::Algo::Adam, config.lr_baseline}, m.net(Group::G).params());
        Optimizer opt_h({ad::Algo::Adam, config.lr_h}, m.net(Group::H).params());
        std::vector<BatchStream> streams;
        for (std::size_t e = 0; e < envs.size(); ++e) {
            streams.emplace_back(static_cast<int>(envs[e].x_train.rows()), rng.fork(40 + e));
        }
        Rng obs_rng = rng.fork(4);
        Rng con_rng = rng.fork(5);
        BestSnapshot best;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            double epoch_loss = 0.0;
            for (int step = 0; step < steps; ++step) {
                Tape tape;
                const auto b = m.bind(tape);
                Value total;
                try {
                    for (std::size_t e = 0; e < envs.size(); ++e) {
                        const auto rows = streams[e].next(config.batch_size);
                        const auto obs_rows =
                            sample_scene_rows(envs[e], config.style_obs_count, obs_rng);
                        Value x = tape.leaf(gather_rows(envs[e].x_train, rows));
                        Value y = tape.leaf(gather_rows(envs[e].y_train, rows));
                        Value obs = tape.leaf(gather_rows(envs[e].s_train, obs_rows));
                        Value z = m.encode_invariant(tape, b, x);
                        Value c = m.encode_style(tape, b, obs);
                        Value pred = m.decode(tape, b, m.modulate(tape, b, z, c));
                        Value l = loss::task_loss(tape, pred, y);
                        total = (e == 0) ? l : tape.add(total, l);
                    }
                    total = tape.scale(total, 1.0 / static_cast<double>(envs.size()));
                    const ContrastiveBatch batch =
                        contrastive_batch(envs, config.batch_size, con_rng);
                    Value c = m.net(Group::Psi).apply(tape, b.psi, tape.leaf(batch.obs));
                    Value p = m.project(tape, b, c);
                    Value style = loss::style_contrastive(tape, p, batch.labels, config.tau);
                    total = tape.add(total, tape.scale(style, config.contrastive_coef));
                    tape.backward(total);
                    epoch_loss += tape.scalar_value(total);
                } catch (const NonFiniteError& e) {
                    divergence(4, epoch, e.what());
                }
                m.accumulate_grads(tape, b);
                opt_psi.step();
                opt_f.step();
                opt_g.step();
                opt_h.step();
            }
            epoch_loss /= steps;
            const double val =
                validation_ade_modular(m, envs, config.style_obs_count, config.seed);
            result.curve.push_back({4, epoch, epoch_loss, val});
            best.offer(val, m);
        }
        m = std::move(best.model);
    }

    result.model = std::move(m);
    result.manifest = base_manifest(env_data, config, "modular");
    return result;
}

}  // namespace trajkit::train
