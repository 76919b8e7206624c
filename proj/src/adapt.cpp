#include "trajkit/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trajkit/error.hpp"
#include "trajkit/loss.hpp"
#include "trajkit/metrics.hpp"
#include "trajkit/optim.hpp"

namespace trajkit::adapt {

using ad::Mat;
using ad::Optimizer;
using ad::Tape;
using ad::Value;
using model::Group;

Forecaster finetune(const Forecaster& checkpoint,
                    const std::vector<data::InstanceWindow>& new_env_samples,
                    FinetuneStrategy strategy, int k_batches,
                    const train::TrainConfig& config) {
    if (k_batches < 1 || k_batches > 6) {
        throw ConfigError("finetune: k must be in [1, 6], got " + std::to_string(k_batches));
    }
    const int budget = k_batches * config.batch_size;
    if (static_cast<int>(new_env_samples.size()) < budget) {
        throw ConfigError("finetune: need " + std::to_string(budget) + " samples, have " +
                          std::to_string(new_env_samples.size()));
    }
    std::vector<data::InstanceWindow> samples(new_env_samples.begin(),
                                              new_env_samples.begin() + budget);
    const int holdout = std::max(1, budget / 4);
    const int train_n = budget - holdout;

    std::vector<data::InstanceWindow> fit(samples.begin(), samples.begin() + train_n);
    std::vector<data::InstanceWindow> held(samples.begin() + train_n, samples.end());

    Forecaster m = checkpoint;
    m.freeze(Group::Phi, true);
    m.freeze(Group::Psi, strategy == FinetuneStrategy::ModulatorOnly);
    m.freeze(Group::F, false);
    m.freeze(Group::G, strategy == FinetuneStrategy::ModulatorOnly);
    // a single new environment has no contrastive negatives, so the
    // adaptation objective is the task loss alone and h carries no gradient
    m.freeze(Group::H, true);

    std::vector<Optimizer> opts;
    opts.emplace_back(ad::OptimConfig{ad::Algo::Adam, config.lr_f_adapt},
                      m.net(Group::F).params());
    if (strategy == FinetuneStrategy::AllStyleParams) {
        opts.emplace_back(ad::OptimConfig{ad::Algo::Adam, config.lr_psi},
                          m.net(Group::Psi).params());
        opts.emplace_back(ad::OptimConfig{ad::Algo::Adam, config.lr_baseline},
                          m.net(Group::G).params());
    }

    const Mat x_fit = Forecaster::input_batch(fit);
    const Mat y_fit = Forecaster::future_batch(fit);
    const Mat x_held = Forecaster::input_batch(held);
    const Mat y_held = Forecaster::future_batch(held);
    const auto obs = train::sample_style_observations(
        fit, std::min<int>(config.style_obs_count, static_cast<int>(fit.size())), config.seed);

    auto held_ade = [&](const Forecaster& net) {
        const Eigen::VectorXd c = net.style_embedding(obs);
        const Mat z = net.net(Group::Phi).infer(x_held);
        Mat joint(z.rows(), z.cols() + c.size());
        joint << z, c.transpose().replicate(z.rows(), 1);
        const Mat pred = net.net(Group::G).infer(net.net(Group::F).infer(joint) + z);
        return eval::mean_ade(pred, y_held);
    };

    Mat s_obs(static_cast<Eigen::Index>(obs.size()), obs[0].size());
    for (std::size_t i = 0; i < obs.size(); ++i) s_obs.row(static_cast<Eigen::Index>(i)) = obs[i];

    constexpr int kEpochs = 50;
    constexpr int kPatience = 10;
    double best_metric = held_ade(m);
    Forecaster best = m;
    int since_best = 0;
    Rng rng(Rng::splitmix(config.seed ^ 0xada9f));
    std::vector<int> order(static_cast<std::size_t>(train_n));
    for (int i = 0; i < train_n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < kEpochs; ++epoch) {
        rng.shuffle(order);
        for (int at = 0; at < train_n; at += config.batch_size) {
            const int count = std::min(config.batch_size, train_n - at);
            if (count < 2) break;
            Mat xb(count, x_fit.cols());
            Mat yb(count, y_fit.cols());
            for (int i = 0; i < count; ++i) {
                xb.row(i) = x_fit.row(order[static_cast<std::size_t>(at + i)]);
                yb.row(i) = y_fit.row(order[static_cast<std::size_t>(at + i)]);
            }
            Tape tape;
            const auto b = m.bind(tape);
            Value z = m.encode_invariant(tape, b, tape.leaf(xb));
            Value c = m.encode_style(tape, b, tape.leaf(s_obs));
            Value pred = m.decode(tape, b, m.modulate(tape, b, z, c));
            Value l = loss::task_loss(tape, pred, tape.leaf(yb));
            tape.backward(l);
            m.accumulate_grads(tape, b);
            for (Optimizer& opt : opts) opt.step();
        }
        const double metric = held_ade(m);
        if (metric < best_metric) {
            best_metric = metric;
            best = m;
            since_best = 0;
        } else if (++since_best >= kPatience) {
            break;
        }
    }
    return best;
}

std::vector<Eigen::VectorXd> build_style_references(
    const Forecaster& m, const std::vector<data::InstanceWindow>& new_env_samples,
    int count, std::uint64_t seed) {
    if (count < 1) throw ConfigError("build_style_references: count must be >= 1");
    const auto obs = train::sample_style_observations(new_env_samples, count, seed);
    std::vector<Eigen::VectorXd> refs;
    refs.reserve(obs.size());
    for (const Eigen::VectorXd& o : obs) {
        const Eigen::VectorXd c = m.style_embedding({o});
        refs.push_back(m.project_embedding(c));
    }
    return refs;
}

Eigen::RowVectorXd pseudo_observation(const data::InstanceWindow& window,
                                      const Eigen::RowVectorXd& future_row) {
    const int steps = data::kWindowSteps;
    Eigen::RowVectorXd feat = Eigen::RowVectorXd::Zero(2 * steps * 2);
    for (int t = 0; t < data::kPastSteps; ++t) {
        feat(2 * t) = window.past(t, 0);
        feat(2 * t + 1) = window.past(t, 1);
    }
    for (int t = 0; t < data::kFutureSteps; ++t) {
        feat(2 * (data::kPastSteps + t)) = future_row(2 * t);
        feat(2 * (data::kPastSteps + t) + 1) = future_row(2 * t + 1);
    }
    // nearest neighbor's observed relative track, last offset held for the
    // unobserved future steps
    if (window.neighbor_mask.size() > 0 && window.neighbor_mask(0) > 0.0) {
        for (int t = 0; t < data::kPastSteps; ++t) {
            feat(2 * steps + 2 * t) = window.neighbor_past(t, 0);
            feat(2 * steps + 2 * t + 1) = window.neighbor_past(t, 1);
        }
        const double hold_x = window.neighbor_past(data::kPastSteps - 1, 0);
        const double hold_y = window.neighbor_past(data::kPastSteps - 1, 1);
        for (int t = data::kPastSteps; t < steps; ++t) {
            feat(2 * steps + 2 * t) = hold_x;
            feat(2 * steps + 2 * t + 1) = hold_y;
        }
    }
    return feat;
}

namespace {

// Builds the refinement objective 1 - mean_r cos(p_hat, ref_r) on a fresh
// tape; returns the objective node and the latent leaf.
struct RefinementGraph {
    Tape tape;
    Value latent;
    Value objective;
};

void build_refinement(RefinementGraph& g, const Forecaster& m,
                      const data::InstanceWindow& window, const Mat& latent_value,
                      const std::vector<Eigen::VectorXd>& refs) {
    g.latent = g.tape.leaf(latent_value);
    Value pred = m.net(Group::G).forward(g.tape, g.latent);

    Eigen::RowVectorXd skeleton = pseudo_observation(window, Eigen::RowVectorXd::Zero(24));
    // past + neighbor entries are constants; the future block comes from pred
    Mat past_part = skeleton.leftCols(2 * data::kPastSteps);
    Mat nbr_part = skeleton.rightCols(2 * data::kWindowSteps);
    Value feat = g.tape.concat_cols(
        g.tape.concat_cols(g.tape.leaf(past_part), pred), g.tape.leaf(nbr_part));

    Value c = m.net(Group::Psi).forward(g.tape, feat);
    Value p_hat = g.tape.row_normalize(m.net(Group::H).forward(g.tape, c));

    Value cos_sum;
    for (std::size_t r = 0; r < refs.size(); ++r) {
        Value ref = g.tape.leaf(refs[r].transpose());
        Value cs = g.tape.cosine(p_hat, ref);
        cos_sum = (r == 0) ? cs : g.tape.add(cos_sum, cs);
    }
    Value neg_mean = g.tape.scale(cos_sum, -1.0 / static_cast<double>(refs.size()));
    g.objective = g.tape.add(g.tape.scalar(1.0), neg_mean);
}

}  // namespace

RefineResult test_time_refine(const data::InstanceWindow& window, const Forecaster& m,
                              const Eigen::VectorXd& style_c,
                              const std::vector<Eigen::VectorXd>& references, int iters,
                              double step_size) {
    if (references.empty()) throw ConfigError("test_time_refine: no references");
    if (iters < 0) throw ConfigError("test_time_refine: negative iteration count");

    // modulated latent of the plain forward pass
    const Mat x = Forecaster::input_batch({window});
    const Mat z = m.net(Group::Phi).infer(x);
    Mat joint(1, z.cols() + style_c.size());
    joint << z, style_c.transpose();
    Mat latent = m.net(Group::F).infer(joint) + z;

    RefineResult out;
    out.yhat = m.net(Group::G).infer(latent).row(0);
    if (iters == 0) return out;

    double current;
    Mat grad;
    try {
        RefinementGraph g;
        build_refinement(g, m, window, latent, references);
        current = g.tape.scalar_value(g.objective);
        grad = g.tape.grad_wrt_activation(g.objective, g.latent);
    } catch (const NonFiniteError&) {
        out.warned = true;
        return out;
    } catch (const DegenerateError&) {
        out.warned = true;
        return out;
    }

    double step = step_size;
    while (out.accepted_steps < iters) {
        bool accepted = false;
        for (int halving = 0; halving <= 5; ++halving) {
            const Mat candidate = latent - step * grad;
            try {
                RefinementGraph g;
                build_refinement(g, m, window, candidate, references);
                const double value = g.tape.scalar_value(g.objective);
                if (value < current) {
                    latent = candidate;
                    current = value;
                    grad = g.tape.grad_wrt_activation(g.objective, g.latent);
                    accepted = true;
                    break;
                }
            } catch (const NonFiniteError&) {
                out.warned = true;
                return out;
            } catch (const DegenerateError&) {
                out.warned = true;
                return out;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // step shrank five times without progress
        ++out.accepted_steps;
        out.objective_trace.push_back(current);
        out.yhat = m.net(Group::G).infer(latent).row(0);
    }
    return out;
}

}  // namespace trajkit::adapt
