#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace trajkit::eval {

// Average / final displacement error between a 12x2 prediction and ground
// truth, in meters.
double ade(const Eigen::MatrixXd& yhat, const Eigen::MatrixXd& y);
double fde(const Eigen::MatrixXd& yhat, const Eigen::MatrixXd& y);

// Batched variants over rows of interleaved (x, y) coordinates.
double mean_ade(const Eigen::MatrixXd& yhat_rows, const Eigen::MatrixXd& y_rows);
double mean_fde(const Eigen::MatrixXd& yhat_rows, const Eigen::MatrixXd& y_rows);

struct EvalRow {
    std::string method;
    std::string environment;
    std::uint64_t seed = 0;
    double ade = 0.0;
    double fde = 0.0;
    int k_batches = 0;
    int refine_iters = 0;
};

struct Aggregate {
    double ade_mean = 0.0;
    double ade_std = 0.0;
    double fde_mean = 0.0;
    double fde_std = 0.0;
    int count = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;

    void append(EvalRow row) { rows.push_back(std::move(row)); }
    void extend(const EvalReport& other);

    // Aggregates are recomputed from the rows, never cached. Keyed by
    // (method, environment, k_batches, refine_iters); std over seeds (n-1).
    std::map<std::string, Aggregate> aggregate() const;
    static std::string cell_key(const EvalRow& row);

    void write_csv(const std::filesystem::path& file) const;
    static EvalReport read_csv(const std::filesystem::path& file);
    void write_json(const std::filesystem::path& file) const;
};

}  // namespace trajkit::eval
