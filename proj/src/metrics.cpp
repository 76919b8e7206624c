#include "trajkit/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "trajkit/error.hpp"
#include "trajkit/window.hpp"

namespace trajkit::eval {

double ade(const Eigen::MatrixXd& yhat, const Eigen::MatrixXd& y) {
    if (yhat.rows() != y.rows() || yhat.cols() != 2 || y.cols() != 2) {
        throw ShapeError("ade: expected matching Tx2 trajectories");
    }
    double total = 0.0;
    for (Eigen::Index t = 0; t < yhat.rows(); ++t) {
        total += (yhat.row(t) - y.row(t)).norm();
    }
    return total / static_cast<double>(yhat.rows());
}

double fde(const Eigen::MatrixXd& yhat, const Eigen::MatrixXd& y) {
    if (yhat.rows() != y.rows() || yhat.cols() != 2 || y.cols() != 2 || yhat.rows() == 0) {
        throw ShapeError("fde: expected matching Tx2 trajectories");
    }
    return (yhat.row(yhat.rows() - 1) - y.row(y.rows() - 1)).norm();
}

namespace {

double row_ade(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    const int steps = static_cast<int>(a.size()) / 2;
    double total = 0.0;
    for (int t = 0; t < steps; ++t) {
        const double dx = a(2 * t) - b(2 * t);
        const double dy = a(2 * t + 1) - b(2 * t + 1);
        total += std::sqrt(dx * dx + dy * dy);
    }
    return total / steps;
}

double row_fde(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    const int last = static_cast<int>(a.size()) - 2;
    const double dx = a(last) - b(last);
    const double dy = a(last + 1) - b(last + 1);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

double mean_ade(const Eigen::MatrixXd& yhat_rows, const Eigen::MatrixXd& y_rows) {
    if (yhat_rows.rows() != y_rows.rows() || yhat_rows.cols() != y_rows.cols() ||
        yhat_rows.rows() == 0 || yhat_rows.cols() % 2 != 0) {
        throw ShapeError("mean_ade: shape mismatch");
    }
    double total = 0.0;
    for (Eigen::Index r = 0; r < yhat_rows.rows(); ++r) {
        total += row_ade(yhat_rows.row(r), y_rows.row(r));
    }
    return total / static_cast<double>(yhat_rows.rows());
}

double mean_fde(const Eigen::MatrixXd& yhat_rows, const Eigen::MatrixXd& y_rows) {
    if (yhat_rows.rows() != y_rows.rows() || yhat_rows.cols() != y_rows.cols() ||
        yhat_rows.rows() == 0 || yhat_rows.cols() % 2 != 0) {
        throw ShapeError("mean_fde: shape mismatch");
    }
    double total = 0.0;
    for (Eigen::Index r = 0; r < yhat_rows.rows(); ++r) {
        total += row_fde(yhat_rows.row(r), y_rows.row(r));
    }
    return total / static_cast<double>(yhat_rows.rows());
}

void EvalReport::extend(const EvalReport& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

std::string EvalReport::cell_key(const EvalRow& row) {
    std::ostringstream key;
    key << row.method << "|" << row.environment << "|k" << row.k_batches << "|r"
        << row.refine_iters;
    return key.str();
}

std::map<std::string, Aggregate> EvalReport::aggregate() const {
    std::map<std::string, std::vector<const EvalRow*>> cells;
    for (const EvalRow& row : rows) cells[cell_key(row)].push_back(&row);

    std::map<std::string, Aggregate> out;
    for (const auto& [key, members] : cells) {
        Aggregate agg;
        agg.count = static_cast<int>(members.size());
        for (const EvalRow* r : members) {
            agg.ade_mean += r->ade;
            agg.fde_mean += r->fde;
        }
        agg.ade_mean /= agg.count;
        agg.fde_mean /= agg.count;
        if (agg.count > 1) {
            double va = 0.0, vf = 0.0;
            for (const EvalRow* r : members) {
                va += (r->ade - agg.ade_mean) * (r->ade - agg.ade_mean);
                vf += (r->fde - agg.fde_mean) * (r->fde - agg.fde_mean);
            }
            agg.ade_std = std::sqrt(va / (agg.count - 1));
            agg.fde_std = std::sqrt(vf / (agg.count - 1));
        }
        out[key] = agg;
    }
    return out;
}

void EvalReport::write_csv(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << "method,environment,seed,ade,fde,k_batches,refine_iters\n";
    char buf[256];
    for (const EvalRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.9f,%.9f,%d,%d\n", r.method.c_str(),
                      r.environment.c_str(), static_cast<unsigned long long>(r.seed), r.ade,
                      r.fde, r.k_batches, r.refine_iters);
        out << buf;
    }
    if (!out) throw IoError("failed writing " + file.string());
}

EvalReport EvalReport::read_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw MissingArtifactError("cannot open " + file.string());
    EvalReport report;
    std::string line;
    if (!std::getline(in, line)) return report;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        EvalRow row;
        std::string field;
        try {
            std::getline(ss, row.method, ',');
            std::getline(ss, row.environment, ',');
            std::getline(ss, field, ',');
            row.seed = std::stoull(field);
            std::getline(ss, field, ',');
            row.ade = std::stod(field);
            std::getline(ss, field, ',');
            row.fde = std::stod(field);
            std::getline(ss, field, ',');
            row.k_batches = std::stoi(field);
            std::getline(ss, field, ',');
            row.refine_iters = std::stoi(field);
        } catch (const std::exception&) {
            throw ParseError(file.string() + ":" + std::to_string(line_no) +
                             ": malformed report row");
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

void EvalReport::write_json(const std::filesystem::path& file) const {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const EvalRow& r : rows) {
        j["rows"].push_back({{"method", r.method},
                             {"environment", r.environment},
                             {"seed", r.seed},
                             {"ade", r.ade},
                             {"fde", r.fde},
                             {"k_batches", r.k_batches},
                             {"refine_iters", r.refine_iters}});
    }
    nlohmann::json aggs = nlohmann::json::object();
    for (const auto& [key, agg] : aggregate()) {
        aggs[key] = {{"ade_mean", agg.ade_mean},
                     {"ade_std", agg.ade_std},
                     {"fde_mean", agg.fde_mean},
                     {"fde_std", agg.fde_std},
                     {"count", agg.count}};
    }
    j["aggregates"] = std::move(aggs);
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << j.dump(2) << "\n";
}

}  // namespace trajkit::eval
