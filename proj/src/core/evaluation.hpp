#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clinical.hpp"

namespace adasmtl::evaluation {

using Matrix = Eigen::MatrixXd;

double mae(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);
/// Sample Pearson correlation. Zero variance in either input throws an
/// ErrorKind::undefined error.
double pearson(std::span<const double> pred, std::span<const double> truth);

/// Name of output column j: "global", "Q1".."Q13".
std::string output_name(std::size_t j);

struct OutputMetrics {
    std::string name;
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> pearson_r;  // empty when undefined
    std::string pearson_error;
};

struct Contribution {
    std::optional<std::array<double, clinical::num_items>> percent;  // empty when degenerate
    bool degenerate = false;
};

/// Share of each clamped predicted sub-score in their sum, in percent.
Contribution subscore_contribution(std::span<const double> predicted_subscores);

struct SubjectRow {
    std::string subject_id;
    std::string diagnosis;
    clinical::TargetVector truth{};
    clinical::TargetVector predicted{};
    Contribution contribution;
};

struct DominanceEntry {
    std::size_t item = 0;  // 0-based sub-score index
    double mean_contribution = 0.0;
    double cumulative_share = 0.0;
};

struct EvaluationReport {
    std::vector<OutputMetrics> outputs;  // 14 entries
    std::vector<SubjectRow> subjects;
    std::vector<DominanceEntry> dominance;  // all 13 items, ranked
    nlohmann::json context = nlohmann::json::object();  // config, seeds, split
};

struct SubjectInfo {
    std::string subject_id;
    std::string diagnosis;
};

/// predictions and targets are n × 14 in subject order.
EvaluationReport evaluate(std::span<const SubjectInfo> subjects, const Matrix& predictions, const Matrix& targets);

/// Items ranked by mean contribution over non-degenerate subjects, each with
/// the cumulative share of the top entries; truncated to k.
std::vector<DominanceEntry> dominance_report(const EvaluationReport& report, std::size_t k);

nlohmann::json to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const nlohmann::json& j);

/// subject_id, 14 true columns, 14 predicted columns.
void write_predictions_csv(const std::filesystem::path& path, const EvaluationReport& report);

}  // namespace adasmtl::evaluation
