#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clinical.hpp"

namespace adasmtl::loss {

using Matrix = Eigen::MatrixXd;

struct LossConfig {
    double alpha = 0.5;
    /// Optional per-sub-score weights (13 entries, normalized to mean 1).
    /// Empty means the uniform 1/13 average.
    std::vector<double> subscore_weights;

    void validate() const;
};

nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);

/// Column 0 global, columns 1..13 Q1..Q13. Both n × 14.
struct PredictionBatch {
    const Matrix& predictions;
    const Matrix& targets;
};

double mse_global(const PredictionBatch& batch);
double mse_subscores(const PredictionBatch& batch, const std::vector<double>& weights = {});
double total_loss(const PredictionBatch& batch, const LossConfig& config = {});

/// d total_loss / d predictions, n × 14.
Matrix total_loss_gradient(const PredictionBatch& batch, const LossConfig& config = {});

}  // namespace adasmtl::loss
