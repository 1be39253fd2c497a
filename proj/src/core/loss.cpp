#include "loss.hpp"

#include <cmath>

#include "error.hpp"

namespace adasmtl::loss {

namespace {

void check_batch(const PredictionBatch& b) {
    require(b.predictions.rows() >= 1, "loss requires a non-empty batch");
    require(b.predictions.rows() == b.targets.rows() && b.predictions.cols() == b.targets.cols(),
            "prediction and target shapes differ");
    require(b.predictions.cols() == static_cast<Eigen::Index>(clinical::num_targets),
            "loss expects 14 columns (global + 13 sub-scores)");
    require(b.predictions.allFinite() && b.targets.allFinite(), "loss inputs must be finite");
}

// Weights scaled so the weighted average reduces to the plain mean when uniform.
Eigen::RowVectorXd normalized_weights(const std::vector<double>& weights) {
    Eigen::RowVectorXd w = Eigen::RowVectorXd::Constant(clinical::num_items, 1.0 / clinical::num_items);
    if (weights.empty()) return w;
    double sum = 0.0;
    for (double v : weights) sum += v;
    for (std::size_t j = 0; j < clinical::num_items; ++j) w[static_cast<Eigen::Index>(j)] = weights[j] / sum;
    return w;
}

}  // namespace

void LossConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        fail(ErrorKind::config, "alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (!subscore_weights.empty()) {
        if (subscore_weights.size() != clinical::num_items) {
            fail(ErrorKind::config, "subscore_weights must have 13 entries");
        }
        double sum = 0.0;
        for (double v : subscore_weights) {
            if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::config, "subscore_weights must be finite and >= 0");
            sum += v;
        }
        if (!(sum > 0.0)) fail(ErrorKind::config, "subscore_weights must not all be zero");
    }
}

nlohmann::json to_json(const LossConfig& c) {
    nlohmann::json j{{"alpha", c.alpha}};
    j["subscore_weights"] = c.subscore_weights;
    return j;
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
    LossConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.subscore_weights = j.value("subscore_weights", c.subscore_weights);
    return c;
}

double mse_global(const PredictionBatch& b) {
    check_batch(b);
    return (b.predictions.col(0) - b.targets.col(0)).squaredNorm() / static_cast<double>(b.predictions.rows());
}

double mse_subscores(const PredictionBatch& b, const std::vector<double>& weights) {
    check_batch(b);
    const auto n = static_cast<double>(b.predictions.rows());
    const Eigen::RowVectorXd per_item =
        (b.predictions.rightCols(clinical::num_items) - b.targets.rightCols(clinical::num_items))
            .array()
            .square()
            .colwise()
            .sum() /
        n;
    return per_item.dot(normalized_weights(weights));
}

double total_loss(const PredictionBatch& b, const LossConfig& config) {
    config.validate();
    return config.alpha * mse_subscores(b, config.subscore_weights) + (1.0 - config.alpha) * mse_global(b);
}

Matrix total_loss_gradient(const PredictionBatch& b, const LossConfig& config) {
    config.validate();
    check_batch(b);
    const auto n = static_cast<double>(b.predictions.rows());
    Matrix g = 2.0 * (b.predictions - b.targets) / n;
    g.col(0) *= 1.0 - config.alpha;
    const Eigen::RowVectorXd w = normalized_weights(config.subscore_weights) * config.alpha;
    g.rightCols(clinical::num_items).array().rowwise() *= w.array();
    return g;
}

}  // namespace adasmtl::loss
