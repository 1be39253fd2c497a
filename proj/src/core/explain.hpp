#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "model.hpp"

namespace adasmtl::explain {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Maps input rows (samples × features) to one output per row.
using ValueModel = std::function<Eigen::VectorXd(const Matrix&)>;

struct FeatureGroup {
    std::string name;
    std::vector<std::size_t> columns;
};

enum class Mode { exact, sampled };

constexpr std::size_t max_exact_groups = 15;

struct AttributionConfig {
    std::size_t target_output = 0;
    std::vector<FeatureGroup> groups;
    Matrix background;  // reference rows, same width as the sample
    Mode mode = Mode::sampled;
    std::size_t num_permutations = 200;
    std::uint64_t seed = 0;

    /// Checks that groups partition `width` columns.
    void validate(std::size_t width) const;
};

struct Attribution {
    std::string sample_id;
    std::size_t target_output = 0;
    std::vector<std::string> group_names;
    std::vector<double> values;
    double base_value = 0.0;
    double output = 0.0;
    Mode mode = Mode::exact;
};

nlohmann::json to_json(const Attribution& a);

Attribution shapley_attribution(const ValueModel& f, const RowVector& sample, const AttributionConfig& config,
                                const std::string& sample_id = {});

struct Importance {
    std::string name;
    double mean_abs = 0.0;
};

/// Mean |value| per group, descending, ties broken by name.
std::vector<Importance> importance_summary(std::span<const Attribution> attributions);

// Model-facing helpers. Input rows are [26 clinical features | MRI embedding].

/// One group per clinical feature ("BL_Q1".."M06_Q13") plus one "MRI" group
/// holding every embedding column (empty when the model ignores MRI).
std::vector<FeatureGroup> default_groups(const model::MtlModel& model);
ValueModel model_value_function(const model::MtlModel& model, std::size_t target_output);
/// Concatenates clinical features and (when used) MRI embeddings row-wise.
Matrix model_inputs(const model::MtlModel& model, const Matrix& clinical, const Matrix& mri_embedding);

}  // namespace adasmtl::explain
