#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clinical.hpp"
#include "imaging.hpp"
#include "loss.hpp"
#include "model.hpp"

namespace adasmtl::training {

using Matrix = Eigen::MatrixXd;

struct TrainConfig {
    double alpha = 0.5;
    double learning_rate = 1e-3;
    std::size_t batch_size = 8;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 10;
    double split_ratio = 0.8;
    std::uint64_t seed = 0;
    model::ModalityConfig modality;
    /// Start each head's bias at the training-set mean of its target.
    bool init_head_bias = true;
    /// Compare reruns within 1e-7 instead of bitwise.
    bool nondeterministic_backend = false;
    std::vector<double> subscore_weights;

    void validate() const;
    loss::LossConfig loss() const { return {alpha, subscore_weights}; }
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Model-ready arrays for a list of subjects, in subject order.
struct Dataset {
    std::vector<std::string> ids;
    std::vector<clinical::Diagnosis> diagnoses;
    Matrix clinical;  // n × 26
    Matrix targets;   // n × 14
    std::vector<Eigen::MatrixXf> patches;  // per subject, token_count × patch_volume; empty without MRI

    std::size_t size() const noexcept { return ids.size(); }
    bool has_mri() const noexcept { return !patches.empty(); }
};

/// `volumes` is either empty or parallel to `subjects`.
Dataset make_dataset(std::span<const clinical::SubjectRecord> subjects, std::span<const imaging::Volume> volumes,
                     const model::BackboneConfig& backbone);
Dataset subset(const Dataset& data, std::span<const std::size_t> rows);
model::Batch make_batch(const Dataset& data, std::span<const std::size_t> rows);

struct Split {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    bool stratified = true;
    std::string hash() const;
};

/// Subject-level split stratified by diagnosis. Falls back to an
/// unstratified split with a warning when a group has fewer than 2 subjects.
Split split_subjects(std::span<const clinical::SubjectRecord> cohort, double split_ratio, std::uint64_t seed);
nlohmann::json to_json(const Split& split);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_total_loss = 0.0;
    double val_total_loss = 0.0;
    double val_mae_global = 0.0;
    std::optional<double> val_pearson_global;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
};

nlohmann::json to_json(const TrainHistory& h);

class Adam {
public:
    Adam(nn::ParameterStore& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step();
    std::size_t steps() const noexcept { return t_; }

private:
    nn::ParameterStore& params_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Matrix> m_, v_;
};

/// One forward/backward/update on a batch; returns the pre-update loss.
double train_step(model::MtlModel& model, Adam& optimizer, const model::Batch& batch, const Matrix& targets,
                  const loss::LossConfig& loss_config);

/// Batched inference over a dataset, n × 14.
Matrix predict(const model::MtlModel& model, const Dataset& data, std::size_t batch_size = 32);

/// Adam on total_loss with per-epoch validation, early stopping and
/// best-epoch restore. Throws a numeric error naming epoch, batch and head on
/// a non-finite loss.
TrainHistory train(model::MtlModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config);

}  // namespace adasmtl::training
