#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "error.hpp"
#include "evaluation.hpp"
#include "hash.hpp"
#include "synth.hpp"

namespace adasmtl::training {

void TrainConfig::validate() const {
    loss().validate();
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        fail(ErrorKind::config, "learning_rate must be finite and >= 0");
    }
    if (batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) fail(ErrorKind::config, "split_ratio must lie in (0, 1)");
    modality.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"alpha", c.alpha},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"early_stop_patience", c.early_stop_patience},
            {"split_ratio", c.split_ratio},
            {"seed", c.seed},
            {"modality", model::to_json(c.modality)},
            {"init_head_bias", c.init_head_bias},
            {"nondeterministic_backend", c.nondeterministic_backend},
            {"subscore_weights", c.subscore_weights}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.seed = j.value("seed", c.seed);
    if (j.contains("modality")) c.modality = model::modality_config_from_json(j.at("modality"));
    c.init_head_bias = j.value("init_head_bias", c.init_head_bias);
    c.nondeterministic_backend = j.value("nondeterministic_backend", c.nondeterministic_backend);
    c.subscore_weights = j.value("subscore_weights", c.subscore_weights);
    return c;
}

// ---------------------------------------------------------------------------

Dataset make_dataset(std::span<const clinical::SubjectRecord> subjects, std::span<const imaging::Volume> volumes,
                     const model::BackboneConfig& backbone) {
    require(volumes.empty() || volumes.size() == subjects.size(), "volumes must be empty or one per subject");
    Dataset d;
    const auto n = static_cast<Eigen::Index>(subjects.size());
    d.clinical.resize(n, clinical::num_features);
    d.targets.resize(n, clinical::num_targets);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = subjects[static_cast<std::size_t>(i)];
        d.ids.push_back(s.subject_id);
        d.diagnoses.push_back(s.diagnosis);
        const auto f = clinical::build_feature_vector(s);
        const auto t = clinical::build_target_vector(s);
        for (std::size_t j = 0; j < f.size(); ++j) d.clinical(i, static_cast<Eigen::Index>(j)) = f[j];
        for (std::size_t j = 0; j < t.size(); ++j) d.targets(i, static_cast<Eigen::Index>(j)) = t[j];
    }
    for (const auto& v : volumes) d.patches.push_back(model::patchify(v, backbone).cast<float>());
    return d;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
    Dataset d;
    d.clinical.resize(static_cast<Eigen::Index>(rows.size()), clinical::num_features);
    d.targets.resize(static_cast<Eigen::Index>(rows.size()), clinical::num_targets);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t r = rows[k];
        require(r < data.size(), "subset row out of range");
        d.ids.push_back(data.ids[r]);
        d.diagnoses.push_back(data.diagnoses[r]);
        d.clinical.row(static_cast<Eigen::Index>(k)) = data.clinical.row(static_cast<Eigen::Index>(r));
        d.targets.row(static_cast<Eigen::Index>(k)) = data.targets.row(static_cast<Eigen::Index>(r));
        if (data.has_mri()) d.patches.push_back(data.patches[r]);
    }
    return d;
}

model::Batch make_batch(const Dataset& data, std::span<const std::size_t> rows) {
    model::Batch b;
    b.size = rows.size();
    b.clinical.resize(static_cast<Eigen::Index>(rows.size()), clinical::num_features);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        b.clinical.row(static_cast<Eigen::Index>(k)) = data.clinical.row(static_cast<Eigen::Index>(rows[k]));
    }
    if (data.has_mri()) {
        const auto t = data.patches.front().rows();
        b.patches.resize(t * static_cast<Eigen::Index>(rows.size()), data.patches.front().cols());
        for (std::size_t k = 0; k < rows.size(); ++k) {
            b.patches.middleRows(static_cast<Eigen::Index>(k) * t, t) = data.patches[rows[k]].cast<double>();
        }
    }
    return b;
}

// ---------------------------------------------------------------------------

std::string Split::hash() const {
    auto train = train_ids, val = val_ids;
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    Fnv1a h;
    for (const auto& id : train) h.update(id + ",");
    h.update("|");
    for (const auto& id : val) h.update(id + ",");
    return h.hex();
}

nlohmann::json to_json(const Split& split) {
    return {{"train_ids", split.train_ids},
            {"val_ids", split.val_ids},
            {"stratified", split.stratified},
            {"split_hash", split.hash()}};
}

Split split_subjects(std::span<const clinical::SubjectRecord> cohort, double split_ratio, std::uint64_t seed) {
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) fail(ErrorKind::config, "split_ratio must lie in (0, 1)");
    std::map<clinical::Diagnosis, std::vector<std::string>> groups;
    for (const auto& s : cohort) groups[s.diagnosis].push_back(s.subject_id);
    for (auto& [dx, ids] : groups) std::sort(ids.begin(), ids.end());

    Split split;
    for (const auto& [dx, ids] : groups) {
        if (ids.size() < 2) {
            spdlog::warn("diagnosis group {} has {} subject(s); falling back to an unstratified split",
                         clinical::to_string(dx), ids.size());
            split.stratified = false;
        }
    }
    if (!split.stratified) {
        std::vector<std::string> all;
        for (const auto& [dx, ids] : groups) all.insert(all.end(), ids.begin(), ids.end());
        std::sort(all.begin(), all.end());
        groups.clear();
        groups[clinical::Diagnosis::NC] = std::move(all);
    }

    const double val_fraction = 1.0 - split_ratio;
    std::size_t n = 0;
    for (const auto& [dx, ids] : groups) n += ids.size();
    auto total_val = static_cast<std::size_t>(std::lround(static_cast<double>(n) * val_fraction));
    if (n >= 2) total_val = std::clamp<std::size_t>(total_val, 1, n - 1);

    // Largest-remainder apportionment keeps each group within one subject of
    // its exact quota while hitting the overall validation count.
    struct Quota {
        clinical::Diagnosis dx;
        std::size_t base;
        double remainder;
    };
    std::vector<Quota> quotas;
    std::size_t assigned = 0;
    for (const auto& [dx, ids] : groups) {
        const double exact = static_cast<double>(ids.size()) * val_fraction;
        const auto base = std::min(ids.size(), static_cast<std::size_t>(std::floor(exact)));
        quotas.push_back({dx, base, exact - static_cast<double>(base)});
        assigned += base;
    }
    std::vector<std::size_t> order(quotas.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
    for (std::size_t k = 0; assigned < total_val && k < order.size(); ++k) {
        auto& q = quotas[order[k]];
        if (q.base < groups[q.dx].size()) {
            ++q.base;
            ++assigned;
        }
    }

    std::mt19937_64 rng(seed);
    for (const auto& q : quotas) {
        auto ids = groups[q.dx];
        std::shuffle(ids.begin(), ids.end(), rng);
        split.val_ids.insert(split.val_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(q.base));
        split.train_ids.insert(split.train_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(q.base), ids.end());
    }
    return split;
}

nlohmann::json to_json(const TrainHistory& h) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : h.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_total_loss", e.train_total_loss},
                          {"val_total_loss", e.val_total_loss},
                          {"val_mae_global", e.val_mae_global},
                          {"val_pearson_global",
                           e.val_pearson_global ? nlohmann::json(*e.val_pearson_global) : nlohmann::json()}});
    }
    return {{"epochs", std::move(epochs)}, {"best_epoch", h.best_epoch}, {"stopped_early", h.stopped_early}};
}

// ---------------------------------------------------------------------------

Adam::Adam(nn::ParameterStore& params, double learning_rate, double beta1, double beta2, double eps)
    : params_(params), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_.push_back(Matrix::Zero(params_[i].value.rows(), params_[i].value.cols()));
        v_.push_back(Matrix::Zero(params_[i].value.rows(), params_[i].value.cols()));
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (p.grad.size() != p.value.size()) continue;
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseAbs2();
        p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

namespace {

std::string first_bad_head(const Matrix& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (!m.col(j).allFinite()) return evaluation::output_name(static_cast<std::size_t>(j));
    }
    return {};
}

}  // namespace

double train_step(model::MtlModel& model, Adam& optimizer, const model::Batch& batch, const Matrix& targets,
                  const loss::LossConfig& loss_config) {
    nn::Graph g;
    model.parameters().zero_grad();
    const auto out = model.forward(g, batch);
    const Matrix& pred = g.value(out);
    if (const auto head = first_bad_head(pred); !head.empty()) {
        fail(ErrorKind::numeric, "non-finite prediction from head " + head);
    }
    const loss::PredictionBatch pb{pred, targets};
    const double value = loss::total_loss(pb, loss_config);
    if (!std::isfinite(value)) fail(ErrorKind::numeric, "non-finite total loss");
    g.backward(out, loss::total_loss_gradient(pb, loss_config));
    optimizer.step();
    return value;
}

Matrix predict(const model::MtlModel& model, const Dataset& data, std::size_t batch_size) {
    Matrix out(static_cast<Eigen::Index>(data.size()), clinical::num_targets);
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        rows.clear();
        for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) rows.push_back(i);
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(rows.size())) =
            model.predict(make_batch(data, rows));
    }
    return out;
}

TrainHistory train(model::MtlModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config) {
    config.validate();
    if (train_set.size() == 0) fail(ErrorKind::config, "training set is empty");
    if (val_set.size() == 0) fail(ErrorKind::config, "validation set is empty");
    if (model.config().modality.use_mri && !train_set.has_mri()) {
        fail(ErrorKind::config, "model uses MRI but the training data has no volumes");
    }
    const auto loss_config = config.loss();

    if (config.init_head_bias) {
        const Eigen::RowVectorXd means = train_set.targets.colwise().mean();
        for (std::size_t j = 0; j < clinical::num_targets; ++j) {
            char name[24];
            std::snprintf(name, sizeof(name), "head.%02zu.bias", j);
            model.parameters().at(name).value(0, 0) = means[static_cast<Eigen::Index>(j)];
        }
    }

    Adam optimizer(model.parameters(), config.learning_rate);
    TrainHistory history;
    double best_loss = std::numeric_limits<double>::infinity();
    auto best = model.parameters().snapshot();
    std::size_t since_best = 0;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(synth::mix_seed(config.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::span<const std::size_t> rows(order.data() + start,
                                                    std::min(config.batch_size, order.size() - start));
            Matrix targets(static_cast<Eigen::Index>(rows.size()), clinical::num_targets);
            for (std::size_t k = 0; k < rows.size(); ++k) {
                targets.row(static_cast<Eigen::Index>(k)) = train_set.targets.row(static_cast<Eigen::Index>(rows[k]));
            }
            try {
                sum += train_step(model, optimizer, make_batch(train_set, rows), targets, loss_config) *
                       static_cast<double>(rows.size());
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::numeric) throw;
                fail(ErrorKind::numeric,
                     "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + e.what());
            }
        }

        const Matrix val_pred = predict(model, val_set, std::max<std::size_t>(config.batch_size, 16));
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_total_loss = sum / static_cast<double>(train_set.size());
        rec.val_total_loss = loss::total_loss({val_pred, val_set.targets}, loss_config);
        const Eigen::VectorXd pg = val_pred.col(0), tg = val_set.targets.col(0);
        const std::span<const double> ps(pg.data(), static_cast<std::size_t>(pg.size()));
        const std::span<const double> ts(tg.data(), static_cast<std::size_t>(tg.size()));
        rec.val_mae_global = evaluation::mae(ps, ts);
        if (ps.size() >= 2) {
            try {
                rec.val_pearson_global = evaluation::pearson(ps, ts);
            } catch (const Error&) {
            }
        }
        history.epochs.push_back(rec);
        spdlog::debug("epoch {} train {:.4f} val {:.4f}", epoch, rec.train_total_loss, rec.val_total_loss);

        if (rec.val_total_loss < best_loss) {
            best_loss = rec.val_total_loss;
            best = model.parameters().snapshot();
            history.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.early_stop_patience) {
            history.stopped_early = true;
            break;
        }
    }
    model.parameters().restore(best);
    return history;
}

}  // namespace adasmtl::training
