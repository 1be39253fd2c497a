#include "evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "error.hpp"
#include "text.hpp"

namespace adasmtl::evaluation {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_len) {
    require(a.size() == b.size(), "metric inputs differ in length (" + std::to_string(a.size()) + " vs " +
                                      std::to_string(b.size()) + ")");
    require(a.size() >= min_len, "metric inputs need at least " + std::to_string(min_len) + " elements");
}

std::vector<double> column(const Matrix& m, Eigen::Index j) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, j);
    return out;
}

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth, 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]);
    return sum / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth, 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return std::sqrt(sum / static_cast<double>(pred.size()));
}

double pearson(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth, 2);
    const auto n = static_cast<double>(pred.size());
    const double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
    const double mt = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dx = pred[i] - mp, dy = truth[i] - mt;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0) fail(ErrorKind::undefined, "pearson undefined: predictions have zero variance");
    if (syy == 0.0) fail(ErrorKind::undefined, "pearson undefined: targets have zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::string output_name(std::size_t j) { return j == 0 ? "global" : "Q" + std::to_string(j); }

Contribution subscore_contribution(std::span<const double> predicted) {
    require(predicted.size() == clinical::num_items,
            "subscore_contribution expects 13 values, got " + std::to_string(predicted.size()));
    std::array<double, clinical::num_items> clamped{};
    double sum = 0.0;
    for (std::size_t j = 0; j < clinical::num_items; ++j) {
        require(std::isfinite(predicted[j]), "subscore_contribution requires finite values");
        clamped[j] = std::max(0.0, predicted[j]);
        sum += clamped[j];
    }
    Contribution c;
    if (sum <= 0.0) {
        c.degenerate = true;
        return c;
    }
    std::array<double, clinical::num_items> pct{};
    for (std::size_t j = 0; j < clinical::num_items; ++j) pct[j] = 100.0 * clamped[j] / sum;
    c.percent = pct;
    return c;
}

namespace {

std::vector<DominanceEntry> rank_items(std::span<const SubjectRow> subjects) {
    std::array<double, clinical::num_items> mean{};
    std::size_t used = 0;
    for (const auto& row : subjects) {
        if (!row.contribution.percent) continue;
        ++used;
        for (std::size_t j = 0; j < clinical::num_items; ++j) mean[j] += (*row.contribution.percent)[j];
    }
    if (used > 0) {
        for (double& m : mean) m /= static_cast<double>(used);
    }
    std::vector<DominanceEntry> out(clinical::num_items);
    for (std::size_t j = 0; j < clinical::num_items; ++j) out[j] = {j, mean[j], 0.0};
    std::stable_sort(out.begin(), out.end(),
                     [](const DominanceEntry& a, const DominanceEntry& b) { return a.mean_contribution > b.mean_contribution; });
    double cumulative = 0.0;
    for (auto& e : out) {
        cumulative += e.mean_contribution;
        e.cumulative_share = cumulative;
    }
    return out;
}

}  // namespace

EvaluationReport evaluate(std::span<const SubjectInfo> subjects, const Matrix& predictions, const Matrix& targets) {
    require(predictions.rows() == targets.rows() && predictions.cols() == targets.cols(),
            "prediction and target shapes differ");
    require(predictions.cols() == static_cast<Eigen::Index>(clinical::num_targets), "evaluation expects 14 outputs");
    require(static_cast<std::size_t>(predictions.rows()) == subjects.size(), "one subject per prediction row required");
    require(!subjects.empty(), "evaluation needs at least one subject");

    EvaluationReport report;
    for (std::size_t j = 0; j < clinical::num_targets; ++j) {
        const auto p = column(predictions, static_cast<Eigen::Index>(j));
        const auto t = column(targets, static_cast<Eigen::Index>(j));
        OutputMetrics m;
        m.name = output_name(j);
        m.mae = mae(p, t);
        m.rmse = rmse(p, t);
        try {
            m.pearson_r = pearson(p, t);
        } catch (const Error& e) {
            m.pearson_error = e.what();
        }
        report.outputs.push_back(std::move(m));
    }
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        SubjectRow row;
        row.subject_id = subjects[i].subject_id;
        row.diagnosis = subjects[i].diagnosis;
        for (std::size_t j = 0; j < clinical::num_targets; ++j) {
            row.truth[j] = targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            row.predicted[j] = predictions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
        row.contribution = subscore_contribution(std::span<const double>(row.predicted).subspan(1));
        report.subjects.push_back(std::move(row));
    }
    report.dominance = rank_items(report.subjects);
    return report;
}

std::vector<DominanceEntry> dominance_report(const EvaluationReport& report, std::size_t k) {
    auto ranked = report.dominance.empty() ? rank_items(report.subjects) : report.dominance;
    if (k < ranked.size()) ranked.resize(k);
    return ranked;
}

nlohmann::json to_json(const EvaluationReport& report) {
    nlohmann::json outputs = nlohmann::json::array();
    for (const auto& m : report.outputs) {
        nlohmann::json o{{"name", m.name}, {"mae", m.mae}, {"rmse", m.rmse}, {"pearson_r", optional_number(m.pearson_r)}};
        if (!m.pearson_error.empty()) o["pearson_error"] = m.pearson_error;
        outputs.push_back(std::move(o));
    }
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& row : report.subjects) {
        nlohmann::json items = nlohmann::json::array();
        for (std::size_t j = 1; j < clinical::num_targets; ++j) {
            nlohmann::json item{{"item", output_name(j)},
                                {"true", row.truth[j]},
                                {"predicted", row.predicted[j]},
                                {"abs_error", std::abs(row.predicted[j] - row.truth[j])}};
            item["contribution_pct"] =
                row.contribution.percent ? nlohmann::json((*row.contribution.percent)[j - 1]) : nlohmann::json();
            items.push_back(std::move(item));
        }
        subjects.push_back({{"subject_id", row.subject_id},
                            {"diagnosis", row.diagnosis},
                            {"global_true", row.truth[0]},
                            {"global_predicted", row.predicted[0]},
                            {"contribution_degenerate", row.contribution.degenerate},
                            {"subscores", std::move(items)}});
    }
    nlohmann::json dominance = nlohmann::json::array();
    for (const auto& e : report.dominance) {
        dominance.push_back({{"item", output_name(e.item + 1)},
                             {"mean_contribution_pct", e.mean_contribution},
                             {"cumulative_share_pct", e.cumulative_share}});
    }
    return {{"outputs", std::move(outputs)},
            {"subjects", std::move(subjects)},
            {"dominance", std::move(dominance)},
            {"context", report.context}};
}

EvaluationReport report_from_json(const nlohmann::json& j) {
    EvaluationReport report;
    try {
        for (const auto& o : j.at("outputs")) {
            OutputMetrics m;
            m.name = o.at("name").get<std::string>();
            m.mae = o.at("mae").get<double>();
            m.rmse = o.at("rmse").get<double>();
            if (!o.at("pearson_r").is_null()) m.pearson_r = o.at("pearson_r").get<double>();
            m.pearson_error = o.value("pearson_error", std::string());
            report.outputs.push_back(std::move(m));
        }
        for (const auto& s : j.at("subjects")) {
            SubjectRow row;
            row.subject_id = s.at("subject_id").get<std::string>();
            row.diagnosis = s.at("diagnosis").get<std::string>();
            row.truth[0] = s.at("global_true").get<double>();
            row.predicted[0] = s.at("global_predicted").get<double>();
            row.contribution.degenerate = s.at("contribution_degenerate").get<bool>();
            const auto& items = s.at("subscores");
            require(items.size() == clinical::num_items, "report subject row must list 13 sub-scores");
            std::array<double, clinical::num_items> pct{};
            for (std::size_t k = 0; k < clinical::num_items; ++k) {
                row.truth[k + 1] = items[k].at("true").get<double>();
                row.predicted[k + 1] = items[k].at("predicted").get<double>();
                if (!items[k].at("contribution_pct").is_null()) pct[k] = items[k].at("contribution_pct").get<double>();
            }
            if (!row.contribution.degenerate) row.contribution.percent = pct;
            report.subjects.push_back(std::move(row));
        }
        for (const auto& d : j.at("dominance")) {
            const auto name = d.at("item").get<std::string>();
            DominanceEntry e;
            e.item = static_cast<std::size_t>(std::stoi(name.substr(1))) - 1;
            e.mean_contribution = d.at("mean_contribution_pct").get<double>();
            e.cumulative_share = d.at("cumulative_share_pct").get<double>();
            report.dominance.push_back(e);
        }
        report.context = j.value("context", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, std::string("malformed evaluation report: ") + e.what());
    }
    return report;
}

void write_predictions_csv(const std::filesystem::path& path, const EvaluationReport& report) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out << "subject_id";
    for (std::size_t j = 0; j < clinical::num_targets; ++j) out << ",true_" << output_name(j);
    for (std::size_t j = 0; j < clinical::num_targets; ++j) out << ",pred_" << output_name(j);
    out << '\n';
    for (const auto& row : report.subjects) {
        out << row.subject_id;
        for (double v : row.truth) out << ',' << text::format_double(v);
        for (double v : row.predicted) out << ',' << text::format_double(v);
        out << '\n';
    }
}

}  // namespace adasmtl::evaluation
