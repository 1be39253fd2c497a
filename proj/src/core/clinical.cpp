#include "clinical.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "text.hpp"

namespace adasmtl::clinical {

namespace {

constexpr std::array<AdasCogItem, num_items> item_table{{
    {1, "Q1", "Word Recall", 10},
    {2, "Q2", "Commands", 5},
    {3, "Q3", "Constructional Praxis", 5},
    {4, "Q4", "Delayed Word Recall", 10},
    {5, "Q5", "Naming Objects and Fingers", 5},
    {6, "Q6", "Ideational Praxis", 5},
    {7, "Q7", "Orientation", 8},
    {8, "Q8", "Word Recognition", 12},
    {9, "Q9", "Remembering Test Instructions", 5},
    {10, "Q10", "Spoken Language Ability", 5},
    {11, "Q11", "Word-Finding Difficulty", 5},
    {12, "Q12", "Comprehension", 5},
    {13, "Q13", "Number Cancellation", 5},
}};

constexpr double sum_tolerance = 1e-9;

const std::array<std::string_view, 5> fixed_columns{"subject_id", "diagnosis", "age", "sex", "timepoint"};

}  // namespace

std::string_view to_string(Timepoint tp) noexcept {
    switch (tp) {
        case Timepoint::BL: return "BL";
        case Timepoint::M06: return "M06";
        case Timepoint::M24: return "M24";
    }
    return "?";
}

std::string_view to_string(Diagnosis dx) noexcept {
    switch (dx) {
        case Diagnosis::NC: return "NC";
        case Diagnosis::MCI: return "MCI";
        case Diagnosis::AD: return "AD";
    }
    return "?";
}

std::string_view to_string(Sex sex) noexcept { return sex == Sex::M ? "M" : "F"; }

std::optional<Timepoint> parse_timepoint(std::string_view text) noexcept {
    if (text == "BL") return Timepoint::BL;
    if (text == "M06") return Timepoint::M06;
    if (text == "M24") return Timepoint::M24;
    return std::nullopt;
}

std::optional<Diagnosis> parse_diagnosis(std::string_view text) noexcept {
    if (text == "NC") return Diagnosis::NC;
    if (text == "MCI") return Diagnosis::MCI;
    if (text == "AD") return Diagnosis::AD;
    return std::nullopt;
}

std::optional<Sex> parse_sex(std::string_view text) noexcept {
    if (text == "M") return Sex::M;
    if (text == "F") return Sex::F;
    return std::nullopt;
}

double years_since_baseline(Timepoint tp) noexcept {
    switch (tp) {
        case Timepoint::BL: return 0.0;
        case Timepoint::M06: return 0.5;
        case Timepoint::M24: return 2.0;
    }
    return 0.0;
}

const std::array<AdasCogItem, num_items>& items() noexcept { return item_table; }

ItemMaxima default_item_maxima() noexcept {
    ItemMaxima maxima{};
    for (std::size_t j = 0; j < num_items; ++j) maxima[j] = item_table[j].max_score;
    return maxima;
}

double total_max_score(const ItemMaxima& maxima) noexcept {
    return std::accumulate(maxima.begin(), maxima.end(), 0.0);
}

double derive_global(std::span<const double> item_scores) {
    require(item_scores.size() == num_items,
            "derive_global expects 13 item scores, got " + std::to_string(item_scores.size()));
    return std::accumulate(item_scores.begin(), item_scores.end(), 0.0);
}

AdasCogAssessment AdasCogAssessment::from_items(std::string subject_id, Timepoint tp, const ItemScores& scores) {
    AdasCogAssessment a;
    a.subject_id = std::move(subject_id);
    a.timepoint = tp;
    a.item_scores = scores;
    a.global_score = derive_global(scores);
    return a;
}

const AdasCogAssessment& SubjectRecord::at(Timepoint tp) const {
    auto it = assessments.find(tp);
    if (it == assessments.end()) {
        fail(ErrorKind::eligibility,
             "subject " + subject_id + " has no " + std::string(to_string(tp)) + " assessment");
    }
    return it->second;
}

FeatureVector build_feature_vector(const SubjectRecord& subject) {
    const auto& bl = subject.at(Timepoint::BL);
    const auto& m06 = subject.at(Timepoint::M06);
    FeatureVector f{};
    std::copy(bl.item_scores.begin(), bl.item_scores.end(), f.begin());
    std::copy(m06.item_scores.begin(), m06.item_scores.end(), f.begin() + num_items);
    return f;
}

TargetVector build_target_vector(const SubjectRecord& subject) {
    const auto& m24 = subject.at(Timepoint::M24);
    TargetVector t{};
    t[0] = m24.global_score;
    std::copy(m24.item_scores.begin(), m24.item_scores.end(), t.begin() + 1);
    return t;
}

std::pair<ItemScores, ItemScores> split_feature_vector(const FeatureVector& features) noexcept {
    std::pair<ItemScores, ItemScores> out;
    std::copy_n(features.begin(), num_items, out.first.begin());
    std::copy_n(features.begin() + num_items, num_items, out.second.begin());
    return out;
}

std::vector<ValidationIssue> validate_cohort(std::span<const SubjectRecord> cohort, const ItemMaxima& maxima) {
    std::vector<ValidationIssue> issues;
    for (const auto& subject : cohort) {
        for (const auto& [tp, a] : subject.assessments) {
            for (std::size_t j = 0; j < num_items; ++j) {
                const double v = a.item_scores[j];
                if (!std::isfinite(v) || v < 0.0 || v > maxima[j]) {
                    std::ostringstream msg;
                    msg << "score " << v << " for " << item_table[j].code << " at " << to_string(tp)
                        << " outside [0, " << maxima[j] << "]";
                    issues.push_back({ErrorKind::validation, subject.subject_id,
                                      std::string(item_table[j].code), msg.str(), 0});
                }
            }
            const double sum = std::accumulate(a.item_scores.begin(), a.item_scores.end(), 0.0);
            if (std::abs(sum - a.global_score) > sum_tolerance) {
                issues.push_back({ErrorKind::validation, subject.subject_id, "global_score",
                                  "global score does not equal the item sum at " + std::string(to_string(tp)), 0});
            }
        }
    }
    return issues;
}

CsvLoadResult load_clinical_csv(const std::filesystem::path& path, const ItemMaxima& maxima) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open clinical CSV " + path.string());

    CsvLoadResult result;
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::schema, "clinical CSV " + path.string() + " is empty");

    const auto header = text::split_csv_line(line);
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);

    auto column_of = [&](std::string_view name) {
        auto it = column.find(std::string(name));
        if (it == column.end()) fail(ErrorKind::schema, "clinical CSV is missing column '" + std::string(name) + "'");
        return it->second;
    };
    std::array<std::size_t, fixed_columns.size()> fixed_idx{};
    for (std::size_t i = 0; i < fixed_columns.size(); ++i) fixed_idx[i] = column_of(fixed_columns[i]);
    std::array<std::size_t, num_items> item_idx{};
    for (std::size_t j = 0; j < num_items; ++j) item_idx[j] = column_of(item_table[j].code);
    std::optional<std::size_t> mri_idx;
    if (auto it = column.find("mri_path"); it != column.end()) mri_idx = it->second;

    std::unordered_map<std::string, std::size_t> index_of;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        const auto cells = text::split_csv_line(line);
        if (cells.size() < header.size()) {
            result.issues.push_back({ErrorKind::parse, "", "row",
                                     "line " + std::to_string(line_no) + ": expected " +
                                         std::to_string(header.size()) + " fields, got " +
                                         std::to_string(cells.size()),
                                     line_no});
            continue;
        }
        const std::string& sid = cells[fixed_idx[0]];
        auto row_issue = [&](ErrorKind kind, std::string field, const std::string& what) {
            result.issues.push_back({kind, sid, std::move(field),
                                     "line " + std::to_string(line_no) + ": " + what, line_no});
        };

        auto tp = parse_timepoint(cells[fixed_idx[4]]);
        if (!tp) {
            const std::string warn = "line " + std::to_string(line_no) + ": ignoring visit '" +
                                     cells[fixed_idx[4]] + "' for subject " + sid;
            spdlog::warn("{}", warn);
            result.warnings.push_back(warn);
            continue;
        }
        auto dx = parse_diagnosis(cells[fixed_idx[1]]);
        if (!dx) {
            row_issue(ErrorKind::parse, "diagnosis", "unknown diagnosis '" + cells[fixed_idx[1]] + "'");
            continue;
        }
        auto age = text::parse_double(cells[fixed_idx[2]]);
        if (!age) {
            row_issue(ErrorKind::parse, "age", "non-numeric age '" + cells[fixed_idx[2]] + "'");
            continue;
        }
        auto sex = parse_sex(cells[fixed_idx[3]]);
        if (!sex) {
            row_issue(ErrorKind::parse, "sex", "unknown sex '" + cells[fixed_idx[3]] + "'");
            continue;
        }

        ItemScores scores{};
        bool row_ok = true;
        for (std::size_t j = 0; j < num_items; ++j) {
            const std::string& cell = cells[item_idx[j]];
            auto v = text::parse_double(cell);
            if (!v) {
                row_issue(ErrorKind::parse, std::string(item_table[j].code), "non-numeric score '" + cell + "'");
                row_ok = false;
                continue;
            }
            if (*v < 0.0 || *v > maxima[j]) {
                std::ostringstream msg;
                msg << "score " << *v << " for " << item_table[j].code << " outside [0, " << maxima[j] << "]";
                row_issue(ErrorKind::validation, std::string(item_table[j].code), msg.str());
                row_ok = false;
                continue;
            }
            scores[j] = *v;
        }
        if (!row_ok) continue;

        auto [it, inserted] = index_of.emplace(sid, result.cohort.size());
        if (inserted) {
            SubjectRecord rec;
            rec.subject_id = sid;
            rec.diagnosis = *dx;
            rec.age = *age;
            rec.sex = *sex;
            result.cohort.push_back(std::move(rec));
        }
        SubjectRecord& rec = result.cohort[it->second];
        if (rec.diagnosis != *dx) {
            row_issue(ErrorKind::validation, "diagnosis", "diagnosis differs from earlier rows");
            continue;
        }
        if (rec.has(*tp)) {
            row_issue(ErrorKind::validation, "timepoint",
                      "duplicate " + std::string(to_string(*tp)) + " assessment");
            continue;
        }
        if (mri_idx && !cells[*mri_idx].empty()) rec.mri_path = cells[*mri_idx];
        rec.assessments.emplace(*tp, AdasCogAssessment::from_items(sid, *tp, scores));
    }
    return result;
}

std::vector<SubjectRecord> parse_clinical_csv(const std::filesystem::path& path, const ItemMaxima& maxima) {
    auto result = load_clinical_csv(path, maxima);
    if (!result.issues.empty()) {
        const auto& first = result.issues.front();
        std::string msg = first.message;
        if (!first.subject_id.empty()) msg = "subject " + first.subject_id + ", " + first.field + ": " + msg;
        fail(first.kind, msg);
    }
    return std::move(result.cohort);
}

void write_clinical_csv(const std::filesystem::path& path, std::span<const SubjectRecord> cohort) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write clinical CSV " + path.string());
    const bool with_mri = std::any_of(cohort.begin(), cohort.end(), [](const auto& s) { return s.mri_path.has_value(); });
    out << "subject_id,diagnosis,age,sex,timepoint";
    for (const auto& item : item_table) out << ',' << item.code;
    if (with_mri) out << ",mri_path";
    out << '\n';
    for (const auto& s : cohort) {
        for (const auto& [tp, a] : s.assessments) {
            out << s.subject_id << ',' << to_string(s.diagnosis) << ',' << text::format_double(s.age) << ','
                << to_string(s.sex) << ',' << to_string(tp);
            for (double v : a.item_scores) out << ',' << text::format_double(v);
            if (with_mri) out << ',' << (s.mri_path ? s.mri_path->string() : std::string());
            out << '\n';
        }
    }
    if (!out) fail(ErrorKind::io, "failed writing clinical CSV " + path.string());
}

nlohmann::json validation_report_json(std::span<const ValidationIssue> issues) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& issue : issues) {
        records.push_back({{"subject_id", issue.subject_id}, {"field", issue.field}, {"message", issue.message}});
    }
    return records;
}

bool is_eligible(const SubjectRecord& subject, bool require_mri, std::string* reason) {
    auto reject = [&](std::string why) {
        if (reason) *reason = std::move(why);
        return false;
    };
    for (auto tp : {Timepoint::BL, Timepoint::M06, Timepoint::M24}) {
        if (!subject.has(tp)) return reject("missing " + std::string(to_string(tp)) + " assessment");
    }
    if (subject.at(Timepoint::BL).global_score > inclusion_max_baseline_global + sum_tolerance) {
        return reject("baseline global score above inclusion bound");
    }
    if (require_mri && !subject.mri_path) return reject("no baseline volume");
    return true;
}

std::vector<SubjectRecord> eligible_subjects(std::span<const SubjectRecord> cohort, bool require_mri) {
    std::vector<SubjectRecord> out;
    for (const auto& s : cohort) {
        std::string why;
        if (is_eligible(s, require_mri, &why)) {
            out.push_back(s);
        } else {
            spdlog::debug("excluding subject {}: {}", s.subject_id, why);
        }
    }
    return out;
}

}  // namespace adasmtl::clinical
