#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace adasmtl::clinical {

inline constexpr std::size_t num_items = 13;
inline constexpr std::size_t num_features = 2 * num_items;
inline constexpr std::size_t num_targets = num_items + 1;

/// Subjects whose baseline global score exceeds this are excluded from the cohort.
inline constexpr double inclusion_max_baseline_global = 20.0;

enum class Timepoint { BL, M06, M24 };
enum class Diagnosis { NC, MCI, AD };
enum class Sex { M, F };

std::string_view to_string(Timepoint tp) noexcept;
std::string_view to_string(Diagnosis dx) noexcept;
std::string_view to_string(Sex sex) noexcept;
std::optional<Timepoint> parse_timepoint(std::string_view text) noexcept;
std::optional<Diagnosis> parse_diagnosis(std::string_view text) noexcept;
std::optional<Sex> parse_sex(std::string_view text) noexcept;

/// Years elapsed since baseline for a visit.
double years_since_baseline(Timepoint tp) noexcept;

struct AdasCogItem {
    int id;  // 1..13
    std::string_view code;
    std::string_view label;
    double max_score;
};

/// Standard ADAS-Cog 13 item table (maxima sum to 85).
const std::array<AdasCogItem, num_items>& items() noexcept;

using ItemScores = std::array<double, num_items>;
using ItemMaxima = std::array<double, num_items>;

ItemMaxima default_item_maxima() noexcept;
double total_max_score(const ItemMaxima& maxima) noexcept;

/// Sum of the 13 item scores. Throws a contract error on any other length.
double derive_global(std::span<const double> item_scores);

struct AdasCogAssessment {
    std::string subject_id;
    Timepoint timepoint = Timepoint::BL;
    ItemScores item_scores{};
    double global_score = 0.0;

    static AdasCogAssessment from_items(std::string subject_id, Timepoint tp, const ItemScores& scores);
};

struct SubjectRecord {
    std::string subject_id;
    Diagnosis diagnosis = Diagnosis::NC;
    double age = 0.0;
    Sex sex = Sex::M;
    std::map<Timepoint, AdasCogAssessment> assessments;
    std::optional<std::filesystem::path> mri_path;

    bool has(Timepoint tp) const { return assessments.count(tp) != 0; }
    const AdasCogAssessment& at(Timepoint tp) const;
};

/// Q1..Q13 at BL followed by Q1..Q13 at M06.
using FeatureVector = std::array<double, num_features>;
/// Global score at M24 followed by Q1..Q13 at M24.
using TargetVector = std::array<double, num_targets>;

FeatureVector build_feature_vector(const SubjectRecord& subject);
TargetVector build_target_vector(const SubjectRecord& subject);

/// Inverse of build_feature_vector: (BL items, M06 items).
std::pair<ItemScores, ItemScores> split_feature_vector(const FeatureVector& features) noexcept;

struct ValidationIssue {
    ErrorKind kind = ErrorKind::validation;
    std::string subject_id;
    std::string field;
    std::string message;
    std::size_t line = 0;  // 0 when not tied to a file line
};

struct CsvLoadResult {
    std::vector<SubjectRecord> cohort;
    std::vector<ValidationIssue> issues;
    std::vector<std::string> warnings;
};

/// Lenient load: collects row-level problems instead of throwing. Schema
/// problems (missing header columns, unreadable file) still throw.
CsvLoadResult load_clinical_csv(const std::filesystem::path& path,
                                const ItemMaxima& maxima = default_item_maxima());

/// Strict load: throws the first collected issue as an Error.
std::vector<SubjectRecord> parse_clinical_csv(const std::filesystem::path& path,
                                              const ItemMaxima& maxima = default_item_maxima());

void write_clinical_csv(const std::filesystem::path& path, std::span<const SubjectRecord> cohort);

/// Range and sum checks over every assessment.
std::vector<ValidationIssue> validate_cohort(std::span<const SubjectRecord> cohort,
                                             const ItemMaxima& maxima = default_item_maxima());

nlohmann::json validation_report_json(std::span<const ValidationIssue> issues);

/// Complete-case eligibility: BL, M06, M24 present, baseline global within the
/// inclusion bound and, when require_mri, a volume reference.
bool is_eligible(const SubjectRecord& subject, bool require_mri, std::string* reason = nullptr);

std::vector<SubjectRecord> eligible_subjects(std::span<const SubjectRecord> cohort, bool require_mri);

}  // namespace adasmtl::clinical
