#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "explain.hpp"
#include "imaging.hpp"
#include "model.hpp"
#include "synth.hpp"
#include "training.hpp"

namespace adasmtl::pipeline {

struct ImagingConfig {
    imaging::Shape shape{64, 64, 64};
    imaging::Vec3 spacing{2.0, 2.0, 2.0};
    synth::SignalPlan signal_plan = synth::SignalPlan::defaults_for({64, 64, 64});
    std::uint64_t seed = 0;
};

struct PreprocessConfig {
    bool register_volumes = true;
    imaging::RegistrationConfig registration;
    /// Registration target; empty means the synthetic reference phantom.
    std::string reference_path;
    bool bias_correction = true;
    double smoothing_scale_mm = 20.0;
};

struct ExplainConfig {
    std::size_t target_output = 0;
    explain::Mode mode = explain::Mode::sampled;
    std::size_t num_permutations = 200;
    std::size_t background_size = 32;
    std::size_t max_samples = 10;
    std::uint64_t seed = 0;
};

struct Variant {
    model::ModalityConfig modality;
    std::optional<model::BackboneKind> backbone;  // defaults to the configured backbone
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    /// Empty means synthetic data generated from `cohort`.
    std::string clinical_csv;
    synth::CohortSpec cohort = synth::CohortSpec::adni_like();
    ImagingConfig imaging;
    PreprocessConfig preprocess;
    model::ModelConfig model;
    training::TrainConfig train;
    ExplainConfig explain;
    std::vector<Variant> ablation_variants;
    std::filesystem::path output_dir = "out";

    bool synthetic() const noexcept { return clinical_csv.empty(); }
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> modality;
    std::optional<std::string> backbone;
    std::optional<double> alpha;
    std::optional<std::string> output_dir;
};

/// Expands defaults and derives per-stage seeds from the global seed unless a
/// stage seed is given explicitly.
ExperimentConfig resolve_config(nlohmann::json raw, const Overrides& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});
/// Fully resolved form; resolve_config(to_json(c)) == c.
nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json seeds_json(const ExperimentConfig& config);

enum class Stage { synth, preprocess, train, evaluate, explain, report };
std::string_view to_string(Stage stage) noexcept;
Stage parse_stage(std::string_view text);

struct StageOutcome {
    std::string name;
    std::string status;  // executed | skipped | not_required | failed
    std::string error;
};

struct RunResult {
    std::vector<StageOutcome> stages;
    nlohmann::json manifest;
    bool ok = true;
};

/// Runs stages in order up to `until`, reusing cached outputs whose config
/// key matches. Writes manifest.json; failures mark the stage and rethrow.
RunResult run_pipeline(const ExperimentConfig& config, Stage until = Stage::report);

/// Trains and evaluates one model per variant on one shared split; writes
/// ablation.json and ablation.csv. Per-variant failures become error rows.
nlohmann::json run_ablation(const ExperimentConfig& config, const std::vector<Variant>& variants);

std::vector<Variant> default_variants();
std::string feature_extraction_label(const Variant& v, const model::BackboneConfig& configured);
std::string input_data_label(const model::ModalityConfig& m);

}  // namespace adasmtl::pipeline
