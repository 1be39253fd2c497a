#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include <json.hpp>

#include "clinical.hpp"
#include "imaging.hpp"

namespace adasmtl::synth {

struct GroupSpec {
    std::size_t count = 0;
    double global_mean = 0.0;  // baseline ADAS-Cog global, points
    double global_sd = 0.0;
    double age_mean = 0.0;  // years
    double age_sd = 0.0;
    double male_fraction = 0.5;
    double drift_per_year = 0.0;  // global points per year
};

struct CohortSpec {
    std::map<clinical::Diagnosis, GroupSpec> groups;
    /// SD of the visit noise on the global score; spread over items in
    /// proportion to their maxima.
    double noise_sd = 1.0;
    /// Log-normal jitter on the proportional item allocation.
    double allocation_jitter = 0.35;
    std::uint64_t seed = 20240;
    clinical::ItemMaxima maxima = clinical::default_item_maxima();

    /// Group sizes, demographics and baseline score moments of the ADNI-1
    /// cohort (AD 17, NC 203, MCI 215).
    static CohortSpec adni_like();
    void validate() const;
    std::size_t total() const;
};

nlohmann::json to_json(const CohortSpec& spec);
CohortSpec cohort_spec_from_json(const nlohmann::json& j);

/// Deterministic per (spec, seed); subject i draws from its own stream.
std::vector<clinical::SubjectRecord> generate_cohort(const CohortSpec& spec);

/// Split a global score over the 13 items: proportional to maxima with
/// log-normal jitter, then clipped with the residual redistributed so the
/// items sum to `global` exactly (up to rounding).
template <typename Rng>
clinical::ItemScores allocate_items(double global, const clinical::ItemMaxima& maxima, double jitter, Rng& rng);

struct SignalPlan {
    std::vector<std::size_t> signal_items{0, 3, 7};  // Q1, Q4, Q8
    imaging::Vec3 region_center{0.0, 0.0, 0.0};       // voxels
    double region_radius_base = 6.0;                   // voxels
    double atrophy_gain = 0.6;                         // voxels of radius per point of mean signal-item score
    double tissue_intensity = 0.4;
    double tissue_noise_sd = 0.05;
    double region_intensity = 1.0;
    double gain_amplitude = 0.0;  // 0 disables the multiplicative bias field

    /// Centered region scaled to the grid.
    static SignalPlan defaults_for(const imaging::Shape& shape);
    void validate(const imaging::Shape& shape) const;
};

nlohmann::json to_json(const SignalPlan& plan);
SignalPlan signal_plan_from_json(const nlohmann::json& j, const imaging::Shape& shape);

/// base - gain * mean(BL signal items), floored at 1 voxel.
double region_radius(const clinical::SubjectRecord& subject, const SignalPlan& plan);

imaging::Volume generate_volume(const clinical::SubjectRecord& subject, const SignalPlan& plan,
                                const imaging::Shape& shape, std::uint64_t seed,
                                const imaging::Vec3& spacing = {2.0, 2.0, 2.0});

/// Noise-free phantom at the base radius; the default registration target.
imaging::Volume reference_volume(const SignalPlan& plan, const imaging::Shape& shape,
                                 const imaging::Vec3& spacing = {2.0, 2.0, 2.0});

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

// ---------------------------------------------------------------------------

template <typename Rng>
clinical::ItemScores allocate_items(double global, const clinical::ItemMaxima& maxima, double jitter, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    clinical::ItemScores weights{};
    double wsum = 0.0;
    for (std::size_t j = 0; j < clinical::num_items; ++j) {
        weights[j] = maxima[j] * std::exp(jitter * normal(rng));
        wsum += weights[j];
    }
    clinical::ItemScores items{};
    for (std::size_t j = 0; j < clinical::num_items; ++j) {
        items[j] = std::min(maxima[j], global * weights[j] / wsum);
    }
    for (int pass = 0; pass < 32; ++pass) {
        double assigned = 0.0, room = 0.0;
        for (std::size_t j = 0; j < clinical::num_items; ++j) {
            assigned += items[j];
            room += maxima[j] - items[j];
        }
        const double residual = global - assigned;
        if (residual <= 1e-12 || room <= 0.0) break;
        for (std::size_t j = 0; j < clinical::num_items; ++j) {
            items[j] = std::min(maxima[j], items[j] + residual * (maxima[j] - items[j]) / room);
        }
    }
    return items;
}

}  // namespace adasmtl::synth
