#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "error.hpp"

namespace adasmtl::synth {

using clinical::Diagnosis;
using clinical::Timepoint;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    // splitmix64 finalizer over the pair
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

std::uint64_t hash_string(std::string_view s) noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

const std::array<Diagnosis, 3> group_order{Diagnosis::AD, Diagnosis::NC, Diagnosis::MCI};

}  // namespace

CohortSpec CohortSpec::adni_like() {
    CohortSpec spec;
    spec.groups[Diagnosis::AD] = {17, 17.1, 2.1, 73.4, 8.3, 8.0 / 17.0, 2.5};
    spec.groups[Diagnosis::NC] = {203, 9.5, 4.2, 76.0, 5.2, 102.0 / 203.0, 0.2};
    spec.groups[Diagnosis::MCI] = {215, 14.5, 3.9, 74.7, 7.5, 138.0 / 215.0, 1.2};
    return spec;
}

std::size_t CohortSpec::total() const {
    std::size_t n = 0;
    for (const auto& [dx, g] : groups) n += g.count;
    return n;
}

void CohortSpec::validate() const {
    for (const auto& [dx, g] : groups) {
        const std::string name(clinical::to_string(dx));
        if (g.global_sd < 0 || g.age_sd < 0) fail(ErrorKind::config, "cohort spec: negative SD for group " + name);
        if (g.male_fraction < 0 || g.male_fraction > 1) {
            fail(ErrorKind::config, "cohort spec: male_fraction outside [0,1] for group " + name);
        }
    }
    if (noise_sd < 0) fail(ErrorKind::config, "cohort spec: negative noise_sd");
    if (allocation_jitter < 0) fail(ErrorKind::config, "cohort spec: negative allocation_jitter");
    for (double m : maxima) {
        if (!(m > 0)) fail(ErrorKind::config, "cohort spec: item maxima must be positive");
    }
}

nlohmann::json to_json(const CohortSpec& spec) {
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& [dx, g] : spec.groups) {
        groups[std::string(clinical::to_string(dx))] = {
            {"count", g.count},           {"global_mean", g.global_mean}, {"global_sd", g.global_sd},
            {"age_mean", g.age_mean},     {"age_sd", g.age_sd},           {"male_fraction", g.male_fraction},
            {"drift_per_year", g.drift_per_year}};
    }
    return {{"groups", groups},
            {"noise_sd", spec.noise_sd},
            {"allocation_jitter", spec.allocation_jitter},
            {"seed", spec.seed},
            {"item_maxima", spec.maxima}};
}

CohortSpec cohort_spec_from_json(const nlohmann::json& j) {
    CohortSpec spec = CohortSpec::adni_like();
    if (j.contains("groups")) {
        for (const auto& [name, gj] : j.at("groups").items()) {
            auto dx = clinical::parse_diagnosis(name);
            if (!dx) fail(ErrorKind::config, "cohort spec: unknown group '" + name + "'");
            GroupSpec g = spec.groups[*dx];
            g.count = gj.value("count", g.count);
            g.global_mean = gj.value("global_mean", g.global_mean);
            g.global_sd = gj.value("global_sd", g.global_sd);
            g.age_mean = gj.value("age_mean", g.age_mean);
            g.age_sd = gj.value("age_sd", g.age_sd);
            g.male_fraction = gj.value("male_fraction", g.male_fraction);
            g.drift_per_year = gj.value("drift_per_year", g.drift_per_year);
            spec.groups[*dx] = g;
        }
    }
    spec.noise_sd = j.value("noise_sd", spec.noise_sd);
    spec.allocation_jitter = j.value("allocation_jitter", spec.allocation_jitter);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("item_maxima")) spec.maxima = j.at("item_maxima").get<clinical::ItemMaxima>();
    spec.validate();
    return spec;
}

std::vector<clinical::SubjectRecord> generate_cohort(const CohortSpec& spec) {
    spec.validate();
    const double max_total = clinical::total_max_score(spec.maxima);
    std::vector<clinical::SubjectRecord> cohort;
    cohort.reserve(spec.total());

    std::uint64_t index = 0;
    for (Diagnosis dx : group_order) {
        auto it = spec.groups.find(dx);
        if (it == spec.groups.end()) continue;
        const GroupSpec& g = it->second;

        // exact male count per group, shuffled over the group's subjects
        const auto males = static_cast<std::size_t>(std::lround(g.male_fraction * static_cast<double>(g.count)));
        std::vector<bool> is_male(g.count, false);
        std::fill_n(is_male.begin(), std::min(males, g.count), true);
        std::mt19937_64 group_rng(mix_seed(spec.seed, 0xA11CE000ULL + static_cast<std::uint64_t>(dx)));
        std::shuffle(is_male.begin(), is_male.end(), group_rng);

        for (std::size_t k = 0; k < g.count; ++k, ++index) {
            std::mt19937_64 rng(mix_seed(spec.seed, index));
            std::normal_distribution<double> normal(0.0, 1.0);

            clinical::SubjectRecord s;
            char id[16];
            std::snprintf(id, sizeof(id), "S%04llu", static_cast<unsigned long long>(index + 1));
            s.subject_id = id;
            s.diagnosis = dx;
            s.sex = is_male[k] ? clinical::Sex::M : clinical::Sex::F;
            s.age = std::max(0.0, g.age_mean + g.age_sd * normal(rng));

            const double global = std::clamp(g.global_mean + g.global_sd * normal(rng), 0.0,
                                             clinical::inclusion_max_baseline_global);
            const auto baseline = allocate_items(global, spec.maxima, spec.allocation_jitter, rng);
            s.assessments.emplace(Timepoint::BL,
                                  clinical::AdasCogAssessment::from_items(s.subject_id, Timepoint::BL, baseline));

            for (Timepoint tp : {Timepoint::M06, Timepoint::M24}) {
                const double years = clinical::years_since_baseline(tp);
                clinical::ItemScores items{};
                for (std::size_t j = 0; j < clinical::num_items; ++j) {
                    const double share = spec.maxima[j] / max_total;
                    const double noise = spec.noise_sd * std::sqrt(share) * normal(rng);
                    items[j] = std::clamp(baseline[j] + g.drift_per_year * years * share + noise, 0.0, spec.maxima[j]);
                }
                s.assessments.emplace(tp, clinical::AdasCogAssessment::from_items(s.subject_id, tp, items));
            }
            cohort.push_back(std::move(s));
        }
    }
    return cohort;
}

// ---------------------------------------------------------------------------

SignalPlan SignalPlan::defaults_for(const imaging::Shape& shape) {
    SignalPlan plan;
    const double min_dim = static_cast<double>(std::min({shape[0], shape[1], shape[2]}));
    plan.region_center = {0.5 * (static_cast<double>(shape[0]) - 1.0), 0.5 * (static_cast<double>(shape[1]) - 1.0),
                          0.5 * (static_cast<double>(shape[2]) - 1.0)};
    plan.region_radius_base = 0.2 * min_dim;
    plan.atrophy_gain = 0.1 * plan.region_radius_base;
    return plan;
}

void SignalPlan::validate(const imaging::Shape& shape) const {
    if (signal_items.empty()) fail(ErrorKind::config, "signal plan: no signal items");
    for (auto j : signal_items) {
        if (j >= clinical::num_items) fail(ErrorKind::config, "signal plan: item index out of range");
    }
    if (!(region_radius_base >= 1.0)) fail(ErrorKind::config, "signal plan: base radius must be >= 1 voxel");
    if (atrophy_gain < 0) fail(ErrorKind::config, "signal plan: negative atrophy gain");
    for (int a = 0; a < 3; ++a) {
        const double lo = region_center[a] - region_radius_base;
        const double hi = region_center[a] + region_radius_base;
        if (lo < 0.0 || hi > static_cast<double>(shape[a]) - 1.0) {
            fail(ErrorKind::config, "signal plan: region out of bounds along axis " + std::to_string(a));
        }
    }
}

nlohmann::json to_json(const SignalPlan& p) {
    return {{"signal_items", p.signal_items},         {"region_center", p.region_center},
            {"region_radius_base", p.region_radius_base}, {"atrophy_gain", p.atrophy_gain},
            {"tissue_intensity", p.tissue_intensity}, {"tissue_noise_sd", p.tissue_noise_sd},
            {"region_intensity", p.region_intensity}, {"gain_amplitude", p.gain_amplitude}};
}

SignalPlan signal_plan_from_json(const nlohmann::json& j, const imaging::Shape& shape) {
    SignalPlan p = SignalPlan::defaults_for(shape);
    p.signal_items = j.value("signal_items", p.signal_items);
    p.region_center = j.value("region_center", p.region_center);
    p.region_radius_base = j.value("region_radius_base", p.region_radius_base);
    p.atrophy_gain = j.value("atrophy_gain", p.atrophy_gain);
    p.tissue_intensity = j.value("tissue_intensity", p.tissue_intensity);
    p.tissue_noise_sd = j.value("tissue_noise_sd", p.tissue_noise_sd);
    p.region_intensity = j.value("region_intensity", p.region_intensity);
    p.gain_amplitude = j.value("gain_amplitude", p.gain_amplitude);
    p.validate(shape);
    return p;
}

double region_radius(const clinical::SubjectRecord& subject, const SignalPlan& plan) {
    const auto& bl = subject.at(Timepoint::BL);
    double mean = 0.0;
    for (auto j : plan.signal_items) mean += bl.item_scores.at(j);
    mean /= static_cast<double>(plan.signal_items.size());
    return std::max(1.0, plan.region_radius_base - plan.atrophy_gain * mean);
}

namespace {

imaging::Volume render(const SignalPlan& plan, const imaging::Shape& shape, const imaging::Vec3& spacing,
                       double radius, std::mt19937_64* rng) {
    imaging::Volume vol(shape, spacing);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::array<double, 3> gain_dir{0.0, 0.0, 0.0};
    if (plan.gain_amplitude > 0.0) {
        double norm = 0.0;
        for (auto& g : gain_dir) {
            g = rng ? normal(*rng) : 1.0;
            norm += g * g;
        }
        for (auto& g : gain_dir) g /= std::sqrt(norm);
    }
    const imaging::Vec3 half{0.5 * (static_cast<double>(shape[0]) - 1.0), 0.5 * (static_cast<double>(shape[1]) - 1.0),
                             0.5 * (static_cast<double>(shape[2]) - 1.0)};
    for (std::size_t z = 0; z < shape[2]; ++z)
        for (std::size_t y = 0; y < shape[1]; ++y)
            for (std::size_t x = 0; x < shape[0]; ++x) {
                const double px = static_cast<double>(x), py = static_cast<double>(y), pz = static_cast<double>(z);
                // ellipsoidal "brain" filling ~85% of each axis
                const double ex = (px - half[0]) / (0.85 * half[0]);
                const double ey = (py - half[1]) / (0.85 * half[1]);
                const double ez = (pz - half[2]) / (0.85 * half[2]);
                double v = 0.0;
                if (ex * ex + ey * ey + ez * ez <= 1.0) {
                    v = plan.tissue_intensity + (rng ? plan.tissue_noise_sd * normal(*rng) : 0.0);
                }
                const double d = std::sqrt((px - plan.region_center[0]) * (px - plan.region_center[0]) +
                                           (py - plan.region_center[1]) * (py - plan.region_center[1]) +
                                           (pz - plan.region_center[2]) * (pz - plan.region_center[2]));
                // one-voxel partial-volume ramp at the region boundary
                const double w = std::clamp(radius + 0.5 - d, 0.0, 1.0);
                v = (1.0 - w) * v + w * plan.region_intensity;
                if (plan.gain_amplitude > 0.0) {
                    const double u = (gain_dir[0] * (px - half[0]) / half[0] + gain_dir[1] * (py - half[1]) / half[1] +
                                      gain_dir[2] * (pz - half[2]) / half[2]) /
                                     std::sqrt(3.0);
                    v *= 1.0 + plan.gain_amplitude * u;
                }
                vol.at(x, y, z) = std::max(0.0, v);
            }
    return vol;
}

}  // namespace

imaging::Volume generate_volume(const clinical::SubjectRecord& subject, const SignalPlan& plan,
                                const imaging::Shape& shape, std::uint64_t seed, const imaging::Vec3& spacing) {
    plan.validate(shape);
    std::mt19937_64 rng(mix_seed(seed, hash_string(subject.subject_id)));
    auto vol = render(plan, shape, spacing, region_radius(subject, plan), &rng);
    vol.subject_id = subject.subject_id;
    return vol;
}

imaging::Volume reference_volume(const SignalPlan& plan, const imaging::Shape& shape, const imaging::Vec3& spacing) {
    plan.validate(shape);
    SignalPlan flat = plan;
    flat.gain_amplitude = 0.0;
    auto vol = render(flat, shape, spacing, plan.region_radius_base, nullptr);
    vol.subject_id = "reference";
    return vol;
}

}  // namespace adasmtl::synth
