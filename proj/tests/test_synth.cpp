#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "synth.hpp"

using namespace adasmtl;
using namespace adasmtl::synth;
using clinical::Diagnosis;
using clinical::Timepoint;

namespace {

clinical::SubjectRecord subject_with_bl(const clinical::ItemScores& bl) {
    clinical::SubjectRecord s;
    s.subject_id = "X";
    s.assessments.emplace(Timepoint::BL, clinical::AdasCogAssessment::from_items("X", Timepoint::BL, bl));
    return s;
}

}  // namespace

TEST_CASE("synth: same seed gives a bitwise identical cohort") {
    auto a = generate_cohort(CohortSpec::adni_like());
    auto b = generate_cohort(CohortSpec::adni_like());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].subject_id == b[i].subject_id);
        CHECK(a[i].age == b[i].age);
        CHECK(a[i].sex == b[i].sex);
        for (auto tp : {Timepoint::BL, Timepoint::M06, Timepoint::M24}) {
            CHECK(a[i].at(tp).item_scores == b[i].at(tp).item_scores);
        }
    }
    auto spec = CohortSpec::adni_like();
    spec.seed += 1;
    auto c = generate_cohort(spec);
    CHECK(c[0].at(Timepoint::BL).item_scores != a[0].at(Timepoint::BL).item_scores);
}

TEST_CASE("synth: group baseline means match the demographic table") {
    auto cohort = generate_cohort(CohortSpec::adni_like());
    std::map<Diagnosis, std::pair<double, int>> acc;
    for (const auto& s : cohort) {
        auto& [sum, n] = acc[s.diagnosis];
        sum += s.at(Timepoint::BL).global_score;
        ++n;
        CHECK(s.at(Timepoint::BL).global_score <= 20.0 + 1e-9);
    }
    CHECK(acc[Diagnosis::AD].second == 17);
    CHECK(acc[Diagnosis::NC].second == 203);
    CHECK(acc[Diagnosis::MCI].second == 215);
    CHECK(std::abs(acc[Diagnosis::AD].first / 17.0 - 17.1) <= 1.0);
    CHECK(std::abs(acc[Diagnosis::NC].first / 203.0 - 9.5) <= 1.0);
    CHECK(std::abs(acc[Diagnosis::MCI].first / 215.0 - 14.5) <= 1.0);
}

TEST_CASE("synth: groups of 200 or more sit within two standard errors") {
    const auto spec = CohortSpec::adni_like();
    auto cohort = generate_cohort(spec);
    for (auto dx : {Diagnosis::NC, Diagnosis::MCI}) {
        const auto& g = spec.groups.at(dx);
        double sum = 0.0;
        for (const auto& s : cohort) {
            if (s.diagnosis == dx) sum += s.at(Timepoint::BL).global_score;
        }
        CHECK(std::abs(sum / static_cast<double>(g.count) - g.global_mean) <=
              2.0 * g.global_sd / std::sqrt(static_cast<double>(g.count)));
    }
}

TEST_CASE("synth: two standard error bound holds for most seeds") {
    auto spec = CohortSpec::adni_like();
    spec.groups.erase(Diagnosis::AD);
    spec.groups.erase(Diagnosis::MCI);
    spec.groups[Diagnosis::NC].count = 400;
    spec.groups[Diagnosis::NC].global_mean = 8.0;
    spec.groups[Diagnosis::NC].global_sd = 2.0;  // far from the clip bounds
    int within = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        spec.seed = seed;
        double sum = 0.0;
        for (const auto& s : generate_cohort(spec)) sum += s.at(Timepoint::BL).global_score;
        if (std::abs(sum / 400.0 - 8.0) <= 2.0 * 2.0 / std::sqrt(400.0)) ++within;
    }
    // about 95% expected; 34 of 40 is a loose lower bound
    CHECK(within >= 34);
}

TEST_CASE("synth: no noise and no drift keeps M24 equal to baseline") {
    auto spec = CohortSpec::adni_like();
    spec.noise_sd = 0.0;
    for (auto& [dx, g] : spec.groups) g.drift_per_year = 0.0;
    auto cohort = generate_cohort(spec);
    for (const auto& s : cohort) {
        const auto& bl = s.at(Timepoint::BL).item_scores;
        const auto& m24 = s.at(Timepoint::M24).item_scores;
        for (std::size_t j = 0; j < clinical::num_items; ++j) CHECK(m24[j] == bl[j]);
    }
}

TEST_CASE("synth: generated assessments satisfy range and sum") {
    auto cohort = generate_cohort(CohortSpec::adni_like());
    CHECK(clinical::validate_cohort(cohort).empty());
}

TEST_CASE("synth: item allocation sums exactly and respects maxima") {
    std::mt19937_64 rng(5);
    const auto maxima = clinical::default_item_maxima();
    for (double global : {0.0, 3.3, 20.0, 70.0, 85.0}) {
        auto items = allocate_items(global, maxima, 0.35, rng);
        double sum = 0.0;
        for (std::size_t j = 0; j < clinical::num_items; ++j) {
            CHECK(items[j] >= 0.0);
            CHECK(items[j] <= maxima[j]);
            sum += items[j];
        }
        CHECK(sum == doctest::Approx(global).epsilon(1e-9));
    }
}

TEST_CASE("synth: zero signal items give the base radius") {
    const auto plan = SignalPlan::defaults_for({32, 32, 32});
    CHECK(region_radius(subject_with_bl({}), plan) == plan.region_radius_base);
}

TEST_CASE("synth: Q1 0 vs 10 shrinks the radius by gain*10/3") {
    auto plan = SignalPlan::defaults_for({64, 64, 64});
    clinical::ItemScores a{}, b{};
    b[0] = 10.0;
    const double ra = region_radius(subject_with_bl(a), plan);
    const double rb = region_radius(subject_with_bl(b), plan);
    const double expected = plan.atrophy_gain * 10.0 / static_cast<double>(plan.signal_items.size());
    CHECK(ra - rb == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("synth: radius is non-increasing in the signal mean and floored at 1") {
    auto plan = SignalPlan::defaults_for({32, 32, 32});
    plan.atrophy_gain = 2.0;
    double previous = 1e9;
    for (double v = 0.0; v <= 10.0; v += 0.5) {
        clinical::ItemScores s{};
        s[0] = s[3] = v;
        s[7] = std::min(v, 12.0);
        const double r = region_radius(subject_with_bl(s), plan);
        CHECK(r <= previous);
        CHECK(r >= 1.0);
        previous = r;
    }
}

TEST_CASE("synth: same subject and seed give an identical volume") {
    auto cohort = generate_cohort(CohortSpec::adni_like());
    const imaging::Shape shape{16, 16, 16};
    auto plan = SignalPlan::defaults_for(shape);
    plan.gain_amplitude = 0.2;
    auto a = generate_volume(cohort[0], plan, shape, 9);
    auto b = generate_volume(cohort[0], plan, shape, 9);
    CHECK(std::equal(a.voxels().begin(), a.voxels().end(), b.voxels().begin()));
    auto c = generate_volume(cohort[0], plan, shape, 10);
    CHECK_FALSE(std::equal(a.voxels().begin(), a.voxels().end(), c.voxels().begin()));
}

TEST_CASE("synth: bright region is larger for lower signal scores") {
    const imaging::Shape shape{32, 32, 32};
    auto plan = SignalPlan::defaults_for(shape);
    plan.tissue_noise_sd = 0.0;
    clinical::ItemScores low{}, high{};
    high[0] = 10.0;
    high[3] = 10.0;
    high[7] = 12.0;
    auto count_bright = [&](const clinical::ItemScores& s) {
        auto v = generate_volume(subject_with_bl(s), plan, shape, 1);
        return std::count_if(v.voxels().begin(), v.voxels().end(), [&](double x) { return x > 0.7; });
    };
    CHECK(count_bright(low) > count_bright(high));
}

TEST_CASE("synth: region outside the grid is a config error") {
    auto plan = SignalPlan::defaults_for({16, 16, 16});
    plan.region_radius_base = 40.0;
    try {
        plan.validate({16, 16, 16});
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
    }
}

TEST_CASE("synth: spec json round trip") {
    auto spec = CohortSpec::adni_like();
    spec.noise_sd = 0.7;
    spec.groups[Diagnosis::AD].count = 3;
    auto back = cohort_spec_from_json(to_json(spec));
    CHECK(back.noise_sd == 0.7);
    CHECK(back.groups[Diagnosis::AD].count == 3);
    CHECK(back.total() == spec.total());
}
