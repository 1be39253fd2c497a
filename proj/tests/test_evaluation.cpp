#include <doctest.h>

#include <fstream>
#include <random>
#include <set>

#include "evaluation.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace adasmtl;
using namespace adasmtl::evaluation;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -10.0, double hi = 10.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

EvaluationReport fixture_report(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix truth = testsupport::random_matrix(rng, static_cast<Eigen::Index>(n), 14, 0.0, 5.0);
    Matrix pred = truth + testsupport::random_matrix(rng, static_cast<Eigen::Index>(n), 14, -1.0, 1.0);
    std::vector<SubjectInfo> info;
    for (std::size_t i = 0; i < n; ++i) info.push_back({"S" + std::to_string(i), i % 2 ? "NC" : "MCI"});
    return evaluate(info, pred, truth);
}

}  // namespace

TEST_CASE("evaluation: identical vectors give zero error and unit correlation") {
    std::vector<double> x{1.0, 2.0, 4.0, 8.0};
    CHECK(mae(x, x) == 0.0);
    CHECK(rmse(x, x) == 0.0);
    CHECK(pearson(x, x) == doctest::Approx(1.0).epsilon(1e-15));
    std::vector<double> neg{-1.0, -2.0, -4.0, -8.0};
    CHECK(pearson(x, neg) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("evaluation: hand computed mae and rmse") {
    std::vector<double> truth{0.0, 0.0};
    CHECK(mae(std::vector<double>{-2.0, 2.0}, truth) == 2.0);
    CHECK(rmse(std::vector<double>{-2.0, 2.0}, truth) == 2.0);
    CHECK(rmse(std::vector<double>{0.0, 2.0}, truth) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("evaluation: metrics match textbook oracles") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 40);
        auto p = random_vector(rng, n), t = random_vector(rng, n);
        CHECK(std::abs(mae(p, t) - oracle::mae(p, t)) <= 1e-12);
        CHECK(std::abs(rmse(p, t) - oracle::rmse(p, t)) <= 1e-12);
        CHECK(std::abs(pearson(p, t) - oracle::pearson(p, t)) <= 1e-10);
        CHECK(mae(p, t) <= rmse(p, t) + 1e-15);
    }
}

TEST_CASE("evaluation: zero variance correlation is undefined") {
    std::vector<double> flat{3.0, 3.0, 3.0}, x{1.0, 2.0, 3.0};
    try {
        pearson(flat, x);
        FAIL("expected undefined error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::undefined);
    }
    CHECK_THROWS_AS(pearson(x, flat), Error);
}

TEST_CASE("evaluation: length mismatch is a contract error") {
    std::vector<double> a{1.0, 2.0}, b{1.0};
    try {
        mae(a, b);
        FAIL("expected contract error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::contract);
    }
    CHECK_THROWS_AS(rmse(a, b), Error);
    CHECK_THROWS_AS(pearson(b, b), Error);
}

TEST_CASE("evaluation: contributions 1 1 2 give 25 25 50") {
    std::vector<double> s(13, 0.0);
    s[0] = 1.0;
    s[1] = 1.0;
    s[2] = 2.0;
    auto c = subscore_contribution(s);
    REQUIRE(c.percent.has_value());
    CHECK((*c.percent)[0] == doctest::Approx(25.0));
    CHECK((*c.percent)[1] == doctest::Approx(25.0));
    CHECK((*c.percent)[2] == doctest::Approx(50.0));
    for (std::size_t j = 3; j < 13; ++j) CHECK((*c.percent)[j] == 0.0);
}

TEST_CASE("evaluation: equal positive contributions are 100/13") {
    auto c = subscore_contribution(std::vector<double>(13, 0.7));
    for (double p : *c.percent) CHECK(p == doctest::Approx(100.0 / 13.0));
}

TEST_CASE("evaluation: single positive sub-score takes 100 percent") {
    std::vector<double> s(13, -1.0);
    s[6] = 0.3;
    auto c = subscore_contribution(s);
    CHECK((*c.percent)[6] == doctest::Approx(100.0));
}

TEST_CASE("evaluation: all non-positive predictions are degenerate") {
    auto c = subscore_contribution(std::vector<double>(13, -0.5));
    CHECK(c.degenerate);
    CHECK_FALSE(c.percent.has_value());
    CHECK_THROWS_AS(subscore_contribution(std::vector<double>(12, 1.0)), Error);
}

TEST_CASE("evaluation: contributions sum to 100 and are scale invariant") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = random_vector(rng, 13, -1.0, 5.0);
        s[static_cast<std::size_t>(trial % 13)] = 1.0;
        auto c = subscore_contribution(s);
        double sum = 0.0;
        for (double p : *c.percent) sum += p;
        CHECK(std::abs(sum - 100.0) <= 1e-9);
        std::vector<double> scaled(s);
        for (double& x : scaled) x *= 3.7;
        auto cs = subscore_contribution(scaled);
        for (std::size_t j = 0; j < 13; ++j) CHECK(std::abs((*cs.percent)[j] - (*c.percent)[j]) <= 1e-9);
    }
}

TEST_CASE("evaluation: perfect predictor report") {
    std::mt19937_64 rng(3);
    Matrix truth = testsupport::random_matrix(rng, 6, 14, 0.0, 5.0);
    std::vector<SubjectInfo> info(6, {"S", "NC"});
    auto report = evaluate(info, truth, truth);
    REQUIRE(report.outputs.size() == 14);
    CHECK(report.outputs[0].name == "global");
    CHECK(report.outputs[13].name == "Q13");
    for (const auto& o : report.outputs) {
        CHECK(o.mae == 0.0);
        CHECK(o.rmse == 0.0);
        REQUIRE(o.pearson_r.has_value());
        CHECK(*o.pearson_r == doctest::Approx(1.0));
    }
}

TEST_CASE("evaluation: constant column records an undefined correlation") {
    Matrix truth = Matrix::Zero(4, 14);
    for (Eigen::Index i = 0; i < 4; ++i) truth.row(i).setConstant(static_cast<double>(i));
    Matrix pred = truth;
    pred.col(2).setConstant(1.0);
    std::vector<SubjectInfo> info(4, {"S", "AD"});
    auto report = evaluate(info, pred, truth);
    CHECK_FALSE(report.outputs[2].pearson_r.has_value());
    CHECK_FALSE(report.outputs[2].pearson_error.empty());
    CHECK(to_json(report)["outputs"][2]["pearson_r"].is_null());
}

TEST_CASE("evaluation: mae never exceeds rmse in a report") {
    auto report = fixture_report(30, 4);
    for (const auto& o : report.outputs) CHECK(o.mae <= o.rmse);
}

TEST_CASE("evaluation: uniform contributions give 3/13 for the top three") {
    Matrix pred = Matrix::Constant(5, 14, 1.0);
    std::vector<SubjectInfo> info(5, {"S", "NC"});
    auto report = evaluate(info, pred, pred);
    auto top = dominance_report(report, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[2].cumulative_share == doctest::Approx(300.0 / 13.0));
    auto all = dominance_report(report, 13);
    CHECK(all.back().cumulative_share == doctest::Approx(100.0));
}

TEST_CASE("evaluation: Q1 Q4 Q8 fixture dominates") {
    std::mt19937_64 rng(5);
    Matrix pred = testsupport::random_matrix(rng, 8, 14, 0.0, 0.1);
    for (Eigen::Index i = 0; i < 8; ++i) {
        pred(i, 1) = 3.0 + 0.1 * static_cast<double>(i);
        pred(i, 4) = 2.5;
        pred(i, 8) = 2.0;
    }
    std::vector<SubjectInfo> info(8, {"S", "MCI"});
    auto report = evaluate(info, pred, pred);
    auto top = dominance_report(report, 3);
    std::set<std::size_t> items;
    for (const auto& e : top) items.insert(e.item);
    CHECK(items == std::set<std::size_t>{0, 3, 7});
    CHECK(top[2].cumulative_share > 80.0);
    double previous = 0.0;
    for (const auto& e : dominance_report(report, 13)) {
        CHECK(e.cumulative_share >= previous);
        previous = e.cumulative_share;
    }
}

TEST_CASE("evaluation: report json round trip") {
    auto report = fixture_report(7, 6);
    report.context = {{"seed", 3}};
    const auto j = to_json(report);
    CHECK(to_json(report_from_json(j)) == j);
}

TEST_CASE("evaluation: predictions csv has 29 columns") {
    testsupport::TempDir dir("evaluation");
    auto report = fixture_report(3, 7);
    write_predictions_csv(dir / "p.csv", report);
    std::ifstream in(dir / "p.csv");
    std::string header;
    std::getline(in, header);
    CHECK(std::count(header.begin(), header.end(), ',') == 28);
    CHECK(header.rfind("subject_id,true_global,true_Q1", 0) == 0);
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 3);
}
