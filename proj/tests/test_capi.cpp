#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <adasmtl/adasmtl.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace {

std::string take(char* s) {
    std::string out = s ? s : "";
    amtl_string_free(s);
    return out;
}

}  // namespace

TEST_CASE("capi: version and status strings") {
    CHECK(std::strlen(amtl_version()) > 0);
    for (int s = AMTL_OK; s <= AMTL_ERR_INTERNAL; ++s) {
        CHECK(std::strlen(amtl_status_string(static_cast<amtl_status>(s))) > 0);
    }
}

TEST_CASE("capi: generated cohort exposes features and targets") {
    amtl_cohort* cohort = nullptr;
    REQUIRE(amtl_cohort_generate(R"({"groups": {"AD": {"count": 2}, "NC": {"count": 4}, "MCI": {"count": 4}}})",
                                 &cohort) == AMTL_OK);
    CHECK(amtl_cohort_size(cohort) == 10);
    CHECK(std::string(amtl_cohort_subject_id(cohort, 0)) == "S0001");
    double features[AMTL_NUM_FEATURES], targets[AMTL_NUM_TARGETS];
    REQUIRE(amtl_cohort_features(cohort, 0, features) == AMTL_OK);
    REQUIRE(amtl_cohort_targets(cohort, 0, targets) == AMTL_OK);
    double sum = 0.0;
    for (int j = 1; j < AMTL_NUM_TARGETS; ++j) sum += targets[j];
    CHECK(std::abs(sum - targets[0]) <= 1e-9);
    CHECK(amtl_cohort_features(cohort, 10, features) == AMTL_ERR_CONTRACT);
    CHECK(std::strlen(amtl_last_error()) > 0);
    char* split = nullptr;
    REQUIRE(amtl_cohort_split(cohort, 0.8, 1, &split) == AMTL_OK);
    CHECK(take(split).find("split_hash") != std::string::npos);
    amtl_cohort_free(cohort);
}

TEST_CASE("capi: metrics and loss") {
    const double pred[3] = {1.0, 2.0, 4.0}, truth[3] = {1.0, 3.0, 2.0};
    double v = 0.0;
    REQUIRE(amtl_mae(pred, truth, 3, &v) == AMTL_OK);
    CHECK(v == doctest::Approx(1.0));
    REQUIRE(amtl_rmse(pred, truth, 3, &v) == AMTL_OK);
    CHECK(v == doctest::Approx(std::sqrt(5.0 / 3.0)));
    const double flat[3] = {2.0, 2.0, 2.0};
    CHECK(amtl_pearson(flat, truth, 3, &v) == AMTL_ERR_UNDEFINED);

    std::vector<double> p(2 * AMTL_NUM_TARGETS, 0.0), t(2 * AMTL_NUM_TARGETS, 0.0), g(2 * AMTL_NUM_TARGETS);
    p[0] = 1.0;
    p[AMTL_NUM_TARGETS] = -1.0;
    double loss = 0.0;
    REQUIRE(amtl_total_loss(p.data(), t.data(), 2, 0.0, &loss, g.data()) == AMTL_OK);
    CHECK(loss == doctest::Approx(1.0));
    CHECK(g[0] == doctest::Approx(1.0));
    CHECK(amtl_total_loss(p.data(), t.data(), 2, 1.5, &loss, nullptr) == AMTL_ERR_CONFIG);

    double items[AMTL_NUM_ITEMS] = {1.0, 1.0, 2.0}, pct[AMTL_NUM_ITEMS];
    int degenerate = 1;
    REQUIRE(amtl_subscore_contribution(items, pct, &degenerate) == AMTL_OK);
    CHECK(degenerate == 0);
    CHECK(pct[2] == doctest::Approx(50.0));
}

TEST_CASE("capi: volume normalize") {
    const std::size_t shape[3] = {3, 1, 1};
    const double data[3] = {0.0, 5.0, 10.0};
    amtl_volume *v = nullptr, *n = nullptr;
    REQUIRE(amtl_volume_create(shape, nullptr, data, &v) == AMTL_OK);
    int degenerate = 1;
    REQUIRE(amtl_volume_normalize(v, &n, &degenerate) == AMTL_OK);
    CHECK(degenerate == 0);
    const double* out = amtl_volume_data(n);
    CHECK(out[1] == 0.5);
    std::size_t s[3];
    amtl_volume_shape(n, s);
    CHECK(s[0] == 3);
    amtl_volume_free(n);
    amtl_volume_free(v);
    CHECK(amtl_volume_load("/nonexistent/x.nii", &v) == AMTL_ERR_IO);
}

TEST_CASE("capi: clinical model forward") {
    amtl_model* model = nullptr;
    REQUIRE(amtl_model_create(R"({"backbone": {"kind": "none"}, "modality": "clinical"})", &model) == AMTL_OK);
    CHECK(amtl_model_parameter_count(model) > 0);
    std::vector<double> clinical(2 * AMTL_NUM_FEATURES, 1.0), out(2 * AMTL_NUM_TARGETS, std::nan(""));
    REQUIRE(amtl_model_forward(model, 2, clinical.data(), nullptr, out.data()) == AMTL_OK);
    for (double x : out) CHECK(std::isfinite(x));
    for (int j = 0; j < AMTL_NUM_TARGETS; ++j) CHECK(out[j] == out[AMTL_NUM_TARGETS + j]);
    char* cfg = nullptr;
    REQUIRE(amtl_model_config_json(model, &cfg) == AMTL_OK);
    CHECK(take(cfg).find("clinical_dim") != std::string::npos);
    amtl_model_free(model);
    CHECK(amtl_model_create("{not json", &model) != AMTL_OK);
}

TEST_CASE("capi: experiment config resolves overrides") {
    amtl_overrides o{};
    o.has_seed = 1;
    o.seed = 9;
    o.modality = "clinical";
    amtl_experiment* exp = nullptr;
    REQUIRE(amtl_experiment_create(nullptr, &o, &exp) == AMTL_OK);
    char* cfg = nullptr;
    REQUIRE(amtl_experiment_config_json(exp, &cfg) == AMTL_OK);
    const std::string text = take(cfg);
    CHECK(text.find("\"seed\": 9") != std::string::npos);
    amtl_experiment_free(exp);
    CHECK(amtl_experiment_create("[1]", nullptr, &exp) == AMTL_ERR_CONFIG);
}

int main(int argc, char** argv) {
    amtl_set_log_level(4);
    doctest::Context context(argc, argv);
    return context.run();
}
