#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "evaluation.hpp"
#include "explain.hpp"
#include "imaging.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "oracles.hpp"
#include "phantoms.hpp"
#include "pipeline.hpp"
#include "support.hpp"
#include "synth.hpp"
#include "training.hpp"

using namespace adasmtl;
using Matrix = Eigen::MatrixXd;
using nlohmann::json;

namespace {

/// Collects failed expectations and measured values for one criterion.
class Check {
public:
    void expect(bool cond, const std::string& what) {
        if (!cond && failures_.size() < 8) failures_.push_back(what);
        if (!cond) ok_ = false;
    }
    void note(const std::string& text) { notes_.push_back(text); }
    bool ok() const { return ok_; }
    std::string detail() const {
        std::string out;
        for (const auto& n : notes_) out += (out.empty() ? "" : "; ") + n;
        for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + std::string("failed: ") + f;
        return out;
    }

private:
    bool ok_ = true;
    std::vector<std::string> failures_, notes_;
};

std::string fmt_num(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

std::pair<Matrix, Matrix> random_batch(std::mt19937_64& rng, Eigen::Index n) {
    return {testsupport::random_matrix(rng, n, 14, -5.0, 30.0), testsupport::random_matrix(rng, n, 14, 0.0, 30.0)};
}

void loss_oracles(Check& c) {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> size(1, 64);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto [pred, truth] = random_batch(rng, size(rng));
        const double alpha = unit(rng);
        const loss::PredictionBatch b{pred, truth};
        worst = std::max({worst, rel_err(loss::mse_global(b), oracle::mse_global(pred, truth)),
                          rel_err(loss::mse_subscores(b), oracle::mse_subscores(pred, truth)),
                          rel_err(loss::total_loss(b, {alpha, {}}), oracle::total_loss(pred, truth, alpha))});
        c.expect(loss::total_loss(b, {0.0, {}}) == loss::mse_global(b), "alpha 0 equals mse_global");
        c.expect(loss::total_loss(b, {1.0, {}}) == loss::mse_subscores(b), "alpha 1 equals mse_subscores");
    }
    c.expect(worst <= 1e-9, "relative error " + fmt_num(worst) + " > 1e-9");
    c.note("max relative error " + fmt_num(worst, 3));
}

void gradient_check(Check& c) {
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<int> size(1, 32);
    const double h = 1e-4;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        auto [pred, truth] = random_batch(rng, size(rng));
        const loss::LossConfig cfg{0.1 + 0.04 * trial, {}};
        const Matrix grad = loss::total_loss_gradient({pred, truth}, cfg);
        for (Eigen::Index i = 0; i < pred.rows(); ++i) {
            for (Eigen::Index j = 0; j < pred.cols(); ++j) {
                Matrix plus = pred, minus = pred;
                plus(i, j) += h;
                minus(i, j) -= h;
                const double fd =
                    (loss::total_loss({plus, truth}, cfg) - loss::total_loss({minus, truth}, cfg)) / (2.0 * h);
                worst = std::max(worst, std::abs(grad(i, j) - fd) / std::max(std::abs(fd), 1e-8));
            }
        }
    }
    c.expect(worst <= 1e-3, "relative error " + fmt_num(worst) + " > 1e-3");
    c.note("max relative error " + fmt_num(worst, 3));
}

void metric_oracles(Check& c) {
    std::mt19937_64 rng(303);
    std::uniform_int_distribution<int> size(2, 200);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> p(static_cast<std::size_t>(size(rng))), t(p.size());
        for (auto& x : p) x = u(rng);
        for (auto& x : t) x = u(rng);
        worst = std::max({worst, std::abs(evaluation::mae(p, t) - oracle::mae(p, t)),
                          std::abs(evaluation::rmse(p, t) - oracle::rmse(p, t)),
                          std::abs(evaluation::pearson(p, t) - oracle::pearson(p, t))});
        c.expect(evaluation::mae(p, t) <= evaluation::rmse(p, t), "mae <= rmse");
        std::vector<double> neg(p);
        for (auto& x : neg) x = -x;
        c.expect(std::abs(evaluation::pearson(p, p) - 1.0) <= 1e-12, "pearson(x,x) = 1");
        c.expect(std::abs(evaluation::pearson(p, neg) + 1.0) <= 1e-12, "pearson(x,-x) = -1");
    }
    c.expect(worst <= 1e-10, "absolute error " + fmt_num(worst) + " > 1e-10");
    bool undefined = false;
    try {
        evaluation::pearson(std::vector<double>{1.0, 1.0, 1.0}, std::vector<double>{1.0, 2.0, 3.0});
    } catch (const Error& e) {
        undefined = e.kind() == ErrorKind::undefined;
    }
    c.expect(undefined, "zero variance raises the undefined error");
    c.note("max error " + fmt_num(worst, 3));
}

void split_integrity(Check& c) {
    const auto cohort = synth::generate_cohort(synth::CohortSpec::adni_like());
    std::map<std::string, clinical::Diagnosis> dx;
    std::map<clinical::Diagnosis, double> group_size;
    for (const auto& s : cohort) {
        dx[s.subject_id] = s.diagnosis;
        group_size[s.diagnosis] += 1.0;
    }
    c.expect(cohort.size() == 435, "cohort has 435 subjects");
    c.expect(group_size[clinical::Diagnosis::AD] == 17 && group_size[clinical::Diagnosis::NC] == 203 &&
                 group_size[clinical::Diagnosis::MCI] == 215,
             "group counts 17/203/215");
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const double ratio = 0.8;
        const auto split = training::split_subjects(cohort, ratio, seed);
        std::set<std::string> tr(split.train_ids.begin(), split.train_ids.end());
        std::set<std::string> va(split.val_ids.begin(), split.val_ids.end());
        bool disjoint = true;
        std::map<clinical::Diagnosis, double> val_count;
        for (const auto& id : va) {
            disjoint = disjoint && tr.count(id) == 0;
            ++val_count[dx.at(id)];
        }
        std::set<std::string> all(tr);
        all.insert(va.begin(), va.end());
        c.expect(disjoint, "seed " + std::to_string(seed) + " disjoint");
        c.expect(all.size() == cohort.size() && tr.size() + va.size() == cohort.size(),
                 "seed " + std::to_string(seed) + " covers the cohort");
        for (const auto& [group, n] : group_size) {
            worst = std::max(worst, std::abs(val_count[group] - (1.0 - ratio) * n));
        }
    }
    c.expect(worst <= 1.0, "per-group deviation " + fmt_num(worst) + " subjects");
    c.note("max per-group deviation " + fmt_num(worst) + " subjects over 50 seeds");
}

void preprocessing(Check& c) {
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> u(-100.0, 400.0);
    for (int trial = 0; trial < 100; ++trial) {
        imaging::Volume v({9, 8, 7});
        for (double& x : v.voxels()) x = u(rng);
        const auto once = imaging::normalize_intensity(v).volume;
        const auto [lo, hi] = std::minmax_element(once.voxels().begin(), once.voxels().end());
        c.expect(*lo == 0.0 && *hi == 1.0, "normalized range is [0,1]");
        const auto twice = imaging::normalize_intensity(once).volume;
        double drift = 0.0;
        bool monotone = true;
        for (std::size_t i = 0; i < v.size(); ++i) {
            drift = std::max(drift, std::abs(twice.voxels()[i] - once.voxels()[i]));
            for (std::size_t k : {i / 2, (i * 7) % v.size()}) {
                if (v.voxels()[k] < v.voxels()[i]) monotone = monotone && once.voxels()[k] <= once.voxels()[i];
            }
        }
        c.expect(drift <= 1e-12, "normalize is idempotent");
        c.expect(monotone, "normalize is monotone");
    }

    const auto phantom = testsupport::planted_gain_phantom(64);
    const auto mask = imaging::foreground_mask(phantom);
    const double before = imaging::foreground_cv(phantom, &mask);
    const double after = imaging::foreground_cv(imaging::correct_bias_field(phantom, 20.0), &mask);
    const double reduction = 1.0 - after / before;
    c.expect(reduction >= 0.5, "CV reduction " + fmt_num(reduction));
    c.note("bias CV " + fmt_num(before, 3) + " -> " + fmt_num(after, 3));

    const auto moving = testsupport::blob_phantom(64);
    const double sp = moving.spacing[0];
    imaging::RigidTransform shift;
    shift.translation = {4.0 * sp, -2.0 * sp, 1.0 * sp};
    const auto r = imaging::register_rigid(moving, imaging::apply_transform(moving, shift));
    const imaging::Vec3 expected{4.0, -2.0, 1.0};
    double shift_err = 0.0;
    for (std::size_t a = 0; a < 3; ++a) shift_err = std::max(shift_err, std::abs(r.transform.translation[a] / sp - expected[a]));
    c.expect(shift_err <= 1.0, "shift error " + fmt_num(shift_err) + " voxels");

    double angle_err = 0.0;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        imaging::RigidTransform rot;
        rot.rotation[axis] = 5.0 * std::numbers::pi / 180.0;
        const auto rr = imaging::register_rigid(moving, imaging::apply_transform(moving, rot));
        angle_err = std::max(angle_err, std::abs(rr.transform.rotation[axis] * 180.0 / std::numbers::pi - 5.0));
    }
    c.expect(angle_err <= 1.0, "rotation error " + fmt_num(angle_err) + " deg");
    c.note("shift error " + fmt_num(shift_err, 3) + " vox, rotation error " + fmt_num(angle_err, 3) + " deg");
}

void architecture(Check& c) {
    for (std::size_t n : {32u, 64u}) {
        for (std::size_t p : {4u, 8u, 16u}) {
            auto b = model::BackboneConfig::vit_defaults();
            b.input_shape = {n, n, n};
            b.patch_size = p;
            const std::size_t expected = (n / p) * (n / p) * (n / p);
            c.expect(b.token_count() == expected, "vit token count");
            const auto tokens = model::patchify(imaging::Volume(b.input_shape), b);
            c.expect(static_cast<std::size_t>(tokens.rows()) == expected, "patchify rows");
            c.expect(static_cast<std::size_t>(tokens.cols()) == p * p * p, "patch width");
        }
    }

    auto s = model::BackboneConfig::swin_defaults();
    s.input_shape = {64, 64, 64};
    s.patch_size = 4;
    s.window_size = 4;
    s.stages = 3;
    const auto shapes = s.stage_shapes();
    c.expect(shapes.size() == 3, "three swin stages");
    for (std::size_t k = 1; k < shapes.size(); ++k) {
        for (std::size_t a = 0; a < 3; ++a) c.expect(shapes[k].first[a] * 2 == shapes[k - 1].first[a], "grid halves");
        c.expect(shapes[k].second == 2 * shapes[k - 1].second, "width doubles");
    }

    for (auto kind : {model::BackboneKind::vit, model::BackboneKind::swin}) {
        model::ModelConfig cfg;
        cfg.backbone = kind == model::BackboneKind::vit ? model::BackboneConfig::vit_defaults()
                                                        : model::BackboneConfig::swin_defaults();
        cfg.backbone.input_shape = {16, 16, 16};
        cfg.backbone.patch_size = kind == model::BackboneKind::vit ? 4 : 2;
        cfg.backbone.embed_dim = 8;
        cfg.backbone.depth = 1;
        cfg.backbone.num_heads = 2;
        if (kind == model::BackboneKind::swin) {
            cfg.backbone.window_size = 4;
            cfg.backbone.stages = 2;
        }
        cfg.modality = model::ModalityConfig::both();
        cfg.clinical_dim = 8;
        cfg.trunk_width = 12;
        model::MtlModel m(cfg);
        std::mt19937_64 rng(606);
        model::Batch batch;
        batch.size = 3;
        const auto& bb = cfg.backbone;
        batch.patches = testsupport::random_matrix(rng, static_cast<Eigen::Index>(3 * bb.token_count()),
                                                   static_cast<Eigen::Index>(bb.patch_volume()), 0.0, 1.0);
        batch.clinical = testsupport::random_matrix(rng, 3, 26, 0.0, 5.0);
        const Matrix targets = testsupport::random_matrix(rng, 3, 14, 1.0, 6.0);
        const auto before = m.parameters().snapshot();
        training::Adam adam(m.parameters(), 1e-3);
        const double loss = training::train_step(m, adam, batch, targets, {});
        c.expect(loss > 0.0, "nonzero loss");
        std::set<std::string> changed_heads;
        bool trunk_changed = false;
        for (std::size_t i = 0; i < m.parameters().size(); ++i) {
            const auto& p = m.parameters()[i];
            const bool changed = p.value != before[i];
            if (p.name.rfind("head.", 0) == 0 && changed) changed_heads.insert(p.name.substr(0, 7));
            if (p.name.rfind("trunk.", 0) == 0) trunk_changed = trunk_changed || changed;
        }
        const std::string k(model::to_string(kind));
        c.expect(changed_heads.size() == 14, k + ": all 14 heads changed (" + std::to_string(changed_heads.size()) + ")");
        c.expect(trunk_changed, k + ": trunk changed");
    }
}

void learnability(Check& c) {
    testsupport::TempDir dir("acceptance_learn");
    json raw{{"imaging", {{"shape", {32, 32, 32}}}},
             {"model", {{"backbone", {{"kind", "vit"}, {"patch_size", 8}, {"depth", 2}}}}},
             {"output_dir", dir.path().string()}};
    const auto config = pipeline::resolve_config(raw);
    const auto out = pipeline::run_ablation(config, pipeline::default_variants());
    std::map<std::string, double> r;
    for (const auto& row : out["rows"]) {
        const std::string label = row["variant"].get<std::string>();
        c.expect(row["status"] == "ok", label + " trained");
        r[label] = row.value("r", json()).is_number() ? row["r"].get<double>() : -2.0;
    }
    c.expect(out["shared_split"].get<bool>(), "variants share one split");
    const double clin = r.count("none_clinical") ? r["none_clinical"] : -2.0;
    const double mri = r.count("vit_mri") ? r["vit_mri"] : -2.0;
    const double both = r.count("vit_both") ? r["vit_both"] : -2.0;
    c.expect(clin >= 0.7, "clinical r " + fmt_num(clin) + " < 0.7");
    c.expect(both >= clin - 0.05, "combined r " + fmt_num(both) + " < clinical r - 0.05");
    c.expect(mri >= 0.3, "MRI-only r " + fmt_num(mri) + " < 0.3");
    std::string labels;
    for (const auto& [k, v] : r) labels += k + " r=" + fmt_num(v, 3) + ", ";
    c.note(labels.substr(0, labels.size() > 2 ? labels.size() - 2 : 0));
}

void contributions(Check& c) {
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> u(-2.0, 6.0), scale(0.01, 100.0);
    double worst_sum = 0.0, worst_scale = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> s(13);
        for (auto& x : s) x = u(rng);
        s[static_cast<std::size_t>(trial % 13)] = 0.5;
        const auto base = evaluation::subscore_contribution(s);
        if (!base.percent) {
            c.expect(false, "positive sub-score gave a degenerate result");
            continue;
        }
        double sum = 0.0;
        for (double p : *base.percent) sum += p;
        worst_sum = std::max(worst_sum, std::abs(sum - 100.0));
        const double k = scale(rng);
        std::vector<double> scaled(s);
        for (auto& x : scaled) x *= k;
        const auto sc = evaluation::subscore_contribution(scaled);
        for (std::size_t j = 0; j < 13; ++j) worst_scale = std::max(worst_scale, std::abs((*sc.percent)[j] - (*base.percent)[j]));
    }
    c.expect(worst_sum <= 1e-9, "sum deviation " + fmt_num(worst_sum));
    c.expect(worst_scale <= 1e-9, "scale deviation " + fmt_num(worst_scale));

    Matrix pred = testsupport::random_matrix(rng, 10, 14, 0.0, 0.15);
    for (Eigen::Index i = 0; i < 10; ++i) {
        pred(i, 1) = 3.0 + 0.05 * static_cast<double>(i);
        pred(i, 4) = 2.5;
        pred(i, 8) = 1.8;
    }
    std::vector<evaluation::SubjectInfo> info(10, {"S", "MCI"});
    const auto top = evaluation::dominance_report(evaluation::evaluate(info, pred, pred), 3);
    std::set<std::size_t> items;
    for (const auto& e : top) items.insert(e.item);
    c.expect(items == std::set<std::size_t>{0, 3, 7}, "Q1/Q4/Q8 ranked on top");
    c.expect(!top.empty() && top.back().cumulative_share > 80.0, "cumulative share above 80%");
    if (!top.empty()) c.note("top-3 share " + fmt_num(top.back().cumulative_share) + "%");
}

/// Ten inputs with pairwise and higher-order interactions; input 9 is ignored
/// and inputs 3 and 4 enter symmetrically.
Eigen::VectorXd shapley_model(const Matrix& x) {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        out(i) = 1.2 * x(i, 0) - 0.8 * x(i, 1) + x(i, 0) * x(i, 2) + std::tanh(x(i, 3) + x(i, 4)) +
                 x(i, 3) * x(i, 4) + 0.5 * x(i, 5) * x(i, 6) * x(i, 7) + std::sin(x(i, 1) + x(i, 8)) +
                 0.3 * x(i, 8) * x(i, 8);
    }
    return out;
}

void shapley(Check& c) {
    std::mt19937_64 rng(909);
    const std::size_t width = 10;
    std::vector<explain::FeatureGroup> groups;
    for (std::size_t j = 0; j < width; ++j) groups.push_back({"x" + std::to_string(j), {j}});
    double worst_eff = 0.0, worst_sym = 0.0, worst_null = 0.0, worst_sampled = 0.0, worst_linear = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        explain::AttributionConfig cfg;
        cfg.groups = groups;
        cfg.background = testsupport::random_matrix(rng, 8, static_cast<Eigen::Index>(width));
        cfg.background.col(4) = cfg.background.col(3);
        cfg.mode = explain::Mode::exact;
        cfg.seed = 31 + static_cast<std::uint64_t>(trial);
        Eigen::RowVectorXd sample = testsupport::random_matrix(rng, 1, static_cast<Eigen::Index>(width));
        sample(4) = sample(3);
        const auto exact = explain::shapley_attribution(shapley_model, sample, cfg);
        double total = exact.base_value;
        for (double v : exact.values) total += v;
        worst_eff = std::max(worst_eff, std::abs(total - exact.output));
        worst_sym = std::max(worst_sym, std::abs(exact.values[3] - exact.values[4]));
        worst_null = std::max(worst_null, std::abs(exact.values[9]));

        cfg.mode = explain::Mode::sampled;
        cfg.num_permutations = 200;
        const auto sampled = explain::shapley_attribution(shapley_model, sample, cfg);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            num += std::abs(sampled.values[j] - exact.values[j]);
            den += std::abs(exact.values[j]);
        }
        worst_sampled = std::max(worst_sampled, num / den);

        const Eigen::VectorXd w = testsupport::random_matrix(rng, static_cast<Eigen::Index>(width), 1, -2.0, 2.0);
        explain::ValueModel linear = [&](const Matrix& x) -> Eigen::VectorXd { return (x * w).array() - 0.5; };
        cfg.mode = explain::Mode::exact;
        const auto lin = explain::shapley_attribution(linear, sample, cfg);
        const Eigen::RowVectorXd mean = cfg.background.colwise().mean();
        for (std::size_t j = 0; j < width; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            worst_linear = std::max(worst_linear, std::abs(lin.values[j] - w(jj) * (sample(jj) - mean(jj))));
        }
    }
    c.expect(worst_eff <= 1e-9, "efficiency " + fmt_num(worst_eff));
    c.expect(worst_sym <= 1e-9, "symmetry " + fmt_num(worst_sym));
    c.expect(worst_null <= 1e-12, "null player " + fmt_num(worst_null));
    c.expect(worst_sampled <= 0.05, "sampled relative error " + fmt_num(worst_sampled));
    c.expect(worst_linear <= 1e-12, "linear closed form " + fmt_num(worst_linear));
    c.note("sampled L1 relative error " + fmt_num(worst_sampled, 3) + ", linear error " + fmt_num(worst_linear, 3));
}

json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

void reproducibility(Check& c) {
    testsupport::TempDir dir("acceptance_repro");
    json raw = json::parse(R"({
        "seed": 5,
        "data": {"cohort": {"groups": {"AD": {"count": 8}, "NC": {"count": 16}, "MCI": {"count": 16}}}},
        "imaging": {"shape": [16, 16, 16]},
        "model": {"backbone": {"kind": "vit", "patch_size": 4, "embed_dim": 8, "depth": 1, "num_heads": 2},
                  "clinical_dim": 8, "trunk_width": 8},
        "train": {"max_epochs": 5},
        "explain": {"max_samples": 2, "num_permutations": 10, "background_size": 4}
    })");
    std::vector<json> reports;
    for (const char* run : {"a", "b"}) {
        raw["output_dir"] = (dir / run).string();
        const auto config = pipeline::resolve_config(raw);
        pipeline::run_pipeline(config);
        reports.push_back(read_json(dir / run / "report.json"));
    }
    const bool loose = pipeline::resolve_config(raw).train.nondeterministic_backend;
    const auto& a = reports[0]["outputs"];
    const auto& b = reports[1]["outputs"];
    c.expect(a.size() == 14 && a.size() == b.size(), "14 outputs in both reports");
    std::size_t compared = 0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        for (const char* key : {"mae", "rmse", "pearson_r"}) {
            const auto& x = a[i][key];
            const auto& y = b[i][key];
            ++compared;
            if (loose && x.is_number() && y.is_number()) {
                c.expect(std::abs(x.get<double>() - y.get<double>()) <= 1e-7, a[i]["name"].get<std::string>() + " " + key);
            } else {
                c.expect(x == y, a[i]["name"].get<std::string>() + " " + key + " differs");
            }
        }
    }
    c.note(std::to_string(compared) + " metric values compared " + (loose ? "within 1e-7" : "bitwise"));
}

struct Criterion {
    int id;
    std::string name;
    std::function<void(Check&)> run;
    double budget_seconds;  // zero means no runtime bound
};

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::err);
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    const std::vector<Criterion> criteria{
        {1, "loss oracle equivalence", loss_oracles, 5.0},
        {2, "gradient correctness", gradient_check, 30.0},
        {3, "metric oracles", metric_oracles, 5.0},
        {4, "split integrity", split_integrity, 0.0},
        {5, "preprocessing contracts", preprocessing, 120.0},
        {6, "architecture shape and gradient checks", architecture, 0.0},
        {7, "synthetic end-to-end learnability", learnability, 900.0},
        {8, "contribution analysis", contributions, 0.0},
        {9, "Shapley axioms", shapley, 60.0},
        {10, "reproducibility", reproducibility, 0.0},
    };

    int failed = 0;
    for (const auto& cr : criteria) {
        if (!only.empty() && !only.count(cr.id)) continue;
        Check check;
        const auto start = std::chrono::steady_clock::now();
        try {
            cr.run(check);
        } catch (const std::exception& e) {
            check.expect(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (cr.budget_seconds > 0.0) {
            check.expect(secs <= cr.budget_seconds, "runtime over " + fmt_num(cr.budget_seconds) + " s");
        }
        if (!check.ok()) ++failed;
        std::printf("%s  [%2d] %-40s %8.2fs  %s\n", check.ok() ? "PASS" : "FAIL", cr.id, cr.name.c_str(), secs,
                    check.detail().c_str());
        std::fflush(stdout);
    }
    std::printf("%d criterion(s) failed\n", failed);
    return failed == 0 ? 0 : 1;
}
