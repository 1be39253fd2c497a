#include "adasmtl/adasmtl.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <new>
#include <string>

#include <spdlog/spdlog.h>

#include "clinical.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "imaging.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "synth.hpp"
#include "training.hpp"

using namespace adasmtl;
using nlohmann::json;

struct amtl_experiment {
    pipeline::ExperimentConfig config;
};

struct amtl_cohort {
    std::vector<clinical::SubjectRecord> subjects;
};

struct amtl_volume {
    imaging::Volume volume;
};

struct amtl_model {
    model::MtlModel model;
};

namespace {

thread_local std::string last_error;

amtl_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::contract: return AMTL_ERR_CONTRACT;
        case ErrorKind::config: return AMTL_ERR_CONFIG;
        case ErrorKind::io: return AMTL_ERR_IO;
        case ErrorKind::schema: return AMTL_ERR_SCHEMA;
        case ErrorKind::parse: return AMTL_ERR_PARSE;
        case ErrorKind::validation: return AMTL_ERR_VALIDATION;
        case ErrorKind::eligibility: return AMTL_ERR_ELIGIBILITY;
        case ErrorKind::registration: return AMTL_ERR_REGISTRATION;
        case ErrorKind::numeric: return AMTL_ERR_NUMERIC;
        case ErrorKind::undefined: return AMTL_ERR_UNDEFINED;
        case ErrorKind::busy: return AMTL_ERR_BUSY;
        case ErrorKind::unsupported: return AMTL_ERR_UNSUPPORTED;
    }
    return AMTL_ERR_INTERNAL;
}

amtl_status set_error(amtl_status s, const std::string& msg) {
    last_error = msg;
    return s;
}

template <class F>
amtl_status guarded(F&& f) noexcept {
    try {
        f();
        return AMTL_OK;
    } catch (const Error& e) {
        return set_error(status_of(e.kind()), e.what());
    } catch (const json::exception& e) {
        return set_error(AMTL_ERR_CONFIG, std::string("invalid JSON: ") + e.what());
    } catch (const std::bad_alloc&) {
        return set_error(AMTL_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return set_error(AMTL_ERR_INTERNAL, e.what());
    } catch (...) {
        return set_error(AMTL_ERR_INTERNAL, "unknown error");
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void need(const void* p, const char* what) {
    if (!p) fail(ErrorKind::contract, std::string(what) + " must not be NULL");
}

json parse_or_empty(const char* text) { return text ? json::parse(text) : json::object(); }

pipeline::Overrides to_overrides(const amtl_overrides* o) {
    pipeline::Overrides out;
    if (!o) return out;
    if (o->has_seed) out.seed = o->seed;
    if (o->modality) out.modality = o->modality;
    if (o->backbone) out.backbone = o->backbone;
    if (o->has_alpha) out.alpha = o->alpha;
    if (o->output_dir) out.output_dir = o->output_dir;
    return out;
}

json run_json(const pipeline::RunResult& r) {
    json stages = json::array();
    for (const auto& s : r.stages) {
        json j{{"stage", s.name}, {"status", s.status}};
        if (!s.error.empty()) j["error"] = s.error;
        stages.push_back(std::move(j));
    }
    return {{"ok", r.ok}, {"stages", std::move(stages)}, {"manifest", r.manifest}};
}

Eigen::MatrixXd rows(const double* data, std::size_t n, std::size_t cols) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i * cols + j];
    return m;
}

}  // namespace

extern "C" {

const char* amtl_version(void) { return "1.0.0"; }

const char* amtl_status_string(amtl_status status) {
    switch (status) {
        case AMTL_OK: return "ok";
        case AMTL_ERR_CONTRACT: return "contract violation";
        case AMTL_ERR_CONFIG: return "config error";
        case AMTL_ERR_IO: return "io error";
        case AMTL_ERR_SCHEMA: return "schema error";
        case AMTL_ERR_PARSE: return "parse error";
        case AMTL_ERR_VALIDATION: return "validation error";
        case AMTL_ERR_ELIGIBILITY: return "eligibility error";
        case AMTL_ERR_REGISTRATION: return "registration error";
        case AMTL_ERR_NUMERIC: return "numeric fault";
        case AMTL_ERR_UNDEFINED: return "undefined result";
        case AMTL_ERR_BUSY: return "resource busy";
        case AMTL_ERR_UNSUPPORTED: return "unsupported input";
        case AMTL_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* amtl_last_error(void) { return last_error.c_str(); }

void amtl_string_free(char* s) { std::free(s); }

void amtl_set_log_level(int level) {
    static const spdlog::level::level_enum levels[] = {spdlog::level::debug, spdlog::level::info, spdlog::level::warn,
                                                       spdlog::level::err, spdlog::level::off};
    spdlog::set_level(levels[level < 0 ? 0 : level > 4 ? 4 : level]);
}

// ---- experiments ----------------------------------------------------------

amtl_status amtl_experiment_create(const char* config_json, const amtl_overrides* overrides, amtl_experiment** out) {
    return guarded([&] {
        need(out, "out");
        *out = new amtl_experiment{pipeline::resolve_config(parse_or_empty(config_json), to_overrides(overrides))};
    });
}

amtl_status amtl_experiment_load(const char* path, const amtl_overrides* overrides, amtl_experiment** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new amtl_experiment{pipeline::load_config(path, to_overrides(overrides))};
    });
}

void amtl_experiment_free(amtl_experiment* exp) { delete exp; }

amtl_status amtl_experiment_config_json(const amtl_experiment* exp, char** out_json) {
    return guarded([&] {
        need(exp, "experiment");
        need(out_json, "out_json");
        *out_json = dup_string(pipeline::to_json(exp->config).dump(2));
    });
}

amtl_status amtl_experiment_run(amtl_experiment* exp, const char* until, char** out_json) {
    if (out_json) *out_json = nullptr;
    std::string failure_manifest;
    const auto status = guarded([&] {
        need(exp, "experiment");
        const auto stage = until ? pipeline::parse_stage(until) : pipeline::Stage::report;
        try {
            const auto result = pipeline::run_pipeline(exp->config, stage);
            if (out_json) *out_json = dup_string(run_json(result).dump(2));
        } catch (...) {
            const auto path = exp->config.output_dir / "manifest.json";
            std::ifstream in(path);
            if (in) failure_manifest.assign(std::istreambuf_iterator<char>(in), {});
            throw;
        }
    });
    if (status != AMTL_OK && out_json && !failure_manifest.empty()) {
        try {
            *out_json = dup_string(json{{"ok", false}, {"error", last_error}, {"manifest", json::parse(failure_manifest)}}.dump(2));
        } catch (...) {
        }
    }
    return status;
}

amtl_status amtl_experiment_ablate(amtl_experiment* exp, const char* variants_json, char** out_json) {
    return guarded([&] {
        need(exp, "experiment");
        auto variants = exp->config.ablation_variants;
        if (variants_json) {
            json cfg = pipeline::to_json(exp->config);
            cfg["ablation"]["variants"] = json::parse(variants_json);
            variants = pipeline::resolve_config(cfg).ablation_variants;
        }
        const auto result = pipeline::run_ablation(exp->config, variants);
        if (out_json) *out_json = dup_string(result.dump(2));
    });
}

// ---- cohorts --------------------------------------------------------------

amtl_status amtl_cohort_load_csv(const char* path, amtl_cohort** out, char** issues_json) {
    if (issues_json) *issues_json = nullptr;
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        auto loaded = clinical::load_clinical_csv(path);
        for (const auto& w : loaded.warnings) spdlog::warn("{}", w);
        if (issues_json) *issues_json = dup_string(clinical::validation_report_json(loaded.issues).dump(2));
        *out = new amtl_cohort{std::move(loaded.cohort)};
    });
}

amtl_status amtl_cohort_generate(const char* spec_json, amtl_cohort** out) {
    return guarded([&] {
        need(out, "out");
        const auto spec = spec_json ? synth::cohort_spec_from_json(json::parse(spec_json)) : synth::CohortSpec::adni_like();
        *out = new amtl_cohort{synth::generate_cohort(spec)};
    });
}

amtl_status amtl_cohort_write_csv(const amtl_cohort* cohort, const char* path) {
    return guarded([&] {
        need(cohort, "cohort");
        need(path, "path");
        clinical::write_clinical_csv(path, cohort->subjects);
    });
}

void amtl_cohort_free(amtl_cohort* cohort) { delete cohort; }

size_t amtl_cohort_size(const amtl_cohort* cohort) { return cohort ? cohort->subjects.size() : 0; }

const char* amtl_cohort_subject_id(const amtl_cohort* cohort, size_t index) {
    if (!cohort || index >= cohort->subjects.size()) return nullptr;
    return cohort->subjects[index].subject_id.c_str();
}

amtl_status amtl_cohort_features(const amtl_cohort* cohort, size_t index, double out[AMTL_NUM_FEATURES]) {
    return guarded([&] {
        need(cohort, "cohort");
        need(out, "out");
        require(index < cohort->subjects.size(), "subject index out of range");
        const auto f = clinical::build_feature_vector(cohort->subjects[index]);
        std::copy(f.begin(), f.end(), out);
    });
}

amtl_status amtl_cohort_targets(const amtl_cohort* cohort, size_t index, double out[AMTL_NUM_TARGETS]) {
    return guarded([&] {
        need(cohort, "cohort");
        need(out, "out");
        require(index < cohort->subjects.size(), "subject index out of range");
        const auto t = clinical::build_target_vector(cohort->subjects[index]);
        std::copy(t.begin(), t.end(), out);
    });
}

amtl_status amtl_cohort_split(const amtl_cohort* cohort, double split_ratio, uint64_t seed, char** out_json) {
    return guarded([&] {
        need(cohort, "cohort");
        need(out_json, "out_json");
        *out_json = dup_string(training::to_json(training::split_subjects(cohort->subjects, split_ratio, seed)).dump());
    });
}

// ---- volumes --------------------------------------------------------------

amtl_status amtl_volume_create(const size_t shape[3], const double spacing[3], const double* data, amtl_volume** out) {
    return guarded([&] {
        need(shape, "shape");
        need(data, "data");
        need(out, "out");
        const imaging::Shape s{shape[0], shape[1], shape[2]};
        const imaging::Vec3 sp = spacing ? imaging::Vec3{spacing[0], spacing[1], spacing[2]} : imaging::Vec3{1, 1, 1};
        imaging::Volume v(s, sp);
        auto vox = v.voxels();
        std::copy(data, data + vox.size(), vox.begin());
        *out = new amtl_volume{std::move(v)};
    });
}

amtl_status amtl_volume_load(const char* path, amtl_volume** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new amtl_volume{imaging::load_volume(path)};
    });
}

amtl_status amtl_volume_save(const amtl_volume* vol, const char* path) {
    return guarded([&] {
        need(vol, "volume");
        need(path, "path");
        imaging::save_volume(path, vol->volume);
    });
}

void amtl_volume_free(amtl_volume* vol) { delete vol; }

void amtl_volume_shape(const amtl_volume* vol, size_t shape[3]) {
    if (!vol || !shape) return;
    const auto s = vol->volume.shape();
    shape[0] = s[0];
    shape[1] = s[1];
    shape[2] = s[2];
}

const double* amtl_volume_data(const amtl_volume* vol) { return vol ? vol->volume.voxels().data() : nullptr; }

amtl_status amtl_volume_normalize(const amtl_volume* in, amtl_volume** out, int* degenerate) {
    return guarded([&] {
        need(in, "volume");
        need(out, "out");
        auto r = imaging::normalize_intensity(in->volume);
        if (degenerate) *degenerate = r.degenerate ? 1 : 0;
        *out = new amtl_volume{std::move(r.volume)};
    });
}

amtl_status amtl_volume_correct_bias(const amtl_volume* in, double smoothing_scale_mm, amtl_volume** out) {
    return guarded([&] {
        need(in, "volume");
        need(out, "out");
        *out = new amtl_volume{imaging::correct_bias_field(in->volume, smoothing_scale_mm)};
    });
}

amtl_status amtl_volume_foreground_cv(const amtl_volume* vol, double* out) {
    return guarded([&] {
        need(vol, "volume");
        need(out, "out");
        *out = imaging::foreground_cv(vol->volume);
    });
}

amtl_status amtl_volume_register(const amtl_volume* moving, const amtl_volume* fixed, const char* config_json,
                                 amtl_volume** out, char** transform_json) {
    if (transform_json) *transform_json = nullptr;
    return guarded([&] {
        need(moving, "moving");
        need(fixed, "fixed");
        need(out, "out");
        const auto cfg = imaging::registration_config_from_json(parse_or_empty(config_json));
        auto r = imaging::register_rigid(moving->volume, fixed->volume, cfg);
        if (transform_json) {
            *transform_json = dup_string(
                json{{"transform", imaging::to_json(r.transform)}, {"converged", r.converged}, {"ncc", r.ncc}}.dump());
        }
        *out = new amtl_volume{std::move(r.registered)};
    });
}

// ---- models ---------------------------------------------------------------

amtl_status amtl_model_create(const char* model_config_json, amtl_model** out) {
    return guarded([&] {
        need(out, "out");
        *out = new amtl_model{model::MtlModel(model::model_config_from_json(parse_or_empty(model_config_json)))};
    });
}

amtl_status amtl_model_load(const char* path, amtl_model** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new amtl_model{model::load_checkpoint(path)};
    });
}

amtl_status amtl_model_save(const amtl_model* m, const char* path) {
    return guarded([&] {
        need(m, "model");
        need(path, "path");
        model::save_checkpoint(path, m->model);
    });
}

void amtl_model_free(amtl_model* m) { delete m; }

size_t amtl_model_parameter_count(const amtl_model* m) { return m ? m->model.parameter_count() : 0; }

amtl_status amtl_model_config_json(const amtl_model* m, char** out_json) {
    return guarded([&] {
        need(m, "model");
        need(out_json, "out_json");
        *out_json = dup_string(model::to_json(m->model.config()).dump(2));
    });
}

amtl_status amtl_model_forward(const amtl_model* m, size_t batch, const double* clinical_rows,
                               const amtl_volume* const* volumes, double* out) {
    return guarded([&] {
        need(m, "model");
        need(out, "out");
        require(batch > 0, "batch must be positive");
        const auto& cfg = m->model.config();
        model::Batch b;
        b.size = batch;
        if (cfg.modality.use_clinical) {
            need(clinical_rows, "clinical (model uses the clinical modality)");
            b.clinical = rows(clinical_rows, batch, clinical::num_features);
        }
        if (cfg.modality.use_mri) {
            need(volumes, "volumes (model uses the MRI modality)");
            const auto t = static_cast<Eigen::Index>(cfg.backbone.token_count());
            b.patches.resize(t * static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(cfg.backbone.patch_volume()));
            for (std::size_t i = 0; i < batch; ++i) {
                need(volumes[i], "volume");
                b.patches.middleRows(static_cast<Eigen::Index>(i) * t, t) = model::patchify(volumes[i]->volume, cfg.backbone);
            }
        }
        const auto pred = m->model.predict(b);
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t j = 0; j < clinical::num_targets; ++j)
                out[i * clinical::num_targets + j] = pred(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    });
}

// ---- loss and metrics -----------------------------------------------------

amtl_status amtl_total_loss(const double* pred, const double* target, size_t n, double alpha, double* loss_out,
                            double* grad) {
    return guarded([&] {
        need(pred, "pred");
        need(target, "target");
        need(loss_out, "loss");
        require(n > 0, "loss requires a non-empty batch");
        const auto p = rows(pred, n, clinical::num_targets), t = rows(target, n, clinical::num_targets);
        const loss::LossConfig cfg{alpha, {}};
        *loss_out = loss::total_loss({p, t}, cfg);
        if (grad) {
            const auto g = loss::total_loss_gradient({p, t}, cfg);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < clinical::num_targets; ++j)
                    grad[i * clinical::num_targets + j] = g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    });
}

amtl_status amtl_mae(const double* pred, const double* truth, size_t n, double* out) {
    return guarded([&] {
        need(pred, "pred");
        need(truth, "truth");
        need(out, "out");
        *out = evaluation::mae({pred, n}, {truth, n});
    });
}

amtl_status amtl_rmse(const double* pred, const double* truth, size_t n, double* out) {
    return guarded([&] {
        need(pred, "pred");
        need(truth, "truth");
        need(out, "out");
        *out = evaluation::rmse({pred, n}, {truth, n});
    });
}

amtl_status amtl_pearson(const double* pred, const double* truth, size_t n, double* out) {
    return guarded([&] {
        need(pred, "pred");
        need(truth, "truth");
        need(out, "out");
        *out = evaluation::pearson({pred, n}, {truth, n});
    });
}

amtl_status amtl_subscore_contribution(const double predicted[AMTL_NUM_ITEMS], double out[AMTL_NUM_ITEMS],
                                       int* degenerate) {
    return guarded([&] {
        need(predicted, "predicted");
        need(out, "out");
        const auto c = evaluation::subscore_contribution({predicted, clinical::num_items});
        if (degenerate) *degenerate = c.degenerate ? 1 : 0;
        if (c.percent) std::copy(c.percent->begin(), c.percent->end(), out);
    });
}

}  // extern "C"
