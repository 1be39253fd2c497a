#include "pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "error.hpp"
#include "evaluation.hpp"
#include "hash.hpp"
#include "text.hpp"

namespace adasmtl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

std::string mode_name(explain::Mode m) { return m == explain::Mode::exact ? "exact" : "sampled"; }

explain::Mode parse_mode(const std::string& s) {
    if (s == "exact") return explain::Mode::exact;
    if (s == "sampled") return explain::Mode::sampled;
    fail(ErrorKind::config, "unknown attribution mode '" + s + "' (expected exact or sampled)");
}

json variant_json(const Variant& v) {
    json j{{"modality", v.modality.label()}};
    if (v.backbone) j["backbone"] = std::string(model::to_string(*v.backbone));
    return j;
}

Variant variant_from_json(const json& j) {
    Variant v;
    if (j.is_string()) {
        v.modality = model::parse_modality(j.get<std::string>());
        return v;
    }
    v.modality = model::modality_config_from_json(j.at("modality"));
    if (j.contains("backbone")) v.backbone = model::parse_backbone_kind(j.at("backbone").get<std::string>());
    return v;
}

const json& sub(const json& j, const char* key) {
    static const json empty = json::object();
    return j.contains(key) ? j.at(key) : empty;
}

}  // namespace

std::vector<Variant> default_variants() {
    return {{model::ModalityConfig::clinical_only(), std::nullopt},
            {model::ModalityConfig::mri_only(), std::nullopt},
            {model::ModalityConfig::both(), std::nullopt}};
}

ExperimentConfig resolve_config(json raw, const Overrides& o) {
    if (raw.is_null()) raw = json::object();
    if (!raw.is_object()) fail(ErrorKind::config, "experiment config must be a JSON object");
    if (o.seed) raw["seed"] = *o.seed;
    if (o.modality) raw["model"]["modality"] = *o.modality;
    if (o.backbone) raw["model"]["backbone"] = json{{"kind", *o.backbone}};
    if (o.alpha) raw["train"]["alpha"] = *o.alpha;
    if (o.output_dir) raw["output_dir"] = *o.output_dir;

    try {
        ExperimentConfig c;
        c.seed = raw.value("seed", c.seed);
        const auto& data = sub(raw, "data");
        c.clinical_csv = data.value("clinical_csv", std::string());
        const auto& cohort = sub(data, "cohort");
        c.cohort = synth::cohort_spec_from_json(cohort);
        c.cohort.seed = cohort.contains("seed") ? cohort.at("seed").get<std::uint64_t>() : c.seed;

        const auto& img = sub(raw, "imaging");
        c.imaging.shape = img.value("shape", c.imaging.shape);
        c.imaging.spacing = img.value("spacing", c.imaging.spacing);
        c.imaging.signal_plan = synth::signal_plan_from_json(sub(img, "signal_plan"), c.imaging.shape);
        if (!sub(img, "signal_plan").contains("gain_amplitude")) c.imaging.signal_plan.gain_amplitude = 0.2;
        c.imaging.seed = img.contains("seed") ? img.at("seed").get<std::uint64_t>() : synth::mix_seed(c.seed, 4);

        const auto& pre = sub(raw, "preprocess");
        c.preprocess.register_volumes = pre.value("register", c.preprocess.register_volumes);
        c.preprocess.registration = imaging::registration_config_from_json(sub(pre, "registration"));
        c.preprocess.reference_path = pre.value("reference_path", c.preprocess.reference_path);
        c.preprocess.bias_correction = pre.value("bias_correction", c.preprocess.bias_correction);
        c.preprocess.smoothing_scale_mm = pre.value("smoothing_scale_mm", c.preprocess.smoothing_scale_mm);

        const auto& mj = sub(raw, "model");
        c.model = model::model_config_from_json(mj);
        if (!sub(mj, "backbone").contains("input_shape")) c.model.backbone.input_shape = c.imaging.shape;
        c.model.seed = mj.contains("seed") ? mj.at("seed").get<std::uint64_t>() : synth::mix_seed(c.seed, 1);

        const auto& tj = sub(raw, "train");
        c.train = training::train_config_from_json(tj);
        c.train.modality = c.model.modality;
        c.train.seed = tj.contains("seed") ? tj.at("seed").get<std::uint64_t>() : synth::mix_seed(c.seed, 2);

        const auto& ej = sub(raw, "explain");
        c.explain.target_output = ej.value("target_output", c.explain.target_output);
        c.explain.mode = parse_mode(ej.value("mode", mode_name(c.explain.mode)));
        c.explain.num_permutations = ej.value("num_permutations", c.explain.num_permutations);
        c.explain.background_size = ej.value("background_size", c.explain.background_size);
        c.explain.max_samples = ej.value("max_samples", c.explain.max_samples);
        c.explain.seed = ej.contains("seed") ? ej.at("seed").get<std::uint64_t>() : synth::mix_seed(c.seed, 3);

        const auto& aj = sub(raw, "ablation");
        if (aj.contains("variants")) {
            for (const auto& v : aj.at("variants")) c.ablation_variants.push_back(variant_from_json(v));
        } else {
            c.ablation_variants = default_variants();
        }
        c.output_dir = raw.value("output_dir", c.output_dir.string());

        c.cohort.validate();
        c.model.validate();
        c.train.validate();
        if (c.model.modality.use_mri && c.model.backbone.input_shape != c.imaging.shape) {
            fail(ErrorKind::config, "model.backbone.input_shape does not match imaging.shape");
        }
        if (c.explain.target_output >= clinical::num_targets) {
            fail(ErrorKind::config, "explain.target_output must be in 0..13");
        }
        if (c.preprocess.smoothing_scale_mm <= 0.0) fail(ErrorKind::config, "smoothing_scale_mm must be positive");
        return c;
    } catch (const json::exception& e) {
        fail(ErrorKind::config, std::string("invalid experiment config: ") + e.what());
    }
}

ExperimentConfig load_config(const fs::path& path, const Overrides& overrides) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open config " + path.string());
    json raw;
    try {
        raw = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::config, "config " + path.string() + " is not valid JSON: " + e.what());
    }
    return resolve_config(std::move(raw), overrides);
}

json to_json(const ExperimentConfig& c) {
    json variants = json::array();
    for (const auto& v : c.ablation_variants) variants.push_back(variant_json(v));
    json data{{"cohort", synth::to_json(c.cohort)}};
    if (!c.clinical_csv.empty()) data["clinical_csv"] = c.clinical_csv;
    return {{"seed", c.seed},
            {"data", std::move(data)},
            {"imaging",
             {{"shape", c.imaging.shape},
              {"spacing", c.imaging.spacing},
              {"signal_plan", synth::to_json(c.imaging.signal_plan)},
              {"seed", c.imaging.seed}}},
            {"preprocess",
             {{"register", c.preprocess.register_volumes},
              {"registration", imaging::to_json(c.preprocess.registration)},
              {"reference_path", c.preprocess.reference_path},
              {"bias_correction", c.preprocess.bias_correction},
              {"smoothing_scale_mm", c.preprocess.smoothing_scale_mm}}},
            {"model", model::to_json(c.model)},
            {"train", training::to_json(c.train)},
            {"explain",
             {{"target_output", c.explain.target_output},
              {"mode", mode_name(c.explain.mode)},
              {"num_permutations", c.explain.num_permutations},
              {"background_size", c.explain.background_size},
              {"max_samples", c.explain.max_samples},
              {"seed", c.explain.seed}}},
            {"ablation", {{"variants", std::move(variants)}}},
            {"output_dir", c.output_dir.string()}};
}

json seeds_json(const ExperimentConfig& c) {
    return {{"global", c.seed},   {"cohort", c.cohort.seed},  {"imaging", c.imaging.seed},
            {"model", c.model.seed}, {"train", c.train.seed}, {"explain", c.explain.seed}};
}

std::string_view to_string(Stage stage) noexcept {
    switch (stage) {
        case Stage::synth: return "synth";
        case Stage::preprocess: return "preprocess";
        case Stage::train: return "train";
        case Stage::evaluate: return "evaluate";
        case Stage::explain: return "explain";
        case Stage::report: return "report";
    }
    return "?";
}

Stage parse_stage(std::string_view text) {
    for (auto s : {Stage::synth, Stage::preprocess, Stage::train, Stage::evaluate, Stage::explain, Stage::report}) {
        if (to_string(s) == text) return s;
    }
    fail(ErrorKind::config, "unknown stage '" + std::string(text) + "'");
}

std::string feature_extraction_label(const Variant& v, const model::BackboneConfig& configured) {
    if (!v.modality.use_mri) return "N/A";
    const auto kind = v.backbone.value_or(configured.kind);
    return kind == model::BackboneKind::swin ? "Swin Transformer" : kind == model::BackboneKind::vit ? "ViT" : "N/A";
}

std::string input_data_label(const model::ModalityConfig& m) {
    if (m.use_mri && m.use_clinical) return "Baseline MRI + ADAS-Cog clinical scores";
    return m.use_mri ? "Baseline MRI" : "ADAS-Cog clinical scores";
}

// ---------------------------------------------------------------------------
// Stage machinery

namespace {

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) fail(ErrorKind::io, "failed writing " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::io, path.string() + " is not valid JSON: " + e.what());
    }
}

/// Exclusive ownership of an output directory for the lifetime of a run.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            if (errno == EEXIST) {
                fail(ErrorKind::busy, "output directory " + dir.string() +
                                          " is in use by another run (remove .lock if it is stale)");
            }
            fail(ErrorKind::io, "cannot create lock " + path_.string() + ": " + std::strerror(errno));
        }
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
    }
    ~DirLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

std::string key_of(const json& j) { return hash_hex(j.dump()); }

class Runner {
public:
    Runner(const ExperimentConfig& config, fs::path root)
        : config_(config), root_(std::move(root)), state_file_(root_ / "stages.json") {
        if (fs::exists(state_file_)) state_ = read_json(state_file_);
        if (!state_.is_object()) state_ = json::object();
    }

    const fs::path& root() const { return root_; }
    const ExperimentConfig& config() const { return config_; }
    RunResult& result() { return result_; }

    /// Returns true when the body ran.
    bool run(const std::string& name, const std::string& key, const std::vector<std::string>& deps,
             const std::function<std::vector<fs::path>()>& body) {
        const bool dirty = std::any_of(deps.begin(), deps.end(), [&](const auto& d) { return executed_.count(d) != 0; });
        if (!dirty && fresh(name, key)) {
            spdlog::info("stage {}: up to date, skipped", name);
            result_.stages.push_back({name, "skipped", {}});
            return false;
        }
        spdlog::info("stage {}: running", name);
        state_.erase(name);
        save_state();
        try {
            const auto outputs = body();
            json rel = json::array();
            for (const auto& p : outputs) rel.push_back(fs::relative(p, root_).generic_string());
            state_[name] = {{"key", key}, {"outputs", rel}};
            save_state();
        } catch (const std::exception& e) {
            result_.stages.push_back({name, "failed", e.what()});
            result_.ok = false;
            write_manifest();
            throw;
        }
        executed_.insert(name);
        result_.stages.push_back({name, "executed", {}});
        return true;
    }

    void not_required(const std::string& name) { result_.stages.push_back({name, "not_required", {}}); }

    void write_manifest() {
        json stages = json::object();
        json files = json::array();
        for (const auto& outcome : result_.stages) {
            if (outcome.status == "not_required") continue;
            const bool complete = state_.contains(outcome.name);
            stages[outcome.name] = {{"status", complete ? "complete" : "failed"},
                                    {"key", complete ? state_[outcome.name]["key"] : json()}};
            if (!complete) continue;
            for (const auto& rel : state_[outcome.name]["outputs"]) {
                const fs::path p = root_ / rel.get<std::string>();
                if (!fs::exists(p)) continue;
                files.push_back({{"path", rel},
                                 {"stage", outcome.name},
                                 {"fnv1a64", file_hash_hex(p)},
                                 {"bytes", fs::file_size(p)}});
            }
        }
        std::sort(files.begin(), files.end(), [](const json& a, const json& b) { return a["path"] < b["path"]; });
        result_.manifest = {{"stages", stages}, {"files", files}};
        write_json(root_ / "manifest.json", result_.manifest);
    }

    // Shared, lazily loaded inputs.
    std::vector<clinical::SubjectRecord>& cohort(bool require_mri);
    training::Dataset& dataset(const model::ModelConfig& model, bool require_mri);

private:
    bool fresh(const std::string& name, const std::string& key) const {
        if (!state_.contains(name) || state_[name].value("key", std::string()) != key) return false;
        for (const auto& rel : state_[name]["outputs"]) {
            if (!fs::exists(root_ / rel.get<std::string>())) return false;
        }
        return true;
    }
    void save_state() { write_json(state_file_, state_); }

    const ExperimentConfig& config_;
    fs::path root_;
    fs::path state_file_;
    json state_;
    RunResult result_;
    std::set<std::string> executed_;
    std::map<bool, std::vector<clinical::SubjectRecord>> cohorts_;
    std::map<std::string, training::Dataset> datasets_;
};

fs::path cohort_csv(const Runner& r) {
    return r.config().synthetic() ? r.root() / "cohort.csv" : fs::path(r.config().clinical_csv);
}

fs::path preproc_path(const fs::path& root, const std::string& id) { return root / "preproc" / (id + "_preproc.nii"); }

std::vector<clinical::SubjectRecord>& Runner::cohort(bool require_mri) {
    if (auto it = cohorts_.find(require_mri); it != cohorts_.end()) return it->second;
    const fs::path csv = cohort_csv(*this);
    auto loaded = clinical::load_clinical_csv(csv, config_.cohort.maxima);
    for (const auto& w : loaded.warnings) spdlog::warn("{}", w);
    if (!loaded.issues.empty()) {
        write_json(root_ / "validation_report.json", clinical::validation_report_json(loaded.issues));
        fail(ErrorKind::validation, std::to_string(loaded.issues.size()) + " validation issue(s) in " + csv.string() +
                                        "; see validation_report.json");
    }
    for (auto& s : loaded.cohort) {
        if (s.mri_path && s.mri_path->is_relative()) s.mri_path = csv.parent_path() / *s.mri_path;
    }
    auto eligible = clinical::eligible_subjects(loaded.cohort, require_mri);
    if (eligible.size() != loaded.cohort.size()) {
        spdlog::warn("{} of {} subjects excluded as ineligible", loaded.cohort.size() - eligible.size(),
                     loaded.cohort.size());
    }
    return cohorts_[require_mri] = std::move(eligible);
}

training::Dataset& Runner::dataset(const model::ModelConfig& model, bool require_mri) {
    const std::string key = (model.modality.use_mri ? model::to_json(model.backbone).dump() : "clinical") +
                            (require_mri ? "|mri" : "");
    if (auto it = datasets_.find(key); it != datasets_.end()) return it->second;
    const auto& subjects = cohort(require_mri);
    // Volumes are streamed so only patches stay resident.
    training::Dataset d = training::make_dataset(subjects, {}, model.backbone);
    if (model.modality.use_mri) {
        for (const auto& s : subjects) {
            const auto v = imaging::load_volume(preproc_path(root_, s.subject_id));
            d.patches.push_back(model::patchify(v, model.backbone).cast<float>());
        }
    }
    return datasets_[key] = std::move(d);
}

std::vector<std::size_t> rows_for(const training::Dataset& d, const std::vector<std::string>& ids) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < d.size(); ++i) index[d.ids[i]] = i;
    std::vector<std::size_t> rows;
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) fail(ErrorKind::validation, "split references unknown subject " + id);
        rows.push_back(it->second);
    }
    return rows;
}

training::Split read_split(const fs::path& path) {
    const auto j = read_json(path);
    training::Split s;
    s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    s.stratified = j.value("stratified", true);
    return s;
}

// ---------------------------------------------------------------------------
// Stage bodies

std::vector<fs::path> do_synth(const Runner& r, bool with_volumes) {
    const auto& c = r.config();
    auto cohort = synth::generate_cohort(c.cohort);
    std::vector<fs::path> outputs;
    if (with_volumes) {
        fs::create_directories(r.root() / "volumes");
        const auto ref = synth::reference_volume(c.imaging.signal_plan, c.imaging.shape, c.imaging.spacing);
        imaging::save_volume(r.root() / "reference.nii", ref);
        outputs.push_back(r.root() / "reference.nii");
        for (auto& s : cohort) {
            const fs::path rel = fs::path("volumes") / (s.subject_id + ".nii");
            imaging::save_volume(r.root() / rel, synth::generate_volume(s, c.imaging.signal_plan, c.imaging.shape,
                                                                         c.imaging.seed, c.imaging.spacing));
            s.mri_path = rel;
            outputs.push_back(r.root() / rel);
        }
    }
    clinical::write_clinical_csv(r.root() / "cohort.csv", cohort);
    outputs.insert(outputs.begin(), r.root() / "cohort.csv");
    json files = json::array();
    for (const auto& p : outputs) files.push_back(fs::relative(p, r.root()).generic_string());
    json manifest{{"seed", c.cohort.seed}, {"spec", synth::to_json(c.cohort)}, {"files", std::move(files)}};
    if (with_volumes) {
        manifest["imaging_seed"] = c.imaging.seed;
        manifest["signal_plan"] = synth::to_json(c.imaging.signal_plan);
    }
    write_json(r.root() / "synth_manifest.json", manifest);
    outputs.push_back(r.root() / "synth_manifest.json");
    return outputs;
}

std::vector<fs::path> do_preprocess(Runner& r) {
    const auto& c = r.config();
    const auto& p = c.preprocess;
    std::optional<imaging::Volume> reference;
    if (p.register_volumes) {
        fs::path ref = p.reference_path;
        if (ref.empty()) {
            if (!c.synthetic()) fail(ErrorKind::config, "preprocess.reference_path is required to register external data");
            ref = r.root() / "reference.nii";
        }
        reference = imaging::load_volume(ref);
    }
    fs::create_directories(r.root() / "preproc");
    std::vector<fs::path> outputs;
    for (const auto& s : r.cohort(true)) {
        imaging::Volume v = imaging::load_volume(*s.mri_path);
        json side{{"subject_id", s.subject_id}};
        if (reference) {
            imaging::RegistrationResult reg;
            try {
                reg = imaging::register_rigid(v, *reference, p.registration);
            } catch (const Error& e) {
                fail(e.kind(), "subject " + s.subject_id + ": " + e.what());
            }
            if (!reg.converged) spdlog::warn("subject {}: registration hit the iteration budget", s.subject_id);
            v = std::move(reg.registered);
            side["transform"] = imaging::to_json(reg.transform);
            side["converged"] = reg.converged;
            side["ncc"] = reg.ncc;
        } else {
            side["transform"] = imaging::to_json(imaging::RigidTransform{});
            side["converged"] = true;
        }
        side["cv_before"] = imaging::foreground_cv(v);
        if (p.bias_correction) v = imaging::correct_bias_field(v, p.smoothing_scale_mm);
        side["cv_after"] = imaging::foreground_cv(v);
        auto norm = imaging::normalize_intensity(v);
        side["degenerate_intensity"] = norm.degenerate;
        norm.volume.subject_id = s.subject_id;
        const auto out = preproc_path(r.root(), s.subject_id);
        imaging::save_volume(out, norm.volume);
        auto sidecar = out;
        sidecar.replace_extension(".json");
        write_json(sidecar, side);
        outputs.push_back(out);
        outputs.push_back(sidecar);
    }
    return outputs;
}

struct ModelRun {
    fs::path dir;
    model::ModelConfig model;
    training::TrainConfig train;
    bool require_mri = false;
    json context;  // resolved config and seeds embedded in reports
};

std::vector<fs::path> do_train(Runner& r, const ModelRun& m) {
    fs::create_directories(m.dir);
    auto& data = r.dataset(m.model, m.require_mri);
    const auto split = training::split_subjects(r.cohort(m.require_mri), m.train.split_ratio, m.train.seed);
    const auto train_set = training::subset(data, rows_for(data, split.train_ids));
    const auto val_set = training::subset(data, rows_for(data, split.val_ids));
    model::MtlModel net(m.model);
    spdlog::info("training {} model: {} parameters, {} train / {} val subjects", m.model.modality.label(),
                 net.parameter_count(), train_set.size(), val_set.size());
    const auto history = training::train(net, train_set, val_set, m.train);

    model::save_checkpoint(m.dir / "checkpoint.bin", net,
                           {{"split_hash", split.hash()}, {"best_epoch", history.best_epoch}});
    json h = m.context;
    h["split_hash"] = split.hash();
    h["history"] = training::to_json(history);
    write_json(m.dir / "history.json", h);
    write_json(m.dir / "split.json", training::to_json(split));
    return {m.dir / "checkpoint.bin", m.dir / "history.json", m.dir / "split.json"};
}

std::vector<fs::path> do_evaluate(Runner& r, const ModelRun& m) {
    const auto net = model::load_checkpoint(m.dir / "checkpoint.bin", m.model);
    const auto split = read_split(m.dir / "split.json");
    auto& data = r.dataset(m.model, m.require_mri);
    const auto val_set = training::subset(data, rows_for(data, split.val_ids));
    const auto pred = training::predict(net, val_set);
    std::vector<evaluation::SubjectInfo> info;
    for (std::size_t i = 0; i < val_set.size(); ++i) {
        info.push_back({val_set.ids[i], std::string(clinical::to_string(val_set.diagnoses[i]))});
    }
    auto report = evaluation::evaluate(info, pred, val_set.targets);
    report.context = m.context;
    report.context["split_hash"] = split.hash();
    report.context["evaluated_subset"] = "validation";
    report.context["best_epoch"] = read_json(m.dir / "history.json")["history"]["best_epoch"];
    write_json(m.dir / "report.json", evaluation::to_json(report));
    evaluation::write_predictions_csv(m.dir / "predictions.csv", report);
    return {m.dir / "report.json", m.dir / "predictions.csv"};
}

explain::Matrix inputs_for(const model::MtlModel& net, const training::Dataset& d) {
    explain::Matrix emb;
    if (net.config().modality.use_mri) {
        emb.resize(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(net.mri_embedding_width()));
        std::vector<std::size_t> rows;
        for (std::size_t start = 0; start < d.size(); start += 16) {
            rows.clear();
            for (std::size_t i = start; i < std::min(d.size(), start + 16); ++i) rows.push_back(i);
            const auto b = training::make_batch(d, rows);
            emb.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(rows.size())) =
                net.embed_patches(b.patches, rows.size());
        }
    }
    return explain::model_inputs(net, d.clinical, emb);
}

std::vector<fs::path> do_explain(Runner& r, const ModelRun& m) {
    const auto& ec = r.config().explain;
    const auto net = model::load_checkpoint(m.dir / "checkpoint.bin", m.model);
    const auto split = read_split(m.dir / "split.json");
    auto& data = r.dataset(m.model, m.require_mri);

    auto train_rows = rows_for(data, split.train_ids);
    std::mt19937_64 rng(ec.seed);
    std::shuffle(train_rows.begin(), train_rows.end(), rng);
    train_rows.resize(std::min(train_rows.size(), std::max<std::size_t>(1, ec.background_size)));
    auto val_rows = rows_for(data, split.val_ids);
    val_rows.resize(std::min(val_rows.size(), ec.max_samples));

    const auto background = inputs_for(net, training::subset(data, train_rows));
    const auto samples_ds = training::subset(data, val_rows);
    const auto samples = inputs_for(net, samples_ds);
    const auto f = explain::model_value_function(net, ec.target_output);

    std::vector<explain::Attribution> attributions;
    json items = json::array();
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        explain::AttributionConfig ac;
        ac.target_output = ec.target_output;
        ac.groups = explain::default_groups(net);
        ac.background = background;
        ac.mode = ec.mode;
        ac.num_permutations = ec.num_permutations;
        ac.seed = synth::mix_seed(ec.seed, static_cast<std::uint64_t>(i));
        attributions.push_back(
            explain::shapley_attribution(f, samples.row(i), ac, samples_ds.ids[static_cast<std::size_t>(i)]));
        items.push_back(explain::to_json(attributions.back()));
    }
    json importance = json::array();
    std::ofstream csv(m.dir / "importance.csv");
    if (!csv) fail(ErrorKind::io, "cannot write importance.csv");
    csv << "rank,group,mean_abs_shapley\n";
    if (!attributions.empty()) {
        std::size_t rank = 1;
        for (const auto& imp : explain::importance_summary(attributions)) {
            importance.push_back({{"group", imp.name}, {"mean_abs_shapley", imp.mean_abs}});
            csv << rank++ << ',' << imp.name << ',' << text::format_double(imp.mean_abs) << '\n';
        }
    }
    json out = m.context;
    out["target_output"] = evaluation::output_name(ec.target_output);
    out["background_size"] = background.rows();
    out["attributions"] = std::move(items);
    out["importance"] = std::move(importance);
    write_json(m.dir / "attributions.json", out);
    return {m.dir / "attributions.json", m.dir / "importance.csv"};
}

std::vector<fs::path> do_report(const ModelRun& m) {
    const auto report = evaluation::report_from_json(read_json(m.dir / "report.json"));
    const auto attributions = read_json(m.dir / "attributions.json");
    json metrics = json::array();
    for (const auto& o : report.outputs) {
        metrics.push_back({{"output", o.name},
                           {"mae", o.mae},
                           {"rmse", o.rmse},
                           {"pearson_r", o.pearson_r ? json(*o.pearson_r) : json()}});
    }
    json dominance = json::array();
    for (const auto& d : evaluation::dominance_report(report, 3)) {
        dominance.push_back({{"item", evaluation::output_name(d.item + 1)},
                             {"mean_contribution_pct", d.mean_contribution},
                             {"cumulative_share_pct", d.cumulative_share}});
    }
    json importance = attributions["importance"];
    if (importance.size() > 10) importance.erase(importance.begin() + 10, importance.end());
    json summary = m.context;
    summary["split_hash"] = report.context.value("split_hash", std::string());
    summary["metrics"] = std::move(metrics);
    summary["dominance_top3"] = std::move(dominance);
    summary["importance_top10"] = std::move(importance);
    write_json(m.dir / "summary.json", summary);
    return {m.dir / "summary.json"};
}

// ---------------------------------------------------------------------------

json context_for(const ExperimentConfig& c) { return {{"config", to_json(c)}, {"seeds", seeds_json(c)}}; }

std::string synth_key(const ExperimentConfig& c, bool with_volumes) {
    if (!c.synthetic()) return key_of({{"clinical_csv", c.clinical_csv}, {"content", file_hash_hex(c.clinical_csv)}});
    return key_of({{"cohort", synth::to_json(c.cohort)},
                   {"imaging", with_volumes ? to_json(c)["imaging"] : json()},
                   {"with_volumes", with_volumes}});
}

std::string preprocess_key(const ExperimentConfig& c, const std::string& upstream) {
    return key_of({{"upstream", upstream}, {"preprocess", to_json(c)["preprocess"]}});
}

std::string train_key(const ModelRun& m, const std::string& upstream) {
    return key_of({{"upstream", upstream},
                   {"model", model::to_json(m.model)},
                   {"train", training::to_json(m.train)},
                   {"require_mri", m.require_mri}});
}

/// Runs synth and, when needed, preprocess; returns (data key, stage name
/// the model stages depend on).
std::pair<std::string, std::string> prepare_data(Runner& r, bool needs_mri) {
    const auto& c = r.config();
    const std::string skey = synth_key(c, needs_mri && c.synthetic());
    if (c.synthetic()) {
        r.run("synth", skey, {}, [&] { return do_synth(r, needs_mri); });
    } else {
        r.not_required("synth");
    }
    if (!needs_mri) {
        r.not_required("preprocess");
        return {skey, "synth"};
    }
    const std::string pkey = preprocess_key(c, skey);
    r.run("preprocess", pkey, {"synth"}, [&] { return do_preprocess(r); });
    return {pkey, "preprocess"};
}

}  // namespace

RunResult run_pipeline(const ExperimentConfig& config, Stage until) {
    DirLock lock(config.output_dir);
    Runner r(config, config.output_dir);
    const bool needs_mri = config.model.modality.use_mri;
    const auto upto = [&](Stage s) { return static_cast<int>(s) <= static_cast<int>(until); };

    std::string data_key, data_stage;
    if (until == Stage::synth) {
        if (config.synthetic()) {
            r.run("synth", synth_key(config, needs_mri), {}, [&] { return do_synth(r, needs_mri); });
        }
    } else {
        std::tie(data_key, data_stage) = prepare_data(r, needs_mri);
    }

    ModelRun m{config.output_dir, config.model, config.train, needs_mri, context_for(config)};
    if (upto(Stage::train)) {
        const auto tkey = train_key(m, data_key);
        r.run("train", tkey, {data_stage}, [&] { return do_train(r, m); });
        const auto ekey = key_of({{"train", tkey}});
        const auto xkey = key_of({{"train", tkey}, {"explain", to_json(config)["explain"]}});
        if (upto(Stage::evaluate)) r.run("evaluate", ekey, {"train"}, [&] { return do_evaluate(r, m); });
        if (upto(Stage::explain)) r.run("explain", xkey, {"train"}, [&] { return do_explain(r, m); });
        if (upto(Stage::report)) {
            r.run("report", key_of({{"evaluate", ekey}, {"explain", xkey}}), {"evaluate", "explain"},
                  [&] { return do_report(m); });
        }
    }
    r.write_manifest();
    return r.result();
}

nlohmann::json run_ablation(const ExperimentConfig& config, const std::vector<Variant>& variants) {
    require(!variants.empty(), "ablation needs at least one variant");
    DirLock lock(config.output_dir);
    Runner r(config, config.output_dir);
    const bool needs_mri = std::any_of(variants.begin(), variants.end(), [](const Variant& v) { return v.modality.use_mri; });
    const auto [data_key, data_stage] = prepare_data(r, needs_mri);

    json rows = json::array();
    std::set<std::string> split_hashes;
    std::ofstream csv;
    for (const auto& v : variants) {
        ExperimentConfig vc = config;
        vc.model.modality = v.modality;
        vc.train.modality = v.modality;
        if (v.backbone && *v.backbone != config.model.backbone.kind) {
            vc.model.backbone = *v.backbone == model::BackboneKind::swin ? model::BackboneConfig::swin_defaults()
                                                                         : model::BackboneConfig::vit_defaults();
            vc.model.backbone.input_shape = config.imaging.shape;
        }
        const std::string backbone_name =
            v.modality.use_mri ? std::string(model::to_string(vc.model.backbone.kind)) : "none";
        const std::string slug = backbone_name + "_" + v.modality.label();
        json row{{"variant", slug},
                 {"Feature Extraction", feature_extraction_label(v, config.model.backbone)},
                 {"Input data", input_data_label(v.modality)}};
        try {
            vc.model.validate();
            ModelRun m{config.output_dir / "ablation" / slug, vc.model, vc.train, needs_mri, context_for(vc)};
            const auto tkey = train_key(m, data_key);
            const std::string prefix = "ablation/" + slug + "/";
            r.run(prefix + "train", tkey, {data_stage}, [&] { return do_train(r, m); });
            r.run(prefix + "evaluate", key_of({{"train", tkey}}), {prefix + "train"}, [&] { return do_evaluate(r, m); });
            const auto report = evaluation::report_from_json(read_json(m.dir / "report.json"));
            const auto& g = report.outputs.at(0);
            row["MAE"] = g.mae;
            row["RMSE"] = g.rmse;
            row["r"] = g.pearson_r ? json(*g.pearson_r) : json();
            row["split_hash"] = report.context.value("split_hash", std::string());
            split_hashes.insert(row["split_hash"].get<std::string>());
            row["status"] = "ok";
        } catch (const std::exception& e) {
            spdlog::error("ablation variant {} failed: {}", slug, e.what());
            row["status"] = "error";
            row["error"] = e.what();
        }
        rows.push_back(std::move(row));
    }

    json out = context_for(config);
    out["columns"] = {"Feature Extraction", "Input data", "MAE", "RMSE", "r"};
    out["rows"] = rows;
    out["shared_split"] = split_hashes.size() <= 1;
    write_json(config.output_dir / "ablation.json", out);

    csv.open(config.output_dir / "ablation.csv");
    if (!csv) fail(ErrorKind::io, "cannot write ablation.csv");
    csv << "Feature Extraction,Input data,MAE,RMSE,r,split_hash,status\n";
    auto num = [](const json& v) { return v.is_number() ? text::format_double(v.get<double>()) : std::string("NA"); };
    for (const auto& row : rows) {
        csv << row["Feature Extraction"].get<std::string>() << ',' << row["Input data"].get<std::string>() << ','
            << num(row.value("MAE", json())) << ',' << num(row.value("RMSE", json())) << ','
            << num(row.value("r", json())) << ',' << row.value("split_hash", std::string()) << ','
            << row["status"].get<std::string>() << '\n';
    }
    r.write_manifest();
    return out;
}

}  // namespace adasmtl::pipeline
