#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adasmtl/adasmtl.h"

namespace {

struct CommonOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string modality;
    std::string backbone;
    std::optional<double> alpha;
    bool verbose = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--seed", o.seed, "Global seed");
    cmd->add_option("--modality", o.modality, "Input modalities")->check(CLI::IsMember({"clinical", "mri", "both"}));
    cmd->add_option("--backbone", o.backbone, "Feature extractor")->check(CLI::IsMember({"vit", "swin", "none"}));
    cmd->add_option("--alpha", o.alpha, "Sub-score loss weight in [0, 1]");
    cmd->add_flag("-v,--verbose", o.verbose, "Debug logging");
    cmd->add_flag("-q,--quiet", o.quiet, "Errors only");
}

int report_failure(amtl_status s, const char* what) {
    std::fprintf(stderr, "adasmtl: %s failed (%s): %s\n", what, amtl_status_string(s), amtl_last_error());
    return static_cast<int>(s);
}

void print_and_free(char* text) {
    if (!text) return;
    std::puts(text);
    amtl_string_free(text);
}

std::string variants_json(const std::vector<std::string>& specs) {
    // "mri" or "swin:both"
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        const auto colon = s.find(':');
        if (i) out << ',';
        if (colon == std::string::npos) {
            out << '"' << s << '"';
        } else {
            out << "{\"backbone\":\"" << s.substr(0, colon) << "\",\"modality\":\"" << s.substr(colon + 1) << "\"}";
        }
    }
    out << ']';
    return out.str();
}

int open_experiment(const CommonOptions& o, amtl_experiment** exp) {
    amtl_set_log_level(o.quiet ? 3 : o.verbose ? 0 : 1);
    amtl_overrides ov{};
    if (o.seed) {
        ov.has_seed = 1;
        ov.seed = *o.seed;
    }
    if (!o.modality.empty()) ov.modality = o.modality.c_str();
    if (!o.backbone.empty()) ov.backbone = o.backbone.c_str();
    if (o.alpha) {
        ov.has_alpha = 1;
        ov.alpha = *o.alpha;
    }
    if (!o.out.empty()) ov.output_dir = o.out.c_str();
    const auto s = o.config.empty() ? amtl_experiment_create(nullptr, &ov, exp)
                                    : amtl_experiment_load(o.config.c_str(), &ov, exp);
    return s == AMTL_OK ? 0 : report_failure(s, "loading config");
}

int run_stage(const CommonOptions& o, const char* stage) {
    amtl_experiment* exp = nullptr;
    if (int rc = open_experiment(o, &exp)) return rc;
    char* result = nullptr;
    const auto s = amtl_experiment_run(exp, stage, &result);
    print_and_free(result);
    amtl_experiment_free(exp);
    return s == AMTL_OK ? 0 : report_failure(s, stage);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-task ADAS-Cog prediction from MRI and clinical scores"};
    app.require_subcommand(1);
    app.set_version_flag("--version", amtl_version());

    struct Command {
        const char* name;
        const char* help;
        const char* stage;
    };
    const Command stage_commands[] = {
        {"synth", "Generate the synthetic cohort and volumes", "synth"},
        {"preprocess", "Register, bias-correct and normalize volumes", "preprocess"},
        {"train", "Train the multi-task model", "train"},
        {"evaluate", "Evaluate on the validation split", "evaluate"},
        {"explain", "Shapley attributions for the trained model", "explain"},
        {"run", "Run every stage and write the report", "report"},
    };

    std::vector<CommonOptions> options(std::size(stage_commands) + 2);
    std::vector<CLI::App*> commands;
    for (std::size_t i = 0; i < std::size(stage_commands); ++i) {
        auto* cmd = app.add_subcommand(stage_commands[i].name, stage_commands[i].help);
        add_common(cmd, options[i]);
        commands.push_back(cmd);
    }

    auto& ablate_opts = options[std::size(stage_commands)];
    std::vector<std::string> variants;
    auto* ablate = app.add_subcommand("ablate", "Train one model per modality variant on a shared split");
    add_common(ablate, ablate_opts);
    ablate->add_option("--variants", variants, "Variants such as clinical mri both or swin:both")->delimiter(',');

    auto& config_opts = options[std::size(stage_commands) + 1];
    auto* show = app.add_subcommand("config", "Print the fully resolved config");
    add_common(show, config_opts);

    CLI11_PARSE(app, argc, argv);

    for (std::size_t i = 0; i < commands.size(); ++i) {
        if (*commands[i]) return run_stage(options[i], stage_commands[i].stage);
    }

    amtl_experiment* exp = nullptr;
    if (*ablate) {
        if (int rc = open_experiment(ablate_opts, &exp)) return rc;
        const std::string v = variants_json(variants);
        char* result = nullptr;
        const auto s = amtl_experiment_ablate(exp, variants.empty() ? nullptr : v.c_str(), &result);
        print_and_free(result);
        amtl_experiment_free(exp);
        return s == AMTL_OK ? 0 : report_failure(s, "ablate");
    }
    if (int rc = open_experiment(config_opts, &exp)) return rc;
    char* text = nullptr;
    const auto s = amtl_experiment_config_json(exp, &text);
    print_and_free(text);
    amtl_experiment_free(exp);
    return s == AMTL_OK ? 0 : report_failure(s, "config");
}
