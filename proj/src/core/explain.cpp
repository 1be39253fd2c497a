#include "explain.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <random>
#include <unordered_map>

#include "error.hpp"
#include "synth.hpp"

namespace adasmtl::explain {

void AttributionConfig::validate(std::size_t width) const {
    if (groups.empty()) fail(ErrorKind::config, "attribution needs at least one feature group");
    if (mode == Mode::exact && groups.size() > max_exact_groups) {
        fail(ErrorKind::config, "exact mode supports at most " + std::to_string(max_exact_groups) + " groups, got " +
                                    std::to_string(groups.size()) + "; use sampled mode");
    }
    if (mode == Mode::sampled && num_permutations < 1) fail(ErrorKind::config, "num_permutations must be >= 1");
    if (background.rows() < 1) fail(ErrorKind::config, "attribution background must be non-empty");
    if (background.cols() != static_cast<Eigen::Index>(width)) {
        fail(ErrorKind::config, "background width does not match the sample");
    }
    std::vector<int> seen(width, 0);
    for (const auto& g : groups) {
        for (std::size_t c : g.columns) {
            if (c >= width) fail(ErrorKind::config, "group " + g.name + " references column " + std::to_string(c));
            ++seen[c];
        }
    }
    for (std::size_t c = 0; c < width; ++c) {
        if (seen[c] != 1) fail(ErrorKind::config, "feature groups must partition the input; column " +
                                                      std::to_string(c) + " is covered " + std::to_string(seen[c]) +
                                                      " times");
    }
}

namespace {

// v(S): mean model output over background rows with the columns of groups in
// S replaced by the sample's values. Coalitions are memoized by bitmask.
class Game {
public:
    Game(const ValueModel& f, const RowVector& sample, const AttributionConfig& config)
        : f_(f), sample_(sample), config_(config) {}

    double value(std::uint64_t mask) {
        if (auto it = cache_.find(mask); it != cache_.end()) return it->second;
        Matrix rows = config_.background;
        for (std::size_t g = 0; g < config_.groups.size(); ++g) {
            if (!(mask >> g & 1U)) continue;
            for (std::size_t c : config_.groups[g].columns) {
                rows.col(static_cast<Eigen::Index>(c)).setConstant(sample_[static_cast<Eigen::Index>(c)]);
            }
        }
        const Eigen::VectorXd out = f_(rows);
        require(out.size() == rows.rows(), "value model must return one output per row");
        const double v = out.mean();
        cache_.emplace(mask, v);
        return v;
    }

private:
    const ValueModel& f_;
    const RowVector& sample_;
    const AttributionConfig& config_;
    std::unordered_map<std::uint64_t, double> cache_;
};

std::vector<double> exact_values(Game& game, std::size_t n) {
    // weight(|S|) = |S|! (n-|S|-1)! / n!
    std::vector<double> weight(n);
    for (std::size_t s = 0; s < n; ++s) {
        double w = 1.0 / static_cast<double>(n);
        for (std::size_t k = 1; k <= s; ++k) w *= static_cast<double>(k) / static_cast<double>(n - k);
        weight[s] = w;
    }
    std::vector<double> phi(n, 0.0);
    const std::uint64_t full = (std::uint64_t{1} << n);
    for (std::uint64_t mask = 0; mask < full; ++mask) {
        const double v = game.value(mask);
        const auto size = static_cast<std::size_t>(std::popcount(mask));
        for (std::size_t g = 0; g < n; ++g) {
            if (mask >> g & 1U) {
                phi[g] += weight[size - 1] * v;  // S ∪ {g} term, |S| = size - 1
            } else {
                phi[g] -= weight[size] * v;
            }
        }
    }
    return phi;
}

std::vector<double> sampled_values(Game& game, std::size_t n, std::size_t permutations, std::uint64_t seed) {
    std::vector<double> phi(n, 0.0);
    std::vector<std::size_t> perm(n);
    for (std::size_t k = 0; k < permutations; ++k) {
        // Antithetic pairs: odd draws walk the previous permutation backwards.
        if (k % 2 == 0) {
            std::iota(perm.begin(), perm.end(), 0);
            std::mt19937_64 rng(synth::mix_seed(seed, k / 2));
            std::shuffle(perm.begin(), perm.end(), rng);
        } else {
            std::reverse(perm.begin(), perm.end());
        }
        std::uint64_t mask = 0;
        double prev = game.value(mask);
        for (std::size_t g : perm) {
            mask |= std::uint64_t{1} << g;
            const double v = game.value(mask);
            phi[g] += v - prev;
            prev = v;
        }
    }
    for (double& p : phi) p /= static_cast<double>(permutations);
    return phi;
}

}  // namespace

Attribution shapley_attribution(const ValueModel& f, const RowVector& sample, const AttributionConfig& config,
                                const std::string& sample_id) {
    config.validate(static_cast<std::size_t>(sample.size()));
    const std::size_t n = config.groups.size();
    if (n > 63) fail(ErrorKind::config, "at most 63 feature groups are supported");
    Game game(f, sample, config);

    Attribution a;
    a.sample_id = sample_id;
    a.target_output = config.target_output;
    a.mode = config.mode;
    for (const auto& g : config.groups) a.group_names.push_back(g.name);
    a.base_value = game.value(0);
    a.output = f(sample)(0);
    a.values = config.mode == Mode::exact ? exact_values(game, n)
                                          : sampled_values(game, n, config.num_permutations, config.seed);
    return a;
}

nlohmann::json to_json(const Attribution& a) {
    nlohmann::json groups = nlohmann::json::array();
    for (std::size_t g = 0; g < a.group_names.size(); ++g) {
        groups.push_back({{"group", a.group_names[g]}, {"shapley_value", a.values[g]}});
    }
    return {{"sample_id", a.sample_id},
            {"target_output", a.target_output},
            {"mode", a.mode == Mode::exact ? "exact" : "sampled"},
            {"base_value", a.base_value},
            {"output", a.output},
            {"attributions", std::move(groups)}};
}

std::vector<Importance> importance_summary(std::span<const Attribution> attributions) {
    require(!attributions.empty(), "importance_summary needs at least one attribution");
    const auto& names = attributions.front().group_names;
    std::vector<double> sum(names.size(), 0.0);
    for (const auto& a : attributions) {
        require(a.group_names == names, "importance_summary requires identical feature grouping");
        for (std::size_t g = 0; g < names.size(); ++g) sum[g] += std::abs(a.values[g]);
    }
    std::vector<Importance> out;
    for (std::size_t g = 0; g < names.size(); ++g) {
        out.push_back({names[g], sum[g] / static_cast<double>(attributions.size())});
    }
    std::sort(out.begin(), out.end(), [](const Importance& a, const Importance& b) {
        if (a.mean_abs != b.mean_abs) return a.mean_abs > b.mean_abs;
        return a.name < b.name;
    });
    return out;
}

std::vector<FeatureGroup> default_groups(const model::MtlModel& model) {
    std::vector<FeatureGroup> groups;
    for (std::size_t j = 0; j < clinical::num_features; ++j) {
        groups.push_back({std::string(j < clinical::num_items ? "BL_" : "M06_") + "Q" +
                              std::to_string(j % clinical::num_items + 1),
                          {j}});
    }
    FeatureGroup mri{"MRI", {}};
    for (std::size_t c = 0; c < model.mri_embedding_width(); ++c) mri.columns.push_back(clinical::num_features + c);
    groups.push_back(std::move(mri));
    return groups;
}

ValueModel model_value_function(const model::MtlModel& model, std::size_t target_output) {
    require(target_output < clinical::num_targets, "target_output must be in 0..13");
    return [&model, target_output](const Matrix& x) -> Eigen::VectorXd {
        const Matrix clinical = x.leftCols(clinical::num_features);
        const Matrix mri = x.rightCols(x.cols() - static_cast<Eigen::Index>(clinical::num_features));
        return model.predict_from_embeddings(mri, clinical).col(static_cast<Eigen::Index>(target_output));
    };
}

Matrix model_inputs(const model::MtlModel& model, const Matrix& clinical, const Matrix& mri_embedding) {
    const auto width = static_cast<Eigen::Index>(model.mri_embedding_width());
    Matrix x(clinical.rows(), static_cast<Eigen::Index>(clinical::num_features) + width);
    x.leftCols(clinical::num_features) = clinical;
    if (width > 0) {
        require(mri_embedding.rows() == clinical.rows() && mri_embedding.cols() == width,
                "MRI embedding shape does not match the model");
        x.rightCols(width) = mri_embedding;
    }
    return x;
}

}  // namespace adasmtl::explain
