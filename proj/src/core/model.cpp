#include "model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "error.hpp"
#include "hash.hpp"

namespace adasmtl::model {

using nn::Graph;

std::string_view to_string(BackboneKind kind) noexcept {
    switch (kind) {
        case BackboneKind::vit: return "vit";
        case BackboneKind::swin: return "swin";
        case BackboneKind::none: return "none";
    }
    return "?";
}

BackboneKind parse_backbone_kind(std::string_view text) {
    if (text == "vit") return BackboneKind::vit;
    if (text == "swin") return BackboneKind::swin;
    if (text == "none") return BackboneKind::none;
    fail(ErrorKind::config, "unknown backbone '" + std::string(text) + "' (expected vit, swin or none)");
}

ModalityConfig parse_modality(std::string_view text) {
    if (text == "clinical") return ModalityConfig::clinical_only();
    if (text == "mri") return ModalityConfig::mri_only();
    if (text == "both") return ModalityConfig::both();
    fail(ErrorKind::config, "unknown modality '" + std::string(text) + "' (expected clinical, mri or both)");
}

// ---------------------------------------------------------------------------
// Configs

BackboneConfig BackboneConfig::vit_defaults() { return {}; }

BackboneConfig BackboneConfig::swin_defaults() {
    BackboneConfig c;
    c.kind = BackboneKind::swin;
    c.patch_size = 8;
    c.embed_dim = 32;
    c.depth = 2;
    c.num_heads = 2;
    c.window_size = 4;
    c.stages = 2;
    return c;
}

BackboneConfig BackboneConfig::none() {
    BackboneConfig c;
    c.kind = BackboneKind::none;
    return c;
}

imaging::Shape BackboneConfig::patch_grid() const {
    return {input_shape[0] / patch_size, input_shape[1] / patch_size, input_shape[2] / patch_size};
}

std::size_t BackboneConfig::token_count() const {
    const auto g = patch_grid();
    return g[0] * g[1] * g[2];
}

std::size_t BackboneConfig::patch_volume() const { return patch_size * patch_size * patch_size; }

std::size_t BackboneConfig::output_dim() const {
    switch (kind) {
        case BackboneKind::none: return 0;
        case BackboneKind::vit: return embed_dim;
        case BackboneKind::swin: return embed_dim << (stages - 1);
    }
    return 0;
}

std::vector<std::pair<imaging::Shape, std::size_t>> BackboneConfig::stage_shapes() const {
    std::vector<std::pair<imaging::Shape, std::size_t>> out;
    auto grid = patch_grid();
    std::size_t width = embed_dim;
    for (std::size_t s = 0; s < stages; ++s) {
        out.emplace_back(grid, width);
        for (auto& g : grid) g /= 2;
        width *= 2;
    }
    return out;
}

void BackboneConfig::validate() const {
    if (kind == BackboneKind::none) return;
    const char* axis_name[] = {"x", "y", "z"};
    if (patch_size == 0) fail(ErrorKind::config, "patch_size must be positive");
    for (int a = 0; a < 3; ++a) {
        if (input_shape[a] == 0 || input_shape[a] % patch_size != 0) {
            fail(ErrorKind::config, std::string("input_shape.") + axis_name[a] + " = " + std::to_string(input_shape[a]) +
                                        " is not divisible by patch_size " + std::to_string(patch_size));
        }
    }
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
        fail(ErrorKind::config, "embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                                    std::to_string(num_heads));
    }
    if (depth == 0) fail(ErrorKind::config, "depth must be positive");
    if (!(mlp_ratio > 0.0)) fail(ErrorKind::config, "mlp_ratio must be positive");
    if (kind == BackboneKind::swin) {
        if (pooling != Pooling::mean) fail(ErrorKind::config, "swin backbone supports mean pooling only");
        if (stages == 0) fail(ErrorKind::config, "swin stages must be positive");
        if (window_size == 0) fail(ErrorKind::config, "window_size must be positive");
        auto grid = patch_grid();
        for (std::size_t s = 0; s < stages; ++s) {
            for (int a = 0; a < 3; ++a) {
                if (grid[a] == 0 || grid[a] % window_size != 0) {
                    fail(ErrorKind::config, "swin stage " + std::to_string(s) + " patch grid " + axis_name[a] + " = " +
                                                std::to_string(grid[a]) + " is not divisible by window_size " +
                                                std::to_string(window_size));
                }
                if (s + 1 < stages && grid[a] % 2 != 0) {
                    fail(ErrorKind::config, "swin stage " + std::to_string(s) + " patch grid " + axis_name[a] +
                                                " is odd and cannot be merged");
                }
            }
            for (auto& g : grid) g /= 2;
        }
    }
}

void ModalityConfig::validate() const {
    if (!use_mri && !use_clinical) fail(ErrorKind::config, "at least one modality must be enabled");
}

std::string ModalityConfig::label() const {
    if (use_mri && use_clinical) return "both";
    return use_mri ? "mri" : "clinical";
}

void ModelConfig::validate() const {
    modality.validate();
    if (modality.use_mri) {
        if (backbone.kind == BackboneKind::none) {
            fail(ErrorKind::config, "MRI modality requires a vit or swin backbone");
        }
        backbone.validate();
    }
    if (clinical_dim == 0) fail(ErrorKind::config, "clinical_dim must be positive");
    if (trunk_width == 0) fail(ErrorKind::config, "trunk_width must be positive");
    for (double m : item_maxima) {
        if (!(m > 0.0)) fail(ErrorKind::config, "item maxima must be positive");
    }
}

nlohmann::json to_json(const BackboneConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"input_shape", c.input_shape},
            {"patch_size", c.patch_size},
            {"embed_dim", c.embed_dim},
            {"depth", c.depth},
            {"num_heads", c.num_heads},
            {"window_size", c.window_size},
            {"stages", c.stages},
            {"mlp_ratio", c.mlp_ratio},
            {"pooling", c.pooling == Pooling::mean ? "mean" : "cls_token"}};
}

nlohmann::json to_json(const ModalityConfig& c) {
    return {{"use_mri", c.use_mri}, {"use_clinical", c.use_clinical}};
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"backbone", to_json(c.backbone)},   {"modality", to_json(c.modality)},
            {"clinical_dim", c.clinical_dim},    {"trunk_width", c.trunk_width},
            {"trunk_depth", c.trunk_depth},      {"item_maxima", c.item_maxima},
            {"seed", c.seed}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
    const auto kind = parse_backbone_kind(j.value("kind", std::string("vit")));
    BackboneConfig c = kind == BackboneKind::swin ? BackboneConfig::swin_defaults()
                       : kind == BackboneKind::none ? BackboneConfig::none()
                                                    : BackboneConfig::vit_defaults();
    c.input_shape = j.value("input_shape", c.input_shape);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.depth = j.value("depth", c.depth);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.window_size = j.value("window_size", c.window_size);
    c.stages = j.value("stages", c.stages);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    const auto pooling = j.value("pooling", std::string("mean"));
    if (pooling == "mean") {
        c.pooling = Pooling::mean;
    } else if (pooling == "cls_token") {
        c.pooling = Pooling::cls_token;
    } else {
        fail(ErrorKind::config, "unknown pooling '" + pooling + "'");
    }
    return c;
}

ModalityConfig modality_config_from_json(const nlohmann::json& j) {
    if (j.is_string()) return parse_modality(j.get<std::string>());
    ModalityConfig c;
    c.use_mri = j.value("use_mri", c.use_mri);
    c.use_clinical = j.value("use_clinical", c.use_clinical);
    return c;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    if (j.contains("backbone")) c.backbone = backbone_config_from_json(j.at("backbone"));
    if (j.contains("modality")) c.modality = modality_config_from_json(j.at("modality"));
    c.clinical_dim = j.value("clinical_dim", c.clinical_dim);
    c.trunk_width = j.value("trunk_width", c.trunk_width);
    c.trunk_depth = j.value("trunk_depth", c.trunk_depth);
    c.item_maxima = j.value("item_maxima", c.item_maxima);
    c.seed = j.value("seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------

Matrix patchify(const imaging::Volume& volume, const BackboneConfig& config) {
    require(volume.shape() == config.input_shape,
            "volume shape does not match backbone input_shape");
    const auto grid = config.patch_grid();
    const std::size_t p = config.patch_size;
    Matrix rows(static_cast<Eigen::Index>(config.token_count()), static_cast<Eigen::Index>(config.patch_volume()));
    for (std::size_t gz = 0; gz < grid[2]; ++gz)
        for (std::size_t gy = 0; gy < grid[1]; ++gy)
            for (std::size_t gx = 0; gx < grid[0]; ++gx) {
                const auto t = static_cast<Eigen::Index>(gx + grid[0] * (gy + grid[1] * gz));
                Eigen::Index c = 0;
                for (std::size_t dz = 0; dz < p; ++dz)
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx) {
                            rows(t, c++) = volume.at(gx * p + dx, gy * p + dy, gz * p + dz);
                        }
            }
    return rows;
}

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Matrix xavier(Eigen::Index in, Eigen::Index out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        Matrix m(in, out);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng_);
        return m;
    }

    Matrix normal(Eigen::Index rows, Eigen::Index cols, double sd) {
        std::normal_distribution<double> n(0.0, sd);
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng_);
        return m;
    }

private:
    std::mt19937_64 rng_;
};

void add_linear(nn::ParameterStore& ps, Initializer& init, const std::string& name, std::size_t in, std::size_t out,
                bool bias = true) {
    ps.add(name + ".weight", init.xavier(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)));
    if (bias) ps.add(name + ".bias", Matrix::Zero(1, static_cast<Eigen::Index>(out)));
}

void add_norm(nn::ParameterStore& ps, const std::string& name, std::size_t width) {
    ps.add(name + ".gamma", Matrix::Ones(1, static_cast<Eigen::Index>(width)));
    ps.add(name + ".beta", Matrix::Zero(1, static_cast<Eigen::Index>(width)));
}

void add_block(nn::ParameterStore& ps, Initializer& init, const std::string& prefix, std::size_t width, double mlp_ratio) {
    const auto hidden = static_cast<std::size_t>(std::lround(static_cast<double>(width) * mlp_ratio));
    add_norm(ps, prefix + ".ln1", width);
    add_linear(ps, init, prefix + ".attn.qkv", width, 3 * width);
    add_linear(ps, init, prefix + ".attn.proj", width, width);
    add_norm(ps, prefix + ".ln2", width);
    add_linear(ps, init, prefix + ".mlp.fc1", width, std::max<std::size_t>(1, hidden));
    add_linear(ps, init, prefix + ".mlp.fc2", std::max<std::size_t>(1, hidden), width);
}

std::string head_name(std::size_t j) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "head.%02zu", j);
    return buf;
}

std::vector<std::vector<int>> contiguous_groups(std::size_t batch, std::size_t per_group) {
    std::vector<std::vector<int>> groups(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        groups[b].resize(per_group);
        for (std::size_t t = 0; t < per_group; ++t) groups[b][t] = static_cast<int>(b * per_group + t);
    }
    return groups;
}

Graph::Var norm(Graph& g, nn::ParameterStore& ps, Graph::Var x, const std::string& name) {
    return g.layer_norm(x, g.param(ps.at(name + ".gamma")), g.param(ps.at(name + ".beta")));
}

Graph::Var linear(Graph& g, nn::ParameterStore& ps, Graph::Var x, const std::string& name) {
    return g.linear(x, ps.at(name + ".weight"), ps.at(name + ".bias"));
}

}  // namespace

MtlModel::MtlModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    build();
}

void MtlModel::build() {
    Initializer init(config_.seed);
    const auto& bb = config_.backbone;
    if (config_.modality.use_mri) {
        const std::size_t pv = bb.patch_volume();
        if (bb.kind == BackboneKind::vit) {
            add_linear(params_, init, "vit.patch_embed", pv, bb.embed_dim);
            params_.add("vit.pos_embed", init.normal(static_cast<Eigen::Index>(bb.token_count()),
                                                     static_cast<Eigen::Index>(bb.embed_dim), 0.02));
            if (bb.pooling == Pooling::cls_token) {
                params_.add("vit.cls_token", init.normal(1, static_cast<Eigen::Index>(bb.embed_dim), 0.02));
            }
            for (std::size_t i = 0; i < bb.depth; ++i) {
                add_block(params_, init, "vit.blocks." + std::to_string(i), bb.embed_dim, bb.mlp_ratio);
            }
        } else {
            add_linear(params_, init, "swin.patch_embed", pv, bb.embed_dim);
            add_norm(params_, "swin.patch_norm", bb.embed_dim);
            const auto shapes = bb.stage_shapes();
            for (std::size_t s = 0; s < shapes.size(); ++s) {
                const std::size_t width = shapes[s].second;
                for (std::size_t i = 0; i < bb.depth; ++i) {
                    add_block(params_, init, "swin.stages." + std::to_string(s) + ".blocks." + std::to_string(i), width,
                              bb.mlp_ratio);
                }
                if (s + 1 < shapes.size()) {
                    const std::string m = "swin.merge." + std::to_string(s);
                    add_norm(params_, m + ".norm", 8 * width);
                    add_linear(params_, init, m + ".reduction", 8 * width, 2 * width, false);
                }
            }
            add_norm(params_, "swin.norm", bb.output_dim());
        }
    }
    if (config_.modality.use_clinical) {
        add_linear(params_, init, "clinical", clinical::num_features, config_.clinical_dim);
    }
    std::size_t width = fused_width();
    for (std::size_t k = 0; k < config_.trunk_depth; ++k) {
        add_linear(params_, init, "trunk." + std::to_string(k), width, config_.trunk_width);
        width = config_.trunk_width;
    }
    for (std::size_t j = 0; j < clinical::num_targets; ++j) add_linear(params_, init, head_name(j), width, 1);
}

std::size_t MtlModel::mri_embedding_width() const noexcept {
    return config_.modality.use_mri ? config_.backbone.output_dim() : 0;
}

std::size_t MtlModel::fused_width() const noexcept {
    return mri_embedding_width() + (config_.modality.use_clinical ? config_.clinical_dim : 0);
}

Graph::Var MtlModel::transformer_block(Graph& g, Graph::Var x, const std::string& prefix, int heads,
                                       const std::vector<std::vector<int>>& groups,
                                       const std::vector<Graph::Mask>& masks) {
    auto h = norm(g, params_, x, prefix + ".ln1");
    auto qkv = linear(g, params_, h, prefix + ".attn.qkv");
    auto att = g.attention(qkv, heads, groups, masks);
    x = g.add(x, linear(g, params_, att, prefix + ".attn.proj"));
    h = norm(g, params_, x, prefix + ".ln2");
    auto m = linear(g, params_, g.gelu(linear(g, params_, h, prefix + ".mlp.fc1")), prefix + ".mlp.fc2");
    return g.add(x, m);
}

Graph::Var MtlModel::vit(Graph& g, Graph::Var tokens, std::size_t batch_size) {
    const auto& bb = config_.backbone;
    const std::size_t T = bb.token_count();
    std::vector<int> pos_rows(batch_size * T);
    for (std::size_t i = 0; i < pos_rows.size(); ++i) pos_rows[i] = static_cast<int>(i % T);
    auto x = g.add(tokens, g.gather_rows(g.param(params_.at("vit.pos_embed")), std::move(pos_rows)));

    auto groups = contiguous_groups(batch_size, T);
    if (bb.pooling == Pooling::cls_token) {
        // cls rows appended after all patch tokens; row B·T + b belongs to sample b
        x = g.concat_rows({x, g.gather_rows(g.param(params_.at("vit.cls_token")), std::vector<int>(batch_size, 0))});
        for (std::size_t b = 0; b < batch_size; ++b) groups[b].push_back(static_cast<int>(batch_size * T + b));
    }
    for (std::size_t i = 0; i < bb.depth; ++i) {
        x = transformer_block(g, x, "vit.blocks." + std::to_string(i), static_cast<int>(bb.num_heads), groups, {});
    }
    if (bb.pooling == Pooling::cls_token) {
        std::vector<int> cls_rows(batch_size);
        for (std::size_t b = 0; b < batch_size; ++b) cls_rows[b] = static_cast<int>(batch_size * T + b);
        return g.gather_rows(x, std::move(cls_rows));
    }
    return g.mean_rows(x, contiguous_groups(batch_size, T));
}

namespace {

struct Windows {
    std::vector<std::vector<int>> groups;
    std::vector<Graph::Mask> masks;
};

// Window partition of a per-sample token grid with an optional cyclic shift.
// Group members are original token rows, so no roll-back is needed.
Windows swin_windows(const imaging::Shape& grid, std::size_t window, std::size_t shift, std::size_t batch_size) {
    const std::size_t T = grid[0] * grid[1] * grid[2];
    const imaging::Shape nwin{grid[0] / window, grid[1] / window, grid[2] / window};
    auto region = [&](std::size_t c, std::size_t axis) -> int {
        if (shift == 0) return 0;
        if (c < grid[axis] - window) return 0;
        return c < grid[axis] - shift ? 1 : 2;
    };

    std::vector<std::vector<int>> local;  // token indices within one sample
    std::vector<Graph::Mask> local_masks;
    for (std::size_t wz = 0; wz < nwin[2]; ++wz)
        for (std::size_t wy = 0; wy < nwin[1]; ++wy)
            for (std::size_t wx = 0; wx < nwin[0]; ++wx) {
                std::vector<int> members;
                std::vector<int> labels;
                for (std::size_t dz = 0; dz < window; ++dz)
                    for (std::size_t dy = 0; dy < window; ++dy)
                        for (std::size_t dx = 0; dx < window; ++dx) {
                            const std::size_t sx = wx * window + dx, sy = wy * window + dy, sz = wz * window + dz;
                            const std::size_t ox = (sx + shift) % grid[0];
                            const std::size_t oy = (sy + shift) % grid[1];
                            const std::size_t oz = (sz + shift) % grid[2];
                            members.push_back(static_cast<int>(ox + grid[0] * (oy + grid[1] * oz)));
                            labels.push_back(region(sx, 0) * 9 + region(sy, 1) * 3 + region(sz, 2));
                        }
                const auto n = static_cast<Eigen::Index>(members.size());
                Matrix mask = Matrix::Zero(n, n);
                bool any = false;
                for (Eigen::Index i = 0; i < n; ++i)
                    for (Eigen::Index j = 0; j < n; ++j)
                        if (labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(j)]) {
                            mask(i, j) = -1e9;
                            any = true;
                        }
                local.push_back(std::move(members));
                local_masks.push_back(any ? std::make_shared<const Matrix>(std::move(mask)) : nullptr);
            }

    Windows w;
    for (std::size_t b = 0; b < batch_size; ++b) {
        for (std::size_t k = 0; k < local.size(); ++k) {
            std::vector<int> rows = local[k];
            for (int& r : rows) r += static_cast<int>(b * T);
            w.groups.push_back(std::move(rows));
            w.masks.push_back(local_masks[k]);
        }
    }
    return w;
}

std::vector<std::vector<int>> merge_groups(const imaging::Shape& grid, std::size_t batch_size) {
    const std::size_t T = grid[0] * grid[1] * grid[2];
    const imaging::Shape half{grid[0] / 2, grid[1] / 2, grid[2] / 2};
    std::vector<std::vector<int>> groups;
    for (std::size_t b = 0; b < batch_size; ++b)
        for (std::size_t z = 0; z < half[2]; ++z)
            for (std::size_t y = 0; y < half[1]; ++y)
                for (std::size_t x = 0; x < half[0]; ++x) {
                    std::vector<int> g;
                    for (std::size_t dz = 0; dz < 2; ++dz)
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                const std::size_t t = (2 * x + dx) + grid[0] * ((2 * y + dy) + grid[1] * (2 * z + dz));
                                g.push_back(static_cast<int>(b * T + t));
                            }
                    groups.push_back(std::move(g));
                }
    return groups;
}

}  // namespace

Graph::Var MtlModel::swin(Graph& g, Graph::Var tokens, std::size_t batch_size) {
    const auto& bb = config_.backbone;
    auto x = norm(g, params_, tokens, "swin.patch_norm");
    const auto shapes = bb.stage_shapes();
    for (std::size_t s = 0; s < shapes.size(); ++s) {
        const auto& [grid, width] = shapes[s];
        const int heads = static_cast<int>(bb.num_heads << s);
        const std::size_t min_grid = std::min({grid[0], grid[1], grid[2]});
        // shifting is a no-op when one window covers the whole grid
        const std::size_t shift = bb.window_size < min_grid ? bb.window_size / 2 : 0;
        const Windows plain = swin_windows(grid, bb.window_size, 0, batch_size);
        const Windows shifted = shift ? swin_windows(grid, bb.window_size, shift, batch_size) : plain;
        for (std::size_t i = 0; i < bb.depth; ++i) {
            const Windows& w = (i % 2 == 1) ? shifted : plain;
            x = transformer_block(g, x, "swin.stages." + std::to_string(s) + ".blocks." + std::to_string(i), heads,
                                  w.groups, w.masks);
        }
        if (s + 1 < shapes.size()) {
            const std::string m = "swin.merge." + std::to_string(s);
            x = g.merge_rows(x, merge_groups(grid, batch_size));
            x = norm(g, params_, x, m + ".norm");
            x = g.matmul(x, g.param(params_.at(m + ".reduction.weight")));
        }
    }
    x = norm(g, params_, x, "swin.norm");
    const auto& last = shapes.back().first;
    return g.mean_rows(x, contiguous_groups(batch_size, last[0] * last[1] * last[2]));
}

Graph::Var MtlModel::embed_mri(Graph& g, const Matrix& patches, std::size_t batch_size) {
    const auto& bb = config_.backbone;
    require(config_.modality.use_mri, "embed_mri called on a model without the MRI modality");
    require(patches.rows() == static_cast<Eigen::Index>(batch_size * bb.token_count()) &&
                patches.cols() == static_cast<Eigen::Index>(bb.patch_volume()),
            "MRI patch matrix does not match the backbone input shape");
    const std::string prefix = bb.kind == BackboneKind::vit ? "vit" : "swin";
    auto tokens = linear(g, params_, g.constant(patches), prefix + ".patch_embed");
    return bb.kind == BackboneKind::vit ? vit(g, tokens, batch_size) : swin(g, tokens, batch_size);
}

Graph::Var MtlModel::head_stack(Graph& g, Graph::Var mri, const Matrix* clinical) {
    std::vector<Graph::Var> parts;
    if (config_.modality.use_mri) parts.push_back(mri);
    if (config_.modality.use_clinical) {
        Matrix scaled = *clinical;
        for (std::size_t j = 0; j < clinical::num_features; ++j) {
            scaled.col(static_cast<Eigen::Index>(j)) /= config_.item_maxima[j % clinical::num_items];
        }
        parts.push_back(linear(g, params_, g.constant(std::move(scaled)), "clinical"));
    }
    auto x = parts.size() == 1 ? parts[0] : g.concat_cols(parts);
    for (std::size_t k = 0; k < config_.trunk_depth; ++k) {
        x = g.gelu(linear(g, params_, x, "trunk." + std::to_string(k)));
    }
    std::vector<Graph::Var> heads;
    heads.reserve(clinical::num_targets);
    for (std::size_t j = 0; j < clinical::num_targets; ++j) heads.push_back(linear(g, params_, x, head_name(j)));
    return g.concat_cols(heads);
}

void MtlModel::check_finite() const {
    const auto bad = params_.first_non_finite();
    if (!bad.empty()) fail(ErrorKind::numeric, "non-finite value in parameter " + bad);
}

Graph::Var MtlModel::forward(Graph& g, const Batch& batch) {
    require(batch.size > 0, "forward requires a non-empty batch");
    check_finite();
    Graph::Var mri;
    if (config_.modality.use_mri) {
        require(batch.patches.size() > 0, "forward: MRI modality enabled but no volumes supplied");
        mri = embed_mri(g, batch.patches, batch.size);
    }
    if (config_.modality.use_clinical) {
        require(batch.clinical.rows() == static_cast<Eigen::Index>(batch.size) &&
                    batch.clinical.cols() == static_cast<Eigen::Index>(clinical::num_features),
                "forward: clinical modality enabled but clinical features missing or malformed");
    }
    return head_stack(g, mri, &batch.clinical);
}

// Inference paths build a throwaway graph; nothing is written back to the
// parameters, so the const_cast only satisfies Graph::param's signature.
Matrix MtlModel::predict(const Batch& batch) const {
    Graph g;
    return g.value(const_cast<MtlModel*>(this)->forward(g, batch));
}

Matrix MtlModel::embed_patches(const Matrix& patches, std::size_t batch_size) const {
    Graph g;
    return g.value(const_cast<MtlModel*>(this)->embed_mri(g, patches, batch_size));
}

Matrix MtlModel::embed_mri(std::span<const imaging::Volume> volumes) const {
    const auto& bb = config_.backbone;
    Matrix patches(static_cast<Eigen::Index>(volumes.size() * bb.token_count()),
                   static_cast<Eigen::Index>(bb.patch_volume()));
    for (std::size_t b = 0; b < volumes.size(); ++b) {
        patches.middleRows(static_cast<Eigen::Index>(b * bb.token_count()), static_cast<Eigen::Index>(bb.token_count())) =
            patchify(volumes[b], bb);
    }
    return embed_patches(patches, volumes.size());
}

Matrix MtlModel::predict_from_embeddings(const Matrix& mri_embedding, const Matrix& clinical) const {
    check_finite();
    Graph g;
    Graph::Var mri;
    if (config_.modality.use_mri) {
        require(mri_embedding.cols() == static_cast<Eigen::Index>(mri_embedding_width()),
                "MRI embedding width mismatch");
        mri = g.constant(mri_embedding);
    }
    return g.value(const_cast<MtlModel*>(this)->head_stack(g, mri, &clinical));
}

MtlModel build_model(const BackboneConfig& backbone, const ModalityConfig& modality, std::size_t trunk_width,
                     std::uint64_t seed) {
    ModelConfig c;
    c.backbone = backbone;
    c.modality = modality;
    c.trunk_width = trunk_width;
    c.seed = seed;
    return MtlModel(c);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, u64 JSON length, JSON, then float64 parameter data in
// the order listed in the JSON.

namespace {
constexpr char checkpoint_magic[8] = {'A', 'D', 'M', 'T', 'L', 'C', 'K', '1'};
}

std::string config_hash(const ModelConfig& config) { return hash_hex(to_json(config).dump()); }

void save_checkpoint(const std::filesystem::path& path, const MtlModel& model, const nlohmann::json& extra) {
    nlohmann::json meta;
    meta["config"] = to_json(model.config());
    meta["config_hash"] = config_hash(model.config());
    meta["extra"] = extra;
    nlohmann::json plist = nlohmann::json::array();
    const auto& ps = model.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        plist.push_back({{"name", ps[i].name}, {"rows", ps[i].value.rows()}, {"cols", ps[i].value.cols()}});
    }
    meta["parameters"] = plist;
    const std::string text = meta.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
    out.write(checkpoint_magic, sizeof(checkpoint_magic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        out.write(reinterpret_cast<const char*>(ps[i].value.data()),
                  static_cast<std::streamsize>(ps[i].value.size() * static_cast<Eigen::Index>(sizeof(double))));
    }
    if (!out) fail(ErrorKind::io, "failed writing checkpoint " + path.string());
}

MtlModel load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, checkpoint_magic, sizeof(magic)) != 0) {
        fail(ErrorKind::io, "checkpoint " + path.string() + ": bad magic");
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ULL << 30)) fail(ErrorKind::io, "checkpoint " + path.string() + ": bad header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) fail(ErrorKind::io, "checkpoint " + path.string() + ": truncated header");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, "checkpoint " + path.string() + ": malformed header JSON: " + e.what());
    }
    const ModelConfig config = model_config_from_json(meta.at("config"));
    const std::string stored = meta.value("config_hash", std::string());
    if (config_hash(config) != stored) {
        fail(ErrorKind::validation, "checkpoint " + path.string() + ": config hash mismatch (corrupt header)");
    }
    if (expected && config_hash(*expected) != stored) {
        fail(ErrorKind::config, "checkpoint " + path.string() + " was written for a different model config");
    }

    MtlModel model(config);
    auto& ps = model.parameters();
    for (const auto& entry : meta.at("parameters")) {
        const auto name = entry.at("name").get<std::string>();
        auto* p = ps.find(name);
        if (!p) fail(ErrorKind::validation, "checkpoint parameter " + name + " does not exist in the model");
        const auto rows = entry.at("rows").get<Eigen::Index>(), cols = entry.at("cols").get<Eigen::Index>();
        if (rows != p->value.rows() || cols != p->value.cols()) {
            fail(ErrorKind::validation, "checkpoint parameter " + name + " has the wrong shape");
        }
        in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(rows * cols * 8));
        if (!in) fail(ErrorKind::io, "checkpoint " + path.string() + ": truncated parameter data");
    }
    return model;
}

}  // namespace adasmtl::model
