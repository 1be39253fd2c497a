#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "autograd.hpp"
#include "clinical.hpp"
#include "imaging.hpp"

namespace adasmtl::model {

using nn::Matrix;

enum class BackboneKind { vit, swin, none };
enum class Pooling { mean, cls_token };

std::string_view to_string(BackboneKind kind) noexcept;
BackboneKind parse_backbone_kind(std::string_view text);

struct BackboneConfig {
    BackboneKind kind = BackboneKind::vit;
    imaging::Shape input_shape{64, 64, 64};
    std::size_t patch_size = 16;
    std::size_t embed_dim = 64;
    std::size_t depth = 4;  // ViT: blocks; Swin: blocks per stage
    std::size_t num_heads = 4;  // Swin: heads of the first stage, doubled per merge
    std::size_t window_size = 4;  // Swin only, in patch tokens
    std::size_t stages = 2;  // Swin only
    double mlp_ratio = 2.0;
    Pooling pooling = Pooling::mean;

    static BackboneConfig vit_defaults();
    static BackboneConfig swin_defaults();
    static BackboneConfig none();

    /// Throws a config error naming the offending dimension.
    void validate() const;

    imaging::Shape patch_grid() const;
    std::size_t token_count() const;
    std::size_t patch_volume() const;
    /// Width of the pooled MRI embedding (Swin: embed_dim · 2^(stages-1)).
    std::size_t output_dim() const;
    /// Swin: (grid per axis, width) at each stage.
    std::vector<std::pair<imaging::Shape, std::size_t>> stage_shapes() const;
};

struct ModalityConfig {
    bool use_mri = true;
    bool use_clinical = true;

    static ModalityConfig clinical_only() { return {false, true}; }
    static ModalityConfig mri_only() { return {true, false}; }
    static ModalityConfig both() { return {true, true}; }
    void validate() const;
    std::string label() const;  // "clinical" | "mri" | "both"
};

ModalityConfig parse_modality(std::string_view text);

struct ModelConfig {
    BackboneConfig backbone;
    ModalityConfig modality;
    std::size_t clinical_dim = 64;
    std::size_t trunk_width = 64;
    std::size_t trunk_depth = 1;
    /// Clinical inputs are divided by these before encoding.
    clinical::ItemMaxima item_maxima = clinical::default_item_maxima();
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const BackboneConfig& c);
nlohmann::json to_json(const ModalityConfig& c);
nlohmann::json to_json(const ModelConfig& c);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);
ModalityConfig modality_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Token-major patch rows (token_count × patch_volume) for one volume.
Matrix patchify(const imaging::Volume& volume, const BackboneConfig& config);

/// Model inputs for a batch. `patches` stacks each sample's patchify()
/// output; `clinical` is batch × 26 raw item scores.
struct Batch {
    std::size_t size = 0;
    Matrix patches;
    Matrix clinical;
};

class MtlModel {
public:
    explicit MtlModel(ModelConfig config);

    const ModelConfig& config() const noexcept { return config_; }
    nn::ParameterStore& parameters() noexcept { return params_; }
    const nn::ParameterStore& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const noexcept { return params_.scalar_count(); }

    std::size_t mri_embedding_width() const noexcept;
    std::size_t fused_width() const noexcept;

    /// Differentiable forward pass; returns batch × 14 predictions.
    nn::Graph::Var forward(nn::Graph& graph, const Batch& batch);
    /// Differentiable MRI embedding; returns batch × mri_embedding_width.
    nn::Graph::Var embed_mri(nn::Graph& graph, const Matrix& patches, std::size_t batch_size);

    Matrix predict(const Batch& batch) const;
    Matrix embed_mri(std::span<const imaging::Volume> volumes) const;
    Matrix embed_patches(const Matrix& patches, std::size_t batch_size) const;
    /// Predictions from precomputed MRI embeddings (batch × width, ignored
    /// when MRI is disabled) and raw clinical features (batch × 26).
    Matrix predict_from_embeddings(const Matrix& mri_embedding, const Matrix& clinical) const;

    /// Throws a numeric error naming the first non-finite parameter.
    void check_finite() const;

private:
    nn::Graph::Var vit(nn::Graph& g, nn::Graph::Var tokens, std::size_t batch_size);
    nn::Graph::Var swin(nn::Graph& g, nn::Graph::Var tokens, std::size_t batch_size);
    nn::Graph::Var transformer_block(nn::Graph& g, nn::Graph::Var x, const std::string& prefix, int heads,
                                     const std::vector<std::vector<int>>& groups,
                                     const std::vector<nn::Graph::Mask>& masks);
    nn::Graph::Var head_stack(nn::Graph& g, nn::Graph::Var mri, const Matrix* clinical);

    void build();

    ModelConfig config_;
    nn::ParameterStore params_;
};

MtlModel build_model(const BackboneConfig& backbone, const ModalityConfig& modality, std::size_t trunk_width,
                     std::uint64_t seed);

/// Hex FNV-1a of the canonical config JSON.
std::string config_hash(const ModelConfig& config);

void save_checkpoint(const std::filesystem::path& path, const MtlModel& model, const nlohmann::json& extra = {});
/// Validates the stored config hash; when `expected` is given the stored
/// config must hash identically.
MtlModel load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace adasmtl::model
