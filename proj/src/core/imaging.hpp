#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace adasmtl::imaging {

using Shape = std::array<std::size_t, 3>;
using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Dense 3D grid, x fastest (NIfTI order).
class Volume {
public:
    Volume() = default;
    explicit Volume(Shape shape, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {0.0, 0.0, 0.0});

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return x + shape_[0] * (y + shape_[1] * z);
    }
    double& at(std::size_t x, std::size_t y, std::size_t z) noexcept { return data_[index(x, y, z)]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const noexcept { return data_[index(x, y, z)]; }

    std::span<double> voxels() noexcept { return data_; }
    std::span<const double> voxels() const noexcept { return data_; }

    /// Trilinear sample at continuous voxel coordinates; outside the grid reads 0.
    double sample(double x, double y, double z) const noexcept;

    /// Position of a voxel in mm relative to the grid center.
    Vec3 centered_position(double x, double y, double z) const noexcept;

    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin_offset{0.0, 0.0, 0.0};
    std::optional<std::string> subject_id;

private:
    Shape shape_{0, 0, 0};
    std::vector<double> data_;
};

bool same_grid(const Volume& a, const Volume& b) noexcept;

// NIfTI-1 single-file (.nii) I/O. Voxels are written as float64.
Volume load_volume(const std::filesystem::path& path);
void save_volume(const std::filesystem::path& path, const Volume& volume);

/// Rotation (Euler angles, applied x then y then z) about the grid center,
/// followed by a translation in mm. Maps moving-space positions to fixed space.
struct RigidTransform {
    Vec3 rotation{0.0, 0.0, 0.0};
    Vec3 translation{0.0, 0.0, 0.0};

    Mat3 rotation_matrix() const noexcept;
    Vec3 apply(const Vec3& centered_mm) const noexcept;
    RigidTransform inverse() const noexcept;

    static RigidTransform from_matrix(const Mat3& rotation, const Vec3& translation) noexcept;
};

/// outer ∘ inner
RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) noexcept;

nlohmann::json to_json(const RigidTransform& t);

struct NormalizeResult {
    Volume volume;
    bool degenerate = false;  // input was constant
};

/// Per-scan min-max scaling to [0, 1].
NormalizeResult normalize_intensity(const Volume& volume);

/// Voxels above `fraction` of the volume maximum.
std::vector<bool> foreground_mask(const Volume& volume, double fraction = 0.05);

/// Coefficient of variation over a mask (foreground_mask when omitted).
double foreground_cv(const Volume& volume, const std::vector<bool>* mask = nullptr);
double foreground_mean(const Volume& volume, const std::vector<bool>& mask);

/// Separable Gaussian smoothing, sigma in mm, zero padding.
Volume gaussian_smooth(const Volume& volume, double sigma_mm);

/// Log-domain removal of a smooth multiplicative field. smoothing_scale is the
/// Gaussian sigma in mm used to estimate the field.
Volume correct_bias_field(const Volume& volume, double smoothing_scale_mm);

/// out(p) = moving(T⁻¹(p)) sampled on the moving grid.
Volume apply_transform(const Volume& moving, const RigidTransform& transform);

/// Resample onto another grid using physical (origin + spacing) positions.
Volume resample_to_grid(const Volume& volume, const Volume& reference_grid);

/// 2× block-average downsample; odd trailing voxels are dropped.
Volume downsample2(const Volume& volume);

double normalized_cross_correlation(const Volume& a, const Volume& b);

struct RegistrationConfig {
    int pyramid_levels = 3;
    int max_iterations = 200;  // per level
    double initial_translation_step_voxels = 1.0;
    double initial_rotation_step = 0.04;  // radians
    double min_translation_step_voxels = 0.05;
    double min_rotation_step = 0.001;
    int coarse_search_radius_voxels = 2;
};

nlohmann::json to_json(const RegistrationConfig& c);
RegistrationConfig registration_config_from_json(const nlohmann::json& j);

struct RegistrationResult {
    Volume registered;
    RigidTransform transform;
    bool converged = true;
    double ncc = 0.0;
    int evaluations = 0;
};

/// Rigid NCC registration, coarse-to-fine compass search over 6 parameters.
RegistrationResult register_rigid(const Volume& moving, const Volume& fixed, const RegistrationConfig& config = {});

}  // namespace adasmtl::imaging
