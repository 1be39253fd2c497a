#include "imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "error.hpp"

namespace adasmtl::imaging {

Volume::Volume(Shape shape, Vec3 spacing_mm, Vec3 origin)
    : spacing(spacing_mm), origin_offset(origin), shape_(shape), data_(shape[0] * shape[1] * shape[2], 0.0) {}

double Volume::sample(double x, double y, double z) const noexcept {
    const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
    const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy), z0 = static_cast<long>(fz);
    const double dx = x - fx, dy = y - fy, dz = z - fz;
    const long nx = static_cast<long>(shape_[0]), ny = static_cast<long>(shape_[1]), nz = static_cast<long>(shape_[2]);
    if (x0 < -1 || y0 < -1 || z0 < -1 || x0 >= nx || y0 >= ny || z0 >= nz) return 0.0;
    auto v = [&](long i, long j, long k) -> double {
        if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz) return 0.0;
        return data_[static_cast<std::size_t>(i + nx * (j + ny * k))];
    };
    const double c00 = v(x0, y0, z0) * (1 - dx) + v(x0 + 1, y0, z0) * dx;
    const double c10 = v(x0, y0 + 1, z0) * (1 - dx) + v(x0 + 1, y0 + 1, z0) * dx;
    const double c01 = v(x0, y0, z0 + 1) * (1 - dx) + v(x0 + 1, y0, z0 + 1) * dx;
    const double c11 = v(x0, y0 + 1, z0 + 1) * (1 - dx) + v(x0 + 1, y0 + 1, z0 + 1) * dx;
    const double c0 = c00 * (1 - dy) + c10 * dy;
    const double c1 = c01 * (1 - dy) + c11 * dy;
    return c0 * (1 - dz) + c1 * dz;
}

Vec3 Volume::centered_position(double x, double y, double z) const noexcept {
    return {spacing[0] * (x - 0.5 * (static_cast<double>(shape_[0]) - 1.0)),
            spacing[1] * (y - 0.5 * (static_cast<double>(shape_[1]) - 1.0)),
            spacing[2] * (z - 0.5 * (static_cast<double>(shape_[2]) - 1.0))};
}

bool same_grid(const Volume& a, const Volume& b) noexcept {
    if (a.shape() != b.shape()) return false;
    for (int i = 0; i < 3; ++i) {
        if (std::abs(a.spacing[i] - b.spacing[i]) > 1e-9) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Rigid transforms

namespace {

Mat3 multiply(const Mat3& a, const Mat3& b) noexcept {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

Vec3 multiply(const Mat3& a, const Vec3& v) noexcept {
    return {a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2]};
}

Mat3 transpose(const Mat3& a) noexcept {
    Mat3 t{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
    return t;
}

double wrap_angle(double a) noexcept {
    a = std::remainder(a, 2.0 * std::numbers::pi);
    if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
    return a;
}

}  // namespace

Mat3 RigidTransform::rotation_matrix() const noexcept {
    const double ca = std::cos(rotation[0]), sa = std::sin(rotation[0]);
    const double cb = std::cos(rotation[1]), sb = std::sin(rotation[1]);
    const double cc = std::cos(rotation[2]), sc = std::sin(rotation[2]);
    const Mat3 rx{{{1, 0, 0}, {0, ca, -sa}, {0, sa, ca}}};
    const Mat3 ry{{{cb, 0, sb}, {0, 1, 0}, {-sb, 0, cb}}};
    const Mat3 rz{{{cc, -sc, 0}, {sc, cc, 0}, {0, 0, 1}}};
    return multiply(rz, multiply(ry, rx));
}

Vec3 RigidTransform::apply(const Vec3& p) const noexcept {
    Vec3 q = multiply(rotation_matrix(), p);
    for (int i = 0; i < 3; ++i) q[i] += translation[i];
    return q;
}

RigidTransform RigidTransform::from_matrix(const Mat3& r, const Vec3& t) noexcept {
    RigidTransform out;
    out.translation = t;
    const double sb = std::clamp(-r[2][0], -1.0, 1.0);
    const double b = std::asin(sb);
    if (std::abs(sb) < 1.0 - 1e-12) {
        out.rotation = {std::atan2(r[2][1], r[2][2]), b, std::atan2(r[1][0], r[0][0])};
    } else {
        // gimbal lock: only a+c (or a-c) is determined; put it all in z
        out.rotation = {0.0, b, std::atan2(-r[0][1], r[1][1])};
    }
    for (auto& a : out.rotation) a = wrap_angle(a);
    return out;
}

RigidTransform RigidTransform::inverse() const noexcept {
    const Mat3 rt = transpose(rotation_matrix());
    Vec3 t = multiply(rt, translation);
    for (auto& v : t) v = -v;
    return from_matrix(rt, t);
}

RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) noexcept {
    const Mat3 ro = outer.rotation_matrix();
    Vec3 t = multiply(ro, inner.translation);
    for (int i = 0; i < 3; ++i) t[i] += outer.translation[i];
    return RigidTransform::from_matrix(multiply(ro, inner.rotation_matrix()), t);
}

nlohmann::json to_json(const RigidTransform& t) {
    return {{"rotation_rad", t.rotation}, {"translation_mm", t.translation}};
}

// ---------------------------------------------------------------------------
// Intensity

NormalizeResult normalize_intensity(const Volume& volume) {
    NormalizeResult result{volume, false};
    auto vox = result.volume.voxels();
    if (vox.empty()) return result;
    for (double v : vox) require(std::isfinite(v), "normalize_intensity requires finite voxels");
    const auto [lo_it, hi_it] = std::minmax_element(vox.begin(), vox.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        spdlog::warn("normalize_intensity: constant volume{}, output set to zero",
                     volume.subject_id ? " (" + *volume.subject_id + ")" : std::string());
        std::fill(vox.begin(), vox.end(), 0.0);
        result.degenerate = true;
        return result;
    }
    const double range = hi - lo;
    for (double& v : vox) v = (v - lo) / range;
    // min maps to exactly 0; pin max to exactly 1 against rounding
    vox[static_cast<std::size_t>(hi_it - vox.begin())] = 1.0;
    for (double& v : vox) v = std::min(v, 1.0);
    return result;
}

std::vector<bool> foreground_mask(const Volume& volume, double fraction) {
    const auto vox = volume.voxels();
    std::vector<bool> mask(vox.size(), false);
    if (vox.empty()) return mask;
    const double hi = *std::max_element(vox.begin(), vox.end());
    if (hi <= 0.0) return mask;
    const double threshold = fraction * hi;
    for (std::size_t i = 0; i < vox.size(); ++i) mask[i] = vox[i] > threshold;
    return mask;
}

double foreground_mean(const Volume& volume, const std::vector<bool>& mask) {
    const auto vox = volume.voxels();
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < vox.size(); ++i) {
        if (mask[i]) {
            sum += vox[i];
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

double foreground_cv(const Volume& volume, const std::vector<bool>* mask) {
    std::vector<bool> own;
    if (!mask) {
        own = foreground_mask(volume);
        mask = &own;
    }
    const auto vox = volume.voxels();
    const double mean = foreground_mean(volume, *mask);
    if (mean == 0.0) return 0.0;
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < vox.size(); ++i) {
        if ((*mask)[i]) {
            ss += (vox[i] - mean) * (vox[i] - mean);
            ++n;
        }
    }
    return std::sqrt(ss / static_cast<double>(n)) / mean;
}

Volume gaussian_smooth(const Volume& volume, double sigma_mm) {
    require(sigma_mm > 0.0, "gaussian_smooth requires a positive sigma");
    Volume out = volume;
    const auto shape = volume.shape();
    std::vector<double> line;
    for (int axis = 0; axis < 3; ++axis) {
        const double sigma = sigma_mm / volume.spacing[axis];
        const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
        std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
        for (long k = -radius; k <= radius; ++k) {
            kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        }
        const double ksum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
        for (double& k : kernel) k /= ksum;

        const std::size_t n = shape[axis];
        const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? shape[0] : shape[0] * shape[1]);
        const std::size_t other_a = shape[(axis + 1) % 3], other_b = shape[(axis + 2) % 3];
        line.resize(n);
        auto vox = out.voxels();
        for (std::size_t a = 0; a < other_a; ++a) {
            for (std::size_t b = 0; b < other_b; ++b) {
                std::array<std::size_t, 3> idx{};
                idx[(axis + 1) % 3] = a;
                idx[(axis + 2) % 3] = b;
                idx[axis] = 0;
                const std::size_t base = out.index(idx[0], idx[1], idx[2]);
                for (std::size_t i = 0; i < n; ++i) line[i] = vox[base + i * stride];
                for (std::size_t i = 0; i < n; ++i) {
                    double acc = 0.0;
                    for (long k = -radius; k <= radius; ++k) {
                        const long j = static_cast<long>(i) + k;
                        if (j < 0 || j >= static_cast<long>(n)) continue;
                        acc += kernel[static_cast<std::size_t>(k + radius)] * line[static_cast<std::size_t>(j)];
                    }
                    vox[base + i * stride] = acc;
                }
            }
        }
    }
    return out;
}

Volume correct_bias_field(const Volume& volume, double smoothing_scale_mm) {
    if (!(smoothing_scale_mm > 0.0)) fail(ErrorKind::config, "bias correction smoothing scale must be positive");
    for (double v : volume.voxels()) {
        require(std::isfinite(v) && v >= 0.0, "correct_bias_field requires non-negative finite voxels");
    }
    const auto mask = foreground_mask(volume);
    const std::size_t fg = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    if (fg == 0) return volume;

    Volume log_masked(volume.shape(), volume.spacing, volume.origin_offset);
    Volume weight(volume.shape(), volume.spacing, volume.origin_offset);
    const auto vox = volume.voxels();
    for (std::size_t i = 0; i < vox.size(); ++i) {
        if (mask[i]) {
            log_masked.voxels()[i] = std::log(vox[i]);
            weight.voxels()[i] = 1.0;
        }
    }
    // normalized convolution keeps the background from dragging the field estimate down
    const Volume num = gaussian_smooth(log_masked, smoothing_scale_mm);
    const Volume den = gaussian_smooth(weight, smoothing_scale_mm);

    Volume out = volume;
    auto ov = out.voxels();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        if (!mask[i]) continue;
        const double field = num.voxels()[i] / den.voxels()[i];
        ov[i] = std::exp(log_masked.voxels()[i] - field);
    }
    const double target = foreground_mean(volume, mask);
    const double current = foreground_mean(out, mask);
    const double scale = target / current;
    for (std::size_t i = 0; i < ov.size(); ++i) {
        if (mask[i]) ov[i] *= scale;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

template <typename Fn>
void for_each_mapped(const Volume& grid, const RigidTransform& inverse, const Volume& source, Fn&& fn) {
    const auto rot = inverse.rotation_matrix();
    const auto shape = grid.shape();
    const Vec3 half{0.5 * (static_cast<double>(source.shape()[0]) - 1.0),
                    0.5 * (static_cast<double>(source.shape()[1]) - 1.0),
                    0.5 * (static_cast<double>(source.shape()[2]) - 1.0)};
    std::size_t i = 0;
    for (std::size_t z = 0; z < shape[2]; ++z) {
        for (std::size_t y = 0; y < shape[1]; ++y) {
            for (std::size_t x = 0; x < shape[0]; ++x, ++i) {
                const Vec3 p = grid.centered_position(static_cast<double>(x), static_cast<double>(y),
                                                      static_cast<double>(z));
                Vec3 q = multiply(rot, p);
                for (int a = 0; a < 3; ++a) q[a] = (q[a] + inverse.translation[a]) / source.spacing[a] + half[a];
                fn(i, source.sample(q[0], q[1], q[2]));
            }
        }
    }
}

}  // namespace

Volume apply_transform(const Volume& moving, const RigidTransform& transform) {
    Volume out(moving.shape(), moving.spacing, moving.origin_offset);
    out.subject_id = moving.subject_id;
    auto ov = out.voxels();
    for_each_mapped(moving, transform.inverse(), moving, [&](std::size_t i, double v) { ov[i] = v; });
    return out;
}

Volume resample_to_grid(const Volume& volume, const Volume& reference_grid) {
    Volume out(reference_grid.shape(), reference_grid.spacing, reference_grid.origin_offset);
    out.subject_id = volume.subject_id;
    const auto shape = out.shape();
    auto ov = out.voxels();
    std::size_t i = 0;
    for (std::size_t z = 0; z < shape[2]; ++z)
        for (std::size_t y = 0; y < shape[1]; ++y)
            for (std::size_t x = 0; x < shape[0]; ++x, ++i) {
                const Vec3 p{out.origin_offset[0] + out.spacing[0] * static_cast<double>(x),
                             out.origin_offset[1] + out.spacing[1] * static_cast<double>(y),
                             out.origin_offset[2] + out.spacing[2] * static_cast<double>(z)};
                ov[i] = volume.sample((p[0] - volume.origin_offset[0]) / volume.spacing[0],
                                      (p[1] - volume.origin_offset[1]) / volume.spacing[1],
                                      (p[2] - volume.origin_offset[2]) / volume.spacing[2]);
            }
    return out;
}

Volume downsample2(const Volume& volume) {
    const auto s = volume.shape();
    const Shape half{std::max<std::size_t>(1, s[0] / 2), std::max<std::size_t>(1, s[1] / 2),
                     std::max<std::size_t>(1, s[2] / 2)};
    Volume out(half, {volume.spacing[0] * 2, volume.spacing[1] * 2, volume.spacing[2] * 2},
               {volume.origin_offset[0] + 0.5 * volume.spacing[0], volume.origin_offset[1] + 0.5 * volume.spacing[1],
                volume.origin_offset[2] + 0.5 * volume.spacing[2]});
    for (std::size_t z = 0; z < half[2]; ++z)
        for (std::size_t y = 0; y < half[1]; ++y)
            for (std::size_t x = 0; x < half[0]; ++x) {
                double acc = 0.0;
                int n = 0;
                for (std::size_t dz = 0; dz < 2; ++dz)
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t xx = 2 * x + dx, yy = 2 * y + dy, zz = 2 * z + dz;
                            if (xx < s[0] && yy < s[1] && zz < s[2]) {
                                acc += volume.at(xx, yy, zz);
                                ++n;
                            }
                        }
                out.at(x, y, z) = acc / n;
            }
    return out;
}

namespace {

struct Moments {
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    std::size_t n = 0;
    void add(double a, double b) noexcept {
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
        ++n;
    }
    double ncc() const noexcept {
        const double dn = static_cast<double>(n);
        const double cov = sab - sa * sb / dn;
        const double va = saa - sa * sa / dn;
        const double vb = sbb - sb * sb / dn;
        if (va <= 0.0 || vb <= 0.0) return 0.0;
        return cov / std::sqrt(va * vb);
    }
};

double ncc_under(const Volume& fixed, const Volume& moving, const RigidTransform& transform) {
    Moments m;
    const auto fv = fixed.voxels();
    for_each_mapped(fixed, transform.inverse(), moving, [&](std::size_t i, double v) { m.add(fv[i], v); });
    return m.ncc();
}

}  // namespace

double normalized_cross_correlation(const Volume& a, const Volume& b) {
    require(a.shape() == b.shape(), "normalized_cross_correlation requires equal shapes");
    Moments m;
    const auto av = a.voxels(), bv = b.voxels();
    for (std::size_t i = 0; i < av.size(); ++i) m.add(av[i], bv[i]);
    return m.ncc();
}

nlohmann::json to_json(const RegistrationConfig& c) {
    return {{"pyramid_levels", c.pyramid_levels},
            {"max_iterations", c.max_iterations},
            {"initial_translation_step_voxels", c.initial_translation_step_voxels},
            {"initial_rotation_step", c.initial_rotation_step},
            {"min_translation_step_voxels", c.min_translation_step_voxels},
            {"min_rotation_step", c.min_rotation_step},
            {"coarse_search_radius_voxels", c.coarse_search_radius_voxels}};
}

RegistrationConfig registration_config_from_json(const nlohmann::json& j) {
    RegistrationConfig c;
    c.pyramid_levels = j.value("pyramid_levels", c.pyramid_levels);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.initial_translation_step_voxels = j.value("initial_translation_step_voxels", c.initial_translation_step_voxels);
    c.initial_rotation_step = j.value("initial_rotation_step", c.initial_rotation_step);
    c.min_translation_step_voxels = j.value("min_translation_step_voxels", c.min_translation_step_voxels);
    c.min_rotation_step = j.value("min_rotation_step", c.min_rotation_step);
    c.coarse_search_radius_voxels = j.value("coarse_search_radius_voxels", c.coarse_search_radius_voxels);
    if (c.pyramid_levels < 1) fail(ErrorKind::config, "registration pyramid_levels must be >= 1");
    if (c.max_iterations < 1) fail(ErrorKind::config, "registration max_iterations must be >= 1");
    return c;
}

RegistrationResult register_rigid(const Volume& moving_in, const Volume& fixed, const RegistrationConfig& config) {
    if (config.pyramid_levels < 1 || config.max_iterations < 1) {
        fail(ErrorKind::config, "registration needs at least one pyramid level and one iteration");
    }
    const Volume moving = same_grid(moving_in, fixed) ? moving_in : resample_to_grid(moving_in, fixed);

    std::vector<Volume> fixed_pyr{fixed}, moving_pyr{moving};
    for (int l = 1; l < config.pyramid_levels; ++l) {
        const auto& s = fixed_pyr.back().shape();
        if (std::min({s[0], s[1], s[2]}) < 16) break;
        fixed_pyr.push_back(downsample2(fixed_pyr.back()));
        moving_pyr.push_back(downsample2(moving_pyr.back()));
    }
    const int levels = static_cast<int>(fixed_pyr.size());

    RegistrationResult result;
    std::array<double, 6> params{};  // rx, ry, rz, tx, ty, tz
    auto to_transform = [](const std::array<double, 6>& p) {
        RigidTransform t;
        t.rotation = {p[0], p[1], p[2]};
        t.translation = {p[3], p[4], p[5]};
        return t;
    };
    double best = 0.0;

    for (int level = levels - 1; level >= 0; --level) {
        const Volume& f = fixed_pyr[static_cast<std::size_t>(level)];
        const Volume& m = moving_pyr[static_cast<std::size_t>(level)];
        auto score = [&](const std::array<double, 6>& p) {
            ++result.evaluations;
            return ncc_under(f, m, to_transform(p));
        };
        best = score(params);

        if (level == levels - 1 && config.coarse_search_radius_voxels > 0) {
            const int r = config.coarse_search_radius_voxels;
            const auto start = params;
            for (int dz = -r; dz <= r; ++dz)
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        auto p = start;
                        p[3] += dx * f.spacing[0];
                        p[4] += dy * f.spacing[1];
                        p[5] += dz * f.spacing[2];
                        const double s = score(p);
                        if (s > best) {
                            best = s;
                            params = p;
                        }
                    }
            if (best < 0.0) {
                fail(ErrorKind::registration,
                     "registration failed: no overlap after coarse search (NCC " + std::to_string(best) + ")");
            }
        }

        const double level_spacing = (f.spacing[0] + f.spacing[1] + f.spacing[2]) / 3.0;
        double tstep = config.initial_translation_step_voxels * level_spacing;
        double rstep = config.initial_rotation_step * std::pow(0.5, levels - 1 - level);
        const double tmin = config.min_translation_step_voxels * level_spacing;
        bool level_converged = false;
        for (int it = 0; it < config.max_iterations; ++it) {
            std::array<double, 6> best_p = params;
            double best_s = best;
            for (int k = 0; k < 6; ++k) {
                const double step = k < 3 ? rstep : tstep;
                if ((k < 3 && rstep < config.min_rotation_step) || (k >= 3 && tstep < tmin)) continue;
                for (double sign : {1.0, -1.0}) {
                    auto p = params;
                    p[static_cast<std::size_t>(k)] += sign * step;
                    const double s = score(p);
                    if (s > best_s) {
                        best_s = s;
                        best_p = p;
                    }
                }
            }
            if (best_s > best) {
                best = best_s;
                params = best_p;
                continue;
            }
            tstep *= 0.5;
            rstep *= 0.5;
            if (tstep < tmin && rstep < config.min_rotation_step) {
                level_converged = true;
                break;
            }
        }
        if (level == 0) result.converged = level_converged;
    }

    if (!result.converged) {
        spdlog::warn("rigid registration hit its iteration budget; returning best-so-far (NCC {:.4f})", best);
    }
    result.transform = to_transform(params);
    for (auto& a : result.transform.rotation) a = wrap_angle(a);
    result.ncc = best;
    result.registered = apply_transform(moving, result.transform);
    result.registered.subject_id = moving_in.subject_id;
    return result;
}

}  // namespace adasmtl::imaging
