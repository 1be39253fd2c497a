#pragma once

#include <cmath>
#include <cstddef>

#include "imaging.hpp"

namespace testsupport {

/// Smooth asymmetric phantom: a broad central blob plus three off-center
/// blobs, so every rigid motion changes the image.
inline adasmtl::imaging::Volume blob_phantom(std::size_t n, double spacing = 2.0) {
    adasmtl::imaging::Volume v({n, n, n}, {spacing, spacing, spacing});
    struct Blob {
        double x, y, z, r, a;
    };
    const Blob blobs[] = {{0.5, 0.5, 0.5, 0.22, 0.5},
                          {0.3, 0.4, 0.6, 0.08, 1.0},
                          {0.65, 0.3, 0.45, 0.1, 0.8},
                          {0.55, 0.7, 0.35, 0.06, 0.9}};
    const double nd = static_cast<double>(n);
    for (std::size_t z = 0; z < n; ++z) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                double value = 0.0;
                for (const auto& b : blobs) {
                    const double dx = static_cast<double>(x) / nd - b.x;
                    const double dy = static_cast<double>(y) / nd - b.y;
                    const double dz = static_cast<double>(z) / nd - b.z;
                    value += b.a * std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * b.r * b.r));
                }
                v.at(x, y, z) = value;
            }
        }
    }
    return v;
}

/// Uniform ellipsoid (intensity 1) and zero background.
inline adasmtl::imaging::Volume flat_ellipsoid(std::size_t n, double spacing = 2.0) {
    adasmtl::imaging::Volume v({n, n, n}, {spacing, spacing, spacing});
    const double c = 0.5 * (static_cast<double>(n) - 1.0);
    const double ax = 0.41 * static_cast<double>(n), ay = 0.34 * static_cast<double>(n), az = 0.31 * static_cast<double>(n);
    for (std::size_t z = 0; z < n; ++z) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                const double dx = (static_cast<double>(x) - c) / ax;
                const double dy = (static_cast<double>(y) - c) / ay;
                const double dz = (static_cast<double>(z) - c) / az;
                if (dx * dx + dy * dy + dz * dz <= 1.0) v.at(x, y, z) = 1.0;
            }
        }
    }
    return v;
}

/// Flat ellipsoid multiplied by a linear gain ramp from 0.7 to 1.3 along x.
inline adasmtl::imaging::Volume planted_gain_phantom(std::size_t n, double spacing = 2.0) {
    auto v = flat_ellipsoid(n, spacing);
    const double last = static_cast<double>(n - 1);
    for (std::size_t z = 0; z < n; ++z) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                v.at(x, y, z) *= 0.7 + 0.6 * static_cast<double>(x) / last;
            }
        }
    }
    return v;
}

}  // namespace testsupport
