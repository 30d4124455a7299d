// Shared fixtures and generators for the test suite.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "spinesurf/spinesurf.hpp"

namespace testsup {

using namespace spinesurf;

/// Fresh per-test scratch directory under the working directory.
inline std::filesystem::path tmp_dir(const std::string& name) {
    const std::filesystem::path p = std::filesystem::path("test_tmp") / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline ImageGeometry small_geometry(int rays = 32, int samples = 32) {
    ImageGeometry g;
    g.depth_min_m = 0.015;
    g.depth_max_m = 0.090;
    g.fov_rad = 50.0 * M_PI / 180.0;
    g.n_rays = rays;
    g.n_samples = samples;
    return g;
}

inline ImageGeometry bench_geometry() { return small_geometry(64, 64); }

/// Random image with values in [lo, hi).
inline PolarImage random_polar(const ImageGeometry& geo, std::uint64_t seed, double lo = 0.0,
                               double hi = 1.0) {
    PolarImage img(geo);
    Rng rng(seed);
    for (double& v : img.data) v = lo + (hi - lo) * rng.uniform();
    return img;
}

/// Horizontal Gaussian ridge at a given sample row with given amplitude on a
/// small background.
inline PolarImage ridge_polar(const ImageGeometry& geo, double ridge_row, double amplitude,
                              double sigma_rows = 1.5, double background = 0.02) {
    PolarImage img(geo, background);
    for (int s = 0; s < geo.n_samples; ++s)
        for (int k = 0; k < geo.n_rays; ++k) {
            const double d = s - ridge_row;
            img.at(k, s) += amplitude * std::exp(-d * d / (2.0 * sigma_rows * sigma_rows));
        }
    return img;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Per-column argmax of a polar image along samples.
inline int column_argmax(const PolarImage& img, int ray) {
    int best = 0;
    for (int s = 1; s < img.geometry.n_samples; ++s)
        if (img.at(ray, s) > img.at(ray, best)) best = s;
    return best;
}

/// Angle (deg) of the relative rotation between two poses. Quaternion-based:
/// acos of the trace loses ~1e-6 deg of resolution near identity.
inline double rotation_error_deg(const Mat3& a, const Mat3& b) {
    const Eigen::Quaterniond q(Mat3(a * b.transpose()));
    return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w())) * 180.0 / M_PI;
}

}  // namespace testsup
