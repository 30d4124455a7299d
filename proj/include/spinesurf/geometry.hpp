#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "spinesurf/common.hpp"

namespace spinesurf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Phased-array sector geometry.
//
// The image plane is embedded in frame coordinates with x = lateral,
// z = depth and y = elevation (out of plane). The sector apex sits at the
// frame origin; ray angles are measured from the beam axis (+z).
// ---------------------------------------------------------------------------
struct ImageGeometry {
    double depth_min_m = 0.0;
    double depth_max_m = 0.1;
    double fov_rad = 1.0;  // full sector opening
    int n_rays = 2;
    int n_samples = 2;

    void validate() const {
        if (!(depth_min_m >= 0.0) || !(depth_min_m < depth_max_m))
            throw DomainError("invalid geometry: require 0 <= depth_min < depth_max");
        if (!(fov_rad > 0.0) || !(fov_rad < M_PI))
            throw DomainError("invalid geometry: require 0 < fov < pi");
        if (n_rays < 2 || n_samples < 2)
            throw DomainError("invalid geometry: require n_rays >= 2 and n_samples >= 2");
    }

    double ray_angle(int k) const {
        return -0.5 * fov_rad + static_cast<double>(k) * fov_rad / (n_rays - 1);
    }
    double sample_depth(int s) const {
        return depth_min_m + static_cast<double>(s) * (depth_max_m - depth_min_m) / (n_samples - 1);
    }
    double angle_step() const { return fov_rad / (n_rays - 1); }
    double depth_step() const { return (depth_max_m - depth_min_m) / (n_samples - 1); }

    bool inside_sector(double r, double theta) const {
        return r >= depth_min_m && r <= depth_max_m && std::abs(theta) <= 0.5 * fov_rad;
    }

    bool operator==(const ImageGeometry&) const = default;
};

/// Polar (ray x sample) scalar image. Stored row-major by sample so that a
/// "row" in the feature-extraction sense is one depth across all rays.
struct PolarImage {
    ImageGeometry geometry;
    std::vector<double> data;  // size n_rays * n_samples, index s * n_rays + k

    PolarImage() = default;
    explicit PolarImage(const ImageGeometry& g, double fill = 0.0)
        : geometry(g), data(static_cast<std::size_t>(g.n_rays) * g.n_samples, fill) {}

    double& at(int ray, int sample) {
        return data[static_cast<std::size_t>(sample) * geometry.n_rays + ray];
    }
    double at(int ray, int sample) const {
        return data[static_cast<std::size_t>(sample) * geometry.n_rays + ray];
    }

    void validate() const {
        geometry.validate();
        if (data.size() != static_cast<std::size_t>(geometry.n_rays) * geometry.n_samples)
            throw DomainError("polar image: data size does not match geometry");
        for (double v : data)
            if (!std::isfinite(v)) throw DomainError("polar image: non-finite value");
    }
};

/// Cartesian sector image with an inside-sector mask. Pixel (col, row) center
/// sits at origin_m + pixel_size_m * (col, row), with origin_m = (x, z) of
/// pixel (0, 0). Masked-out pixels carry value 0.
struct CartesianImage {
    int width_px = 0;
    int height_px = 0;
    double pixel_size_m = 0.0;
    Vec2 origin_m = Vec2::Zero();  // (x, z) of pixel (0,0)
    std::vector<double> data;
    std::vector<std::uint8_t> mask;

    CartesianImage() = default;
    CartesianImage(int w, int h, double px, const Vec2& origin)
        : width_px(w), height_px(h), pixel_size_m(px), origin_m(origin),
          data(static_cast<std::size_t>(w) * h, 0.0),
          mask(static_cast<std::size_t>(w) * h, 0) {}

    double& at(int col, int row) { return data[static_cast<std::size_t>(row) * width_px + col]; }
    double at(int col, int row) const { return data[static_cast<std::size_t>(row) * width_px + col]; }
    std::uint8_t& mask_at(int col, int row) { return mask[static_cast<std::size_t>(row) * width_px + col]; }
    std::uint8_t mask_at(int col, int row) const { return mask[static_cast<std::size_t>(row) * width_px + col]; }

    Vec2 pixel_center(int col, int row) const {
        return origin_m + pixel_size_m * Vec2(col, row);
    }

    void validate() const {
        if (width_px <= 0 || height_px <= 0 || !(pixel_size_m > 0.0))
            throw DomainError("cartesian image: invalid lattice");
        const std::size_t n = static_cast<std::size_t>(width_px) * height_px;
        if (data.size() != n || mask.size() != n)
            throw DomainError("cartesian image: data/mask size mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(data[i])) throw DomainError("cartesian image: non-finite value");
            if (!mask[i] && data[i] != 0.0)
                throw DomainError("cartesian image: masked-out pixel carries nonzero value");
        }
    }
};

// ---------------------------------------------------------------------------
// Rigid transforms and 2-DOF scanner kinematics.
// ---------------------------------------------------------------------------
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

    Pose compose(const Pose& rhs) const {  // this after rhs: (this o rhs)(p)
        return Pose{rotation * rhs.rotation, rotation * rhs.translation + translation};
    }

    Pose inverse() const {
        Mat3 rt = rotation.transpose();
        return Pose{rt, -(rt * translation)};
    }

    void validate(double tol = 1e-9) const {
        if (((rotation * rotation.transpose()) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
            throw DomainError("pose: rotation is not orthonormal");
        if (std::abs(rotation.determinant() - 1.0) > tol)
            throw DomainError("pose: rotation determinant != +1");
    }
};

struct ScanKinematics {
    Vec3 sweep_axis = Vec3::UnitX();
    Vec3 sweep_pivot = Vec3::Zero();
    Vec3 carriage_axis = Vec3::UnitY();

    void validate(double tol = 1e-9) const {
        if (std::abs(sweep_axis.norm() - 1.0) > tol || std::abs(carriage_axis.norm() - 1.0) > tol)
            throw DomainError("invalid kinematics: axes must be unit length");
    }
};

enum class SweepDirection { forward, backward };

inline const char* to_string(SweepDirection d) {
    return d == SweepDirection::forward ? "forward" : "backward";
}
inline SweepDirection sweep_direction_from_string(const std::string& s) {
    if (s == "forward") return SweepDirection::forward;
    if (s == "backward") return SweepDirection::backward;
    throw DomainError("unknown sweep direction: " + s);
}

struct FrameRecord {
    int frame_id = 0;
    int sweep_id = 0;
    SweepDirection sweep_direction = SweepDirection::forward;
    double joint_theta_rad = 0.0;
    double joint_t_m = 0.0;
    Pose pose;
};

/// Ordered frames grouped into sweeps, with the kinematics that produced them.
struct FrameSequence {
    ScanKinematics kinematics;
    std::vector<FrameRecord> frames;

    std::vector<std::size_t> sweep_starts() const {
        std::vector<std::size_t> starts;
        for (std::size_t i = 0; i < frames.size(); ++i)
            if (i == 0 || frames[i].sweep_id != frames[i - 1].sweep_id) starts.push_back(i);
        return starts;
    }
};

/// Rodrigues rotation about a unit axis.
inline Mat3 axis_angle_rotation(const Vec3& axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 k;
    k << 0, -axis.z(), axis.y(),
         axis.z(), 0, -axis.x(),
         -axis.y(), axis.x(), 0;
    return Mat3::Identity() * c + k * s + axis * axis.transpose() * (1.0 - c);
}

/// Pose = Translate(t * carriage_axis) o RotateAbout(pivot, sweep_axis, theta).
inline Pose pose_from_joints(const ScanKinematics& kin, double theta, double t) {
    kin.validate();
    if (!std::isfinite(theta) || !std::isfinite(t))
        throw DomainError("pose_from_joints: non-finite joint value");
    const Mat3 r = axis_angle_rotation(kin.sweep_axis, theta);
    Pose pose;
    pose.rotation = r;
    pose.translation = t * kin.carriage_axis + (kin.sweep_pivot - r * kin.sweep_pivot);
    return pose;
}

/// World position of polar bin (ray, sample) under a frame pose.
inline Vec3 pixel_to_world(const ImageGeometry& geo, const Pose& pose, int ray, int sample) {
    if (ray < 0 || ray >= geo.n_rays || sample < 0 || sample >= geo.n_samples)
        throw DomainError("pixel_to_world: index out of range");
    const double a = geo.ray_angle(ray);
    const double d = geo.sample_depth(sample);
    return pose * Vec3(d * std::sin(a), 0.0, d * std::cos(a));
}

/// In-plane (x, z) position of polar bin (ray, sample) in frame coordinates.
inline Vec2 bin_plane_position(const ImageGeometry& geo, int ray, int sample) {
    const double a = geo.ray_angle(ray);
    const double d = geo.sample_depth(sample);
    return Vec2(d * std::sin(a), d * std::cos(a));
}

namespace detail {

inline double bilinear_polar(const PolarImage& img, double u_ray, double v_sample) {
    const int nr = img.geometry.n_rays, ns = img.geometry.n_samples;
    const int k0 = std::clamp(static_cast<int>(std::floor(u_ray)), 0, nr - 1);
    const int s0 = std::clamp(static_cast<int>(std::floor(v_sample)), 0, ns - 1);
    const int k1 = std::min(k0 + 1, nr - 1);
    const int s1 = std::min(s0 + 1, ns - 1);
    const double fu = std::clamp(u_ray - k0, 0.0, 1.0);
    const double fv = std::clamp(v_sample - s0, 0.0, 1.0);
    const double a = img.at(k0, s0) * (1 - fu) + img.at(k1, s0) * fu;
    const double b = img.at(k0, s1) * (1 - fu) + img.at(k1, s1) * fu;
    return a * (1 - fv) + b * fv;
}

/// Bilinear read that ignores masked-out pixels (their stored zeros would
/// otherwise bleed into valid samples near the mask edge); weights of the
/// remaining corners are renormalized.
inline double bilinear_cartesian(const CartesianImage& img, double fx, double fy) {
    const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width_px - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height_px - 1);
    const int x1 = std::min(x0 + 1, img.width_px - 1);
    const int y1 = std::min(y0 + 1, img.height_px - 1);
    const double fu = std::clamp(fx - x0, 0.0, 1.0);
    const double fv = std::clamp(fy - y0, 0.0, 1.0);
    double acc = 0.0, wsum = 0.0;
    const auto corner = [&](int x, int y, double w) {
        if (w > 0.0 && img.mask_at(x, y)) {
            acc += w * img.at(x, y);
            wsum += w;
        }
    };
    corner(x0, y0, (1 - fu) * (1 - fv));
    corner(x1, y0, fu * (1 - fv));
    corner(x0, y1, (1 - fu) * fv);
    corner(x1, y1, fu * fv);
    return wsum > 0.0 ? acc / wsum : 0.0;
}

}  // namespace detail

/// Cartesian lattice bounding the full sector of `geo` with one pixel of
/// total margin per axis, centered on the sector's bounding box.
inline CartesianImage make_sector_lattice(const ImageGeometry& geo, double pixel_size) {
    geo.validate();
    if (!(pixel_size > 0.0)) throw DomainError("scan conversion: pixel_size must be > 0");
    const double half = 0.5 * geo.fov_rad;
    const double xmax = std::sin(half) * geo.depth_max_m;
    const double zmin = std::cos(half) * geo.depth_min_m;
    const double zmax = geo.depth_max_m;
    const int w = static_cast<int>(std::ceil(2.0 * xmax / pixel_size)) + 2;
    const int h = static_cast<int>(std::ceil((zmax - zmin) / pixel_size)) + 2;
    Vec2 origin(-0.5 * (w - 1) * pixel_size,
                0.5 * (zmin + zmax) - 0.5 * (h - 1) * pixel_size);
    return CartesianImage(w, h, pixel_size, origin);
}

/// Resample a polar image onto an existing Cartesian lattice (dims, pixel
/// size and origin of `out` are kept; data/mask are overwritten).
inline void polar_to_cartesian_into(const PolarImage& img, CartesianImage& out) {
    img.validate();
    const ImageGeometry& geo = img.geometry;
    for (int row = 0; row < out.height_px; ++row) {
        for (int col = 0; col < out.width_px; ++col) {
            const Vec2 p = out.pixel_center(col, row);
            const double r = p.norm();
            const double theta = std::atan2(p.x(), p.y());
            if (geo.inside_sector(r, theta)) {
                const double u = (theta + 0.5 * geo.fov_rad) / geo.angle_step();
                const double v = (r - geo.depth_min_m) / geo.depth_step();
                out.at(col, row) = detail::bilinear_polar(img, u, v);
                out.mask_at(col, row) = 1;
            } else {
                out.at(col, row) = 0.0;
                out.mask_at(col, row) = 0;
            }
        }
    }
}

/// Scan-convert polar -> Cartesian on an auto-sized lattice.
inline CartesianImage polar_to_cartesian(const PolarImage& img, double pixel_size) {
    CartesianImage out = make_sector_lattice(img.geometry, pixel_size);
    polar_to_cartesian_into(img, out);
    return out;
}

/// Scan-convert Cartesian -> polar onto the lattice of `geo`. Samples whose
/// Cartesian location is masked out become 0.
inline PolarImage cartesian_to_polar(const CartesianImage& img, const ImageGeometry& geo) {
    geo.validate();
    img.validate();
    PolarImage out(geo);
    for (int s = 0; s < geo.n_samples; ++s) {
        for (int k = 0; k < geo.n_rays; ++k) {
            const Vec2 p = bin_plane_position(geo, k, s);
            const double fx = (p.x() - img.origin_m.x()) / img.pixel_size_m;
            const double fy = (p.y() - img.origin_m.y()) / img.pixel_size_m;
            if (fx < 0.0 || fx > img.width_px - 1 || fy < 0.0 || fy > img.height_px - 1)
                throw DomainError("cartesian_to_polar: sector extends beyond image bounds");
            const int nx = std::clamp(static_cast<int>(std::lround(fx)), 0, img.width_px - 1);
            const int ny = std::clamp(static_cast<int>(std::lround(fy)), 0, img.height_px - 1);
            out.at(k, s) = img.mask_at(nx, ny) ? detail::bilinear_cartesian(img, fx, fy) : 0.0;
        }
    }
    return out;
}

}  // namespace spinesurf
