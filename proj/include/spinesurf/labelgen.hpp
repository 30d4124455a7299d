#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "spinesurf/common.hpp"
#include "spinesurf/geometry.hpp"
#include "spinesurf/mesh.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// ICP registration of an annotated point cloud to a surface mesh.
// ---------------------------------------------------------------------------
struct IcpResult {
    Pose transform;
    double rmse_m = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> rmse_history;  // one entry per evaluated iterate, monotone
};

namespace detail {

/// Optimal rigid transform mapping src onto dst (Kabsch, SVD with reflection fix).
inline Pose kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    const std::size_t n = src.size();
    Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        cs += src[i];
        cd += dst[i];
    }
    cs /= static_cast<double>(n);
    cd /= static_cast<double>(n);
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < n; ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    Pose out;
    out.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    out.translation = cd - out.rotation * cs;
    return out;
}

inline void require_noncollinear(const std::vector<Vec3>& pts) {
    if (pts.size() < 3) throw DomainError("icp: need at least 3 source points");
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : pts) cov += (p - centroid) * (p - centroid).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const double largest = eig.eigenvalues()(2);
    if (largest <= 0.0 || eig.eigenvalues()(1) < 1e-12 * largest)
        throw DomainError("icp: source points are collinear");
}

}  // namespace detail

inline IcpResult icp_register(const PointCloud& source, const TriangleMesh& target, int max_iter,
                              double tol, const Pose& init = Pose{}) {
    detail::require_noncollinear(source.points);
    if (target.empty()) throw DomainError("icp: target mesh is empty");
    if (max_iter < 1) throw DomainError("icp: max_iter must be >= 1");
    const MeshBvh bvh(target);

    // Unit normals per target triangle, for the point-to-plane step.
    std::vector<Vec3> tri_normal(target.triangles.size());
    for (std::size_t t = 0; t < target.triangles.size(); ++t) {
        const auto& tri = target.triangles[t];
        const Vec3 n = (target.vertices[tri[1]] - target.vertices[tri[0]])
                           .cross(target.vertices[tri[2]] - target.vertices[tri[0]]);
        const double len = n.norm();
        tri_normal[t] = len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
    }

    const auto eval_rmse = [&](const Pose& t) {
        double acc = 0.0;
        for (const Vec3& p : source.points) {
            const double d = bvh.closest_point(t * p).distance;
            acc += d * d;
        }
        return std::sqrt(acc / static_cast<double>(source.points.size()));
    };

    IcpResult result;
    result.transform = init;
    result.rmse_m = eval_rmse(init);
    result.rmse_history.push_back(result.rmse_m);
    for (int it = 1; it <= max_iter; ++it) {
        const std::size_t n = source.points.size();
        std::vector<Vec3> moved(n), corr(n), normal(n);
        for (std::size_t i = 0; i < n; ++i) {
            moved[i] = result.transform * source.points[i];
            const SurfacePoint sp = bvh.closest_point(moved[i]);
            corr[i] = sp.point;
            normal[i] = tri_normal[static_cast<std::size_t>(sp.triangle)];
        }

        // Point-to-plane Gauss-Newton increment: minimize
        //   sum_i (n_i . (x_i + omega x x_i + delta - q_i))^2
        // over the twist (omega, delta), where x_i is the moved source point
        // and q_i its closest surface point. Plain point-to-point ICP slides
        // vanishingly slowly along smooth surfaces; the plane metric does not.
        Eigen::Matrix<double, 6, 6> ata = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> atb = Eigen::Matrix<double, 6, 1>::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::Matrix<double, 6, 1> a;
            a.head<3>() = moved[i].cross(normal[i]);
            a.tail<3>() = normal[i];
            ata += a * a.transpose();
            atb += a * (-normal[i].dot(moved[i] - corr[i]));
        }
        Pose plane_cand;
        bool have_plane = false;
        const Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(ata);
        if (ldlt.info() == Eigen::Success) {
            const Eigen::Matrix<double, 6, 1> xi = ldlt.solve(atb);
            if (xi.allFinite()) {
                const Vec3 omega = xi.head<3>();
                const double angle = omega.norm();
                const Mat3 inc = angle > 0.0
                                     ? Mat3(Eigen::AngleAxisd(angle, Vec3(omega / angle)))
                                     : Mat3(Mat3::Identity());
                plane_cand.rotation = inc * result.transform.rotation;
                plane_cand.translation = inc * result.transform.translation + xi.tail<3>();
                have_plane = true;
            }
        }

        // Point-to-point (Kabsch) candidate as a safety net: the plane step
        // can overshoot far from the optimum, Kabsch never diverges.
        Pose updated = detail::kabsch(source.points, corr);
        double rmse = eval_rmse(updated);
        if (have_plane) {
            const double plane_rmse = eval_rmse(plane_cand);
            if (plane_rmse < rmse) {
                updated = plane_cand;
                rmse = plane_rmse;
            }
        }

        result.iterations = it;
        const double improvement = result.rmse_m - rmse;
        if (rmse <= result.rmse_m) {
            result.transform = updated;
            result.rmse_m = rmse;
            result.rmse_history.push_back(rmse);
        }
        if (improvement < tol) {
            result.converged = true;
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Per-frame scanline ray casting, shared by label generation and the B-mode
// simulator so exact labels coincide by construction.
// ---------------------------------------------------------------------------
inline std::vector<std::optional<RayHit>> cast_frame_rays(const MeshBvh& bvh, const Pose& pose,
                                                          const ImageGeometry& geo) {
    geo.validate();
    pose.validate();
    std::vector<std::optional<RayHit>> hits(geo.n_rays);
    if (bvh.empty()) return hits;
    const Vec3 origin = pose.translation;
    for (int k = 0; k < geo.n_rays; ++k) {
        const double a = geo.ray_angle(k);
        const Vec3 dir = pose.rotation * Vec3(std::sin(a), 0.0, std::cos(a));
        hits[k] = bvh.first_hit(origin, dir.normalized());
    }
    return hits;
}

namespace detail {

/// Incidence angle between the beam and the reversed surface normal, given a
/// hit whose normal is oriented to face the ray.
inline double incidence_angle(const RayHit& hit, const Vec3& dir) {
    const double c = std::clamp(-dir.dot(hit.normal), -1.0, 1.0);
    return std::acos(c);
}

/// Places a 1 in the nearest (ray, sample) bin for every gated first hit.
inline PolarImage binary_hit_map(const std::vector<std::optional<RayHit>>& hits, const Pose& pose,
                                 const ImageGeometry& geo, double max_incidence_rad) {
    PolarImage binary(geo);
    for (int k = 0; k < geo.n_rays; ++k) {
        if (!hits[k]) continue;
        const RayHit& hit = *hits[k];
        if (hit.t < geo.depth_min_m || hit.t > geo.depth_max_m) continue;
        const double a = geo.ray_angle(k);
        const Vec3 dir = (pose.rotation * Vec3(std::sin(a), 0.0, std::cos(a))).normalized();
        if (incidence_angle(hit, dir) > max_incidence_rad) continue;
        const int s = static_cast<int>(std::lround((hit.t - geo.depth_min_m) / geo.depth_step()));
        binary.at(k, std::clamp(s, 0, geo.n_samples - 1)) = 1.0;
    }
    return binary;
}

/// Gaussian soft-dilation: every bin takes the strongest Gaussian falloff
/// exp(-d^2 / (2 sigma^2)) from any hit. A summed convolution would saturate
/// over a dense surface curve and flatten its crest; taking the max keeps each
/// scanline's peak exactly on its hit bin while isolated hits still peak at 1
/// and taper like the plain Gaussian. Separable in the (max, *) semiring.
inline PolarImage soften_hits(const PolarImage& binary, double sigma_px) {
    if (!(sigma_px > 0.0)) throw DomainError("soften_hits: sigma_px must be > 0");
    const int rows = binary.geometry.n_samples;
    const int cols = binary.geometry.n_rays;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.5 * sigma_px)));
    std::vector<double> kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i)
        kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma_px * sigma_px));

    PolarImage tmp(binary.geometry), out(binary.geometry);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int cc = c + i;
                if (cc >= 0 && cc < cols)
                    acc = std::max(acc, kernel[i + radius] *
                                            binary.data[static_cast<std::size_t>(r) * cols + cc]);
            }
            tmp.data[static_cast<std::size_t>(r) * cols + c] = acc;
        }
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int rr = r + i;
                if (rr >= 0 && rr < rows)
                    acc = std::max(acc, kernel[i + radius] *
                                            tmp.data[static_cast<std::size_t>(rr) * cols + c]);
            }
            out.data[static_cast<std::size_t>(r) * cols + c] = acc;
        }
    return out;
}

}  // namespace detail

inline PolarImage generate_frame_label(const MeshBvh& bvh, const Pose& pose, const ImageGeometry& geo,
                                       double sigma_px = 2.0,
                                       double max_incidence_rad = 80.0 * M_PI / 180.0) {
    const auto hits = cast_frame_rays(bvh, pose, geo);
    const PolarImage binary = detail::binary_hit_map(hits, pose, geo, max_incidence_rad);
    return detail::soften_hits(binary, sigma_px);
}

inline PolarImage generate_frame_label(const TriangleMesh& mesh, const Pose& pose,
                                       const ImageGeometry& geo, double sigma_px = 2.0,
                                       double max_incidence_rad = 80.0 * M_PI / 180.0) {
    return generate_frame_label(MeshBvh(mesh), pose, geo, sigma_px, max_incidence_rad);
}

inline std::vector<PolarImage> generate_sequence_labels(const TriangleMesh& mesh,
                                                        const FrameSequence& seq,
                                                        const ImageGeometry& geo,
                                                        double sigma_px = 2.0,
                                                        double max_incidence_rad = 80.0 * M_PI /
                                                                                   180.0) {
    if (seq.frames.empty()) throw DomainError("generate_sequence_labels: empty frame sequence");
    const MeshBvh bvh(mesh);
    std::vector<PolarImage> labels(seq.frames.size());
    parallel_for(seq.frames.size(), [&](std::size_t i) {
        labels[i] = generate_frame_label(bvh, seq.frames[i].pose, geo, sigma_px, max_incidence_rad);
    });
    return labels;
}

}  // namespace spinesurf
