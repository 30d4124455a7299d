#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "spinesurf/common.hpp"
#include "spinesurf/geometry.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// Surface mesh and point cloud.
// ---------------------------------------------------------------------------
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;

    void validate() const {
        const int n = static_cast<int>(vertices.size());
        for (const Vec3& v : vertices)
            if (!v.allFinite()) throw DomainError("mesh vertex not finite");
        for (const auto& t : triangles) {
            for (int idx : t)
                if (idx < 0 || idx >= n) throw DomainError("mesh triangle index out of range");
            const Vec3 e1 = vertices[t[1]] - vertices[t[0]];
            const Vec3 e2 = vertices[t[2]] - vertices[t[0]];
            if (0.5 * e1.cross(e2).norm() <= 1e-12) throw DomainError("degenerate mesh triangle");
        }
    }

    bool empty() const { return triangles.empty(); }
};

struct PointCloud {
    std::vector<Vec3> points;
};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

inline TriangleMesh transform_mesh(const TriangleMesh& mesh, const Pose& pose) {
    TriangleMesh out = mesh;
    for (Vec3& v : out.vertices) v = pose * v;
    return out;
}

inline PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
    PointCloud out = cloud;
    for (Vec3& p : out.points) p = pose * p;
    return out;
}

inline void append_mesh(TriangleMesh& dst, const TriangleMesh& src) {
    const int base = static_cast<int>(dst.vertices.size());
    dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
    for (const auto& t : src.triangles)
        dst.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
}

// ---------------------------------------------------------------------------
// Built-in phantom shapes. The beam axis is +z (depth); a reflector "facing"
// the transducer sits at larger z than the apex.
// ---------------------------------------------------------------------------

/// Rectangular plate centered at `center`, nominally spanning x (lateral) and
/// y (elevation), rotated about the y axis by tilt_rad. subdivisions controls
/// the grid resolution (2*sub^2 triangles).
inline TriangleMesh make_plate(const Vec3& center, double half_x, double half_y, double tilt_rad,
                               int subdivisions = 1) {
    if (half_x <= 0 || half_y <= 0 || subdivisions < 1) throw DomainError("bad plate parameters");
    const Vec3 u(std::cos(tilt_rad), 0.0, -std::sin(tilt_rad));
    const Vec3 v(0.0, 1.0, 0.0);
    TriangleMesh mesh;
    const int n = subdivisions;
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) {
            const double a = -half_x + 2.0 * half_x * i / n;
            const double b = -half_y + 2.0 * half_y * j / n;
            mesh.vertices.push_back(center + a * u + b * v);
        }
    const auto vid = [n](int i, int j) { return j * (n + 1) + i; };
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            mesh.triangles.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
            mesh.triangles.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
        }
    mesh.validate();
    return mesh;
}

/// Open tube with axis parallel to y (elevation), so a sector image slices it
/// across the circular section — a long-bone-like reflector.
inline TriangleMesh make_cylinder(const Vec3& center, double radius, double half_length_y,
                                  int n_segments = 32, int n_slices = 8) {
    if (radius <= 0 || half_length_y <= 0 || n_segments < 3 || n_slices < 1)
        throw DomainError("bad cylinder parameters");
    TriangleMesh mesh;
    for (int j = 0; j <= n_slices; ++j) {
        const double y = center.y() - half_length_y + 2.0 * half_length_y * j / n_slices;
        for (int i = 0; i < n_segments; ++i) {
            const double phi = 2.0 * M_PI * i / n_segments;
            mesh.vertices.push_back(
                Vec3(center.x() + radius * std::cos(phi), y, center.z() + radius * std::sin(phi)));
        }
    }
    const auto vid = [n_segments](int i, int j) { return j * n_segments + (i % n_segments); };
    for (int j = 0; j < n_slices; ++j)
        for (int i = 0; i < n_segments; ++i) {
            mesh.triangles.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
            mesh.triangles.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
        }
    mesh.validate();
    return mesh;
}

/// Closed triangular prism: a ridge line along y at the apex with a flat base
/// height_z deeper — a spinous-process-like shape.
inline TriangleMesh make_wedge(const Vec3& apex_center, double half_width_x, double height_z,
                               double half_length_y) {
    if (half_width_x <= 0 || height_z <= 0 || half_length_y <= 0)
        throw DomainError("bad wedge parameters");
    const double ax = apex_center.x(), ay = apex_center.y(), az = apex_center.z();
    TriangleMesh mesh;
    mesh.vertices = {
        Vec3(ax, ay - half_length_y, az),                            // 0 ridge front
        Vec3(ax, ay + half_length_y, az),                            // 1 ridge back
        Vec3(ax - half_width_x, ay - half_length_y, az + height_z),  // 2
        Vec3(ax + half_width_x, ay - half_length_y, az + height_z),  // 3
        Vec3(ax - half_width_x, ay + half_length_y, az + height_z),  // 4
        Vec3(ax + half_width_x, ay + half_length_y, az + height_z),  // 5
    };
    mesh.triangles = {
        {0, 1, 4}, {0, 4, 2},  // left slant
        {0, 3, 5}, {0, 5, 1},  // right slant
        {2, 4, 5}, {2, 5, 3},  // base
        {0, 2, 3},             // front cap
        {1, 5, 4},             // back cap
    };
    mesh.validate();
    return mesh;
}

/// Area-weighted uniform surface sampling (deterministic for a given seed).
inline PointCloud sample_mesh_surface(const TriangleMesh& mesh, int n_points, std::uint64_t seed) {
    if (mesh.empty()) throw DomainError("cannot sample an empty mesh");
    if (n_points < 1) throw DomainError("n_points must be positive");
    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        cumulative[i] = total;
    }
    Rng rng(seed);
    PointCloud cloud;
    cloud.points.reserve(n_points);
    for (int i = 0; i < n_points; ++i) {
        const double pick = rng.uniform() * total;
        const std::size_t ti =
            std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin();
        const auto& t = mesh.triangles[std::min(ti, mesh.triangles.size() - 1)];
        const double r1 = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        cloud.points.push_back((1.0 - r1) * mesh.vertices[t[0]] +
                               r1 * (1.0 - r2) * mesh.vertices[t[1]] + r1 * r2 * mesh.vertices[t[2]]);
    }
    return cloud;
}

// ---------------------------------------------------------------------------
// Ray casting and closest-point queries.
// ---------------------------------------------------------------------------
struct RayHit {
    double t = 0.0;       // distance along the (unit) ray direction
    Vec3 point;           // hit position
    Vec3 normal;          // unit normal, oriented to face the ray (dot(normal, dir) <= 0)
    int triangle = -1;    // index into mesh.triangles
};

struct SurfacePoint {
    Vec3 point;
    double distance = 0.0;
    int triangle = -1;
};

namespace detail {

inline std::optional<double> intersect_triangle(const Vec3& v0, const Vec3& v1, const Vec3& v2,
                                                const Vec3& origin, const Vec3& dir) {
    const Vec3 e1 = v1 - v0;
    const Vec3 e2 = v2 - v0;
    const Vec3 p = dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-14) return std::nullopt;
    const double inv = 1.0 / det;
    const Vec3 s = origin - v0;
    const double u = s.dot(p) * inv;
    if (u < -1e-12 || u > 1.0 + 1e-12) return std::nullopt;
    const Vec3 q = s.cross(e1);
    const double v = dir.dot(q) * inv;
    if (v < -1e-12 || u + v > 1.0 + 1e-12) return std::nullopt;
    const double t = e2.dot(q) * inv;
    if (t <= 1e-9) return std::nullopt;
    return t;
}

// Ericson-style closest point on a triangle.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

inline bool ray_hits_aabb(const Vec3& lo, const Vec3& hi, const Vec3& origin, const Vec3& dir,
                          double t_max) {
    double t0 = 0.0, t1 = t_max;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-300) {
            if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
            continue;
        }
        const double inv = 1.0 / dir[a];
        double ta = (lo[a] - origin[a]) * inv;
        double tb = (hi[a] - origin[a]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t1 < t0) return false;
    }
    return true;
}

inline double aabb_distance_sq(const Vec3& lo, const Vec3& hi, const Vec3& q) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
        const double d = std::max({lo[a] - q[a], 0.0, q[a] - hi[a]});
        d2 += d * d;
    }
    return d2;
}

}  // namespace detail

/// Axis-aligned BVH (median split on the longest centroid axis). Immutable
/// after construction; safe to share across concurrent queries.
class MeshBvh {
  public:
    explicit MeshBvh(const TriangleMesh& mesh) {
        mesh.validate();
        const int n = static_cast<int>(mesh.triangles.size());
        tris_.resize(n);
        tri_index_.resize(n);
        std::vector<Vec3> centroids(n);
        for (int i = 0; i < n; ++i) {
            const auto& t = mesh.triangles[i];
            tris_[i] = {mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]};
            tri_index_[i] = i;
            centroids[i] = (tris_[i][0] + tris_[i][1] + tris_[i][2]) / 3.0;
        }
        if (n > 0) build(0, n, centroids);
    }

    std::optional<RayHit> first_hit(const Vec3& origin, const Vec3& dir) const {
        if (std::abs(dir.norm() - 1.0) > 1e-9) throw DomainError("ray direction must be unit length");
        if (nodes_.empty()) return std::nullopt;
        double best_t = std::numeric_limits<double>::infinity();
        int best = -1;
        int stack[64];
        int sp = 0;
        stack[sp++] = 0;
        while (sp > 0) {
            const Node& node = nodes_[stack[--sp]];
            if (!detail::ray_hits_aabb(node.lo, node.hi, origin, dir, best_t)) continue;
            if (node.count > 0) {
                for (int i = node.first; i < node.first + node.count; ++i) {
                    const auto t = detail::intersect_triangle(tris_[i][0], tris_[i][1], tris_[i][2],
                                                              origin, dir);
                    if (t && *t < best_t) {
                        best_t = *t;
                        best = i;
                    }
                }
            } else {
                stack[sp++] = node.left;
                stack[sp++] = node.right;
            }
        }
        if (best < 0) return std::nullopt;
        return make_hit(best, best_t, origin, dir);
    }

    SurfacePoint closest_point(const Vec3& q) const {
        if (nodes_.empty()) throw DomainError("closest_point on an empty mesh");
        SurfacePoint best;
        best.distance = std::numeric_limits<double>::infinity();
        double best_d2 = std::numeric_limits<double>::infinity();
        int stack[64];
        int sp = 0;
        stack[sp++] = 0;
        while (sp > 0) {
            const Node& node = nodes_[stack[--sp]];
            if (detail::aabb_distance_sq(node.lo, node.hi, q) >= best_d2) continue;
            if (node.count > 0) {
                for (int i = node.first; i < node.first + node.count; ++i) {
                    const Vec3 cp =
                        detail::closest_point_on_triangle(q, tris_[i][0], tris_[i][1], tris_[i][2]);
                    const double d2 = (cp - q).squaredNorm();
                    if (d2 < best_d2) {
                        best_d2 = d2;
                        best.point = cp;
                        best.triangle = tri_index_[i];
                    }
                }
            } else {
                // visit the nearer child first so pruning kicks in sooner
                const double dl = detail::aabb_distance_sq(nodes_[node.left].lo, nodes_[node.left].hi, q);
                const double dr =
                    detail::aabb_distance_sq(nodes_[node.right].lo, nodes_[node.right].hi, q);
                if (dl < dr) {
                    stack[sp++] = node.right;
                    stack[sp++] = node.left;
                } else {
                    stack[sp++] = node.left;
                    stack[sp++] = node.right;
                }
            }
        }
        best.distance = std::sqrt(best_d2);
        return best;
    }

    bool empty() const { return nodes_.empty(); }

  private:
    struct Node {
        Vec3 lo, hi;
        int left = -1, right = -1;
        int first = 0, count = 0;  // count > 0 marks a leaf
    };

    std::optional<RayHit> make_hit(int slot, double t, const Vec3& origin, const Vec3& dir) const {
        RayHit hit;
        hit.t = t;
        hit.point = origin + t * dir;
        Vec3 n = (tris_[slot][1] - tris_[slot][0]).cross(tris_[slot][2] - tris_[slot][0]).normalized();
        if (n.dot(dir) > 0.0) n = -n;
        hit.normal = n;
        hit.triangle = tri_index_[slot];
        return hit;
    }

    int build(int begin, int end, std::vector<Vec3>& centroids) {
        Node node;
        node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        node.hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
        Vec3 clo = node.lo, chi = node.hi;
        for (int i = begin; i < end; ++i) {
            for (const Vec3& v : tris_[i]) {
                node.lo = node.lo.cwiseMin(v);
                node.hi = node.hi.cwiseMax(v);
            }
            clo = clo.cwiseMin(centroids[i]);
            chi = chi.cwiseMax(centroids[i]);
        }
        const int index = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const Vec3 extent = chi - clo;
        int axis = 0;
        if (extent.y() > extent.x()) axis = 1;
        if (extent.z() > extent[axis]) axis = 2;
        if (end - begin <= 4 || extent[axis] < 1e-300) {
            nodes_[index].first = begin;
            nodes_[index].count = end - begin;
            return index;
        }
        const int mid = begin + (end - begin) / 2;
        // reorder tris_/tri_index_/centroids together by centroid along the split axis
        std::vector<int> order(end - begin);
        std::iota(order.begin(), order.end(), begin);
        std::nth_element(order.begin(), order.begin() + (mid - begin), order.end(),
                         [&](int a, int b) { return centroids[a][axis] < centroids[b][axis]; });
        apply_order(order, begin, centroids);
        const int left = build(begin, mid, centroids);
        const int right = build(mid, end, centroids);
        nodes_[index].left = left;
        nodes_[index].right = right;
        return index;
    }

    void apply_order(const std::vector<int>& order, int begin, std::vector<Vec3>& centroids) {
        std::vector<std::array<Vec3, 3>> tmp_t(order.size());
        std::vector<int> tmp_i(order.size());
        std::vector<Vec3> tmp_c(order.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            tmp_t[k] = tris_[order[k]];
            tmp_i[k] = tri_index_[order[k]];
            tmp_c[k] = centroids[order[k]];
        }
        std::copy(tmp_t.begin(), tmp_t.end(), tris_.begin() + begin);
        std::copy(tmp_i.begin(), tmp_i.end(), tri_index_.begin() + begin);
        std::copy(tmp_c.begin(), tmp_c.end(), centroids.begin() + begin);
    }

    std::vector<std::array<Vec3, 3>> tris_;
    std::vector<int> tri_index_;
    std::vector<Node> nodes_;
};

/// Convenience single-query form (builds a throwaway index).
inline std::optional<RayHit> ray_cast_first_hit(const TriangleMesh& mesh, const Vec3& origin,
                                                const Vec3& dir) {
    return MeshBvh(mesh).first_hit(origin, dir);
}

/// Brute-force reference: scans every triangle. Kept as the oracle the index
/// is validated against.
inline std::optional<RayHit> ray_cast_first_hit_brute(const TriangleMesh& mesh, const Vec3& origin,
                                                      const Vec3& dir) {
    if (std::abs(dir.norm() - 1.0) > 1e-9) throw DomainError("ray direction must be unit length");
    double best_t = std::numeric_limits<double>::infinity();
    int best = -1;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& tri = mesh.triangles[i];
        const auto t = detail::intersect_triangle(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                                  mesh.vertices[tri[2]], origin, dir);
        if (t && *t < best_t) {
            best_t = *t;
            best = static_cast<int>(i);
        }
    }
    if (best < 0) return std::nullopt;
    const auto& tri = mesh.triangles[best];
    RayHit hit;
    hit.t = best_t;
    hit.point = origin + best_t * dir;
    Vec3 n = (mesh.vertices[tri[1]] - mesh.vertices[tri[0]])
                 .cross(mesh.vertices[tri[2]] - mesh.vertices[tri[0]])
                 .normalized();
    if (n.dot(dir) > 0.0) n = -n;
    hit.normal = n;
    hit.triangle = best;
    return hit;
}

}  // namespace spinesurf
