#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spinesurf/common.hpp"
#include "spinesurf/geometry.hpp"
#include "spinesurf/io.hpp"
#include "spinesurf/mesh.hpp"

namespace spinesurf {

enum class CompoundingMode { max, mean };

inline std::string to_string(CompoundingMode m) {
    return m == CompoundingMode::max ? "max" : "mean";
}

inline CompoundingMode compounding_mode_from_string(const std::string& s) {
    if (s == "max") return CompoundingMode::max;
    if (s == "mean") return CompoundingMode::mean;
    throw DomainError("unknown compounding mode: " + s);
}

/// Axis-aligned voxel lattice; origin_m is the CENTER of voxel (0,0,0),
/// matching the NRRD space-origin convention.
struct GridSpec {
    Eigen::Vector3d origin_m = Eigen::Vector3d::Zero();
    Eigen::Vector3d spacing_m = Eigen::Vector3d::Constant(1e-3);
    std::array<int, 3> dims = {1, 1, 1};

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (!(spacing_m[a] > 0.0)) throw DomainError("grid: spacing must be > 0");
            if (dims[a] < 1) throw DomainError("grid: dims must be >= 1");
        }
    }
    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(z) * dims[1] * dims[0] +
               static_cast<std::size_t>(y) * dims[0] + x;
    }
    Eigen::Vector3d center(int x, int y, int z) const {
        return origin_m + Eigen::Vector3d(x * spacing_m[0], y * spacing_m[1], z * spacing_m[2]);
    }
};

struct VolumeGrid {
    GridSpec grid;
    std::vector<double> data;    // in [0,1]
    std::vector<double> weight;  // accumulation counts (mean mode only)

    explicit VolumeGrid(const GridSpec& g = GridSpec()) : grid(g) {
        grid.validate();
        data.assign(grid.voxel_count(), 0.0);
    }
};

/// Smallest grid with the given isotropic-or-not spacing that covers every
/// (ray, sample) bin position of every posed frame.
inline GridSpec fit_grid(const FrameSequence& frames, const ImageGeometry& geo,
                         const Eigen::Vector3d& spacing_m) {
    for (int a = 0; a < 3; ++a)
        if (!(spacing_m[a] > 0.0)) throw DomainError("fit_grid: spacing must be > 0");
    if (frames.frames.empty()) throw DomainError("fit_grid: empty frame sequence");
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (const FrameRecord& fr : frames.frames) {
        for (int k = 0; k < geo.n_rays; ++k) {
            for (int s : {0, geo.n_samples - 1}) {
                const Eigen::Vector3d p = pixel_to_world(geo, fr.pose, k, s);
                lo = lo.cwiseMin(p);
                hi = hi.cwiseMax(p);
            }
        }
    }
    GridSpec g;
    g.origin_m = lo;
    g.spacing_m = spacing_m;
    for (int a = 0; a < 3; ++a)
        g.dims[a] = static_cast<int>(std::floor((hi[a] - lo[a]) / spacing_m[a] + 0.5)) + 1;
    g.validate();
    return g;
}

namespace detail {

inline void splat_nearest(VolumeGrid& vol, const Eigen::Vector3d& p, double value,
                          CompoundingMode mode) {
    const GridSpec& g = vol.grid;
    int idx[3];
    for (int a = 0; a < 3; ++a) {
        idx[a] = static_cast<int>(std::floor((p[a] - g.origin_m[a]) / g.spacing_m[a] + 0.5));
        if (idx[a] < 0 || idx[a] >= g.dims[a]) return;
    }
    const std::size_t i = g.index(idx[0], idx[1], idx[2]);
    if (mode == CompoundingMode::max) {
        vol.data[i] = std::max(vol.data[i], value);
    } else {
        vol.data[i] += value;
        vol.weight[i] += 1.0;
    }
}

inline void splat_trilinear(VolumeGrid& vol, const Eigen::Vector3d& p, double value,
                            CompoundingMode mode) {
    const GridSpec& g = vol.grid;
    double rel[3];
    int i0[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        rel[a] = (p[a] - g.origin_m[a]) / g.spacing_m[a];
        i0[a] = static_cast<int>(std::floor(rel[a]));
        t[a] = rel[a] - i0[a];
    }
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const int x = i0[0] + dx, y = i0[1] + dy, z = i0[2] + dz;
                if (x < 0 || x >= g.dims[0] || y < 0 || y >= g.dims[1] || z < 0 ||
                    z >= g.dims[2])
                    continue;
                const double w = (dx ? t[0] : 1.0 - t[0]) * (dy ? t[1] : 1.0 - t[1]) *
                                 (dz ? t[2] : 1.0 - t[2]);
                if (w <= 0.0) continue;
                const std::size_t i = g.index(x, y, z);
                if (mode == CompoundingMode::max) {
                    vol.data[i] = std::max(vol.data[i], w * value);
                } else {
                    vol.data[i] += w * value;
                    vol.weight[i] += w;
                }
            }
}

}  // namespace detail

/// Splats every (ray, sample) bin of every map into the voxel containing its
/// world position under the matching frame pose. Sequential and deterministic.
inline VolumeGrid compound(const FrameSequence& frames, const std::vector<PolarImage>& maps,
                           const ImageGeometry& geo, const GridSpec& grid, CompoundingMode mode,
                           bool trilinear = false) {
    if (maps.size() != frames.frames.size())
        throw DomainError("compound: map/frame count mismatch");
    grid.validate();
    VolumeGrid vol(grid);
    if (mode == CompoundingMode::mean) vol.weight.assign(grid.voxel_count(), 0.0);
    for (std::size_t f = 0; f < maps.size(); ++f) {
        const PolarImage& m = maps[f];
        if (m.geometry.n_rays != geo.n_rays || m.geometry.n_samples != geo.n_samples)
            throw DomainError("compound: map does not match sector geometry");
        const Pose& pose = frames.frames[f].pose;
        for (int s = 0; s < geo.n_samples; ++s)
            for (int k = 0; k < geo.n_rays; ++k) {
                const double value = m.data[static_cast<std::size_t>(s) * geo.n_rays + k];
                const Eigen::Vector3d p = pixel_to_world(geo, pose, k, s);
                if (trilinear)
                    detail::splat_trilinear(vol, p, value, mode);
                else
                    detail::splat_nearest(vol, p, value, mode);
            }
    }
    if (mode == CompoundingMode::mean)
        for (std::size_t i = 0; i < vol.data.size(); ++i)
            if (vol.weight[i] > 0.0) vol.data[i] /= vol.weight[i];
    return vol;
}

/// World-space centers of voxels whose value is >= threshold.
inline PointCloud extract_surface_points(const VolumeGrid& vol, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw DomainError("extract_surface_points: threshold must be in (0,1)");
    PointCloud cloud;
    const GridSpec& g = vol.grid;
    for (int z = 0; z < g.dims[2]; ++z)
        for (int y = 0; y < g.dims[1]; ++y)
            for (int x = 0; x < g.dims[0]; ++x)
                if (vol.data[g.index(x, y, z)] >= threshold)
                    cloud.points.push_back(g.center(x, y, z));
    return cloud;
}

// ---------------------------------------------------------------------------
// NRRD I/O: detached header at `path`, raw float32 little-endian payload next
// to it with extension ".raw". Fastest axis first (x), matching `GridSpec::index`.
// ---------------------------------------------------------------------------
inline void export_nrrd(const VolumeGrid& vol, const std::filesystem::path& path) {
    std::filesystem::path raw_path = path;
    raw_path.replace_extension(".raw");
    {
        std::ofstream rf(raw_path, std::ios::binary);
        if (!rf) throw DomainError("cannot open for writing: " + raw_path.string());
        std::vector<float> payload(vol.data.size());
        for (std::size_t i = 0; i < vol.data.size(); ++i)
            payload[i] = static_cast<float>(vol.data[i]);
        rf.write(reinterpret_cast<const char*>(payload.data()),
                 static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!rf) throw DomainError("write failed: " + raw_path.string());
    }
    std::ofstream hf(path);
    if (!hf) throw DomainError("cannot open for writing: " + path.string());
    const GridSpec& g = vol.grid;
    hf << "NRRD0004\n";
    hf << "type: float\n";
    hf << "dimension: 3\n";
    hf << "sizes: " << g.dims[0] << " " << g.dims[1] << " " << g.dims[2] << "\n";
    hf << "space dimension: 3\n";
    hf << "space directions: (" << format_double(g.spacing_m[0]) << ",0,0) (0,"
       << format_double(g.spacing_m[1]) << ",0) (0,0," << format_double(g.spacing_m[2]) << ")\n";
    hf << "space origin: (" << format_double(g.origin_m[0]) << "," << format_double(g.origin_m[1])
       << "," << format_double(g.origin_m[2]) << ")\n";
    hf << "encoding: raw\n";
    hf << "endian: little\n";
    hf << "data file: " << raw_path.filename().string() << "\n";
    if (!hf) throw DomainError("write failed: " + path.string());
}

namespace detail {

inline Eigen::Vector3d parse_nrrd_vector(const std::string& token) {
    // token looks like "(a,b,c)"
    const auto open = token.find('(');
    const auto close = token.find(')');
    if (open == std::string::npos || close == std::string::npos || close <= open)
        throw DomainError("nrrd: malformed vector " + token);
    std::string inner = token.substr(open + 1, close - open - 1);
    for (char& ch : inner)
        if (ch == ',') ch = ' ';
    std::istringstream ss(inner);
    Eigen::Vector3d v;
    if (!(ss >> v[0] >> v[1] >> v[2])) throw DomainError("nrrd: malformed vector " + token);
    return v;
}

}  // namespace detail

inline VolumeGrid import_nrrd(const std::filesystem::path& path) {
    std::ifstream hf(path);
    if (!hf) throw DomainError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(hf, line) || line.rfind("NRRD", 0) != 0)
        throw DomainError("not an NRRD header: " + path.string());
    GridSpec g;
    bool have_sizes = false;
    std::string data_file;
    while (std::getline(hf, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        std::string val = line.substr(colon + 1);
        while (!val.empty() && val.front() == ' ') val.erase(val.begin());
        if (key == "sizes") {
            std::istringstream ss(val);
            if (!(ss >> g.dims[0] >> g.dims[1] >> g.dims[2]))
                throw DomainError("nrrd: malformed sizes");
            have_sizes = true;
        } else if (key == "space origin") {
            g.origin_m = detail::parse_nrrd_vector(val);
        } else if (key == "space directions") {
            std::istringstream ss(val);
            std::string t0, t1, t2;
            if (!(ss >> t0 >> t1 >> t2)) throw DomainError("nrrd: malformed space directions");
            g.spacing_m[0] = detail::parse_nrrd_vector(t0)[0];
            g.spacing_m[1] = detail::parse_nrrd_vector(t1)[1];
            g.spacing_m[2] = detail::parse_nrrd_vector(t2)[2];
        } else if (key == "data file") {
            data_file = val;
        } else if (key == "type") {
            if (val != "float") throw DomainError("nrrd: unsupported type " + val);
        } else if (key == "encoding") {
            if (val != "raw") throw DomainError("nrrd: unsupported encoding " + val);
        }
    }
    if (!have_sizes || data_file.empty())
        throw DomainError("nrrd: missing sizes or data file in " + path.string());
    VolumeGrid vol(g);
    const std::filesystem::path raw_path = path.parent_path() / data_file;
    std::ifstream rf(raw_path, std::ios::binary);
    if (!rf) throw DomainError("cannot open: " + raw_path.string());
    std::vector<float> payload(vol.data.size());
    rf.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!rf) throw DomainError("nrrd payload truncated: " + raw_path.string());
    for (std::size_t i = 0; i < payload.size(); ++i) vol.data[i] = payload[i];
    return vol;
}

}  // namespace spinesurf
