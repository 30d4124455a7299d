#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spinesurf/geometry.hpp"
#include "spinesurf/mesh.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// PFM: grayscale "Pf", 32-bit float, scale -1.0 (little-endian), scanlines
// stored bottom-to-top.
// ---------------------------------------------------------------------------
struct PfmImage {
    int width = 0;
    int height = 0;
    std::vector<float> data;  // row-major, row 0 = top

    float at(int col, int row) const { return data[static_cast<std::size_t>(row) * width + col]; }
    float& at(int col, int row) { return data[static_cast<std::size_t>(row) * width + col]; }
};

inline void write_pfm(const std::filesystem::path& path, const PfmImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DomainError("cannot open for writing: " + path.string());
    f << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
    for (int row = img.height - 1; row >= 0; --row)
        f.write(reinterpret_cast<const char*>(&img.data[static_cast<std::size_t>(row) * img.width]),
                static_cast<std::streamsize>(sizeof(float)) * img.width);
    if (!f) throw DomainError("write failed: " + path.string());
}

inline PfmImage read_pfm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DomainError("cannot open: " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "Pf") throw DomainError("not a grayscale PFM file: " + path.string());
    PfmImage img;
    double scale = 0.0;
    f >> img.width >> img.height >> scale;
    if (!f || img.width <= 0 || img.height <= 0) throw DomainError("bad PFM header: " + path.string());
    if (scale >= 0.0) throw DomainError("big-endian PFM not supported: " + path.string());
    f.get();  // single whitespace after the scale line
    img.data.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int row = img.height - 1; row >= 0; --row)
        f.read(reinterpret_cast<char*>(&img.data[static_cast<std::size_t>(row) * img.width]),
               static_cast<std::streamsize>(sizeof(float)) * img.width);
    if (!f) throw DomainError("truncated PFM payload: " + path.string());
    return img;
}

inline PfmImage to_pfm(const PolarImage& img) {
    PfmImage out;
    out.width = img.geometry.n_rays;
    out.height = img.geometry.n_samples;
    out.data.resize(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = static_cast<float>(img.data[i]);
    return out;
}

inline PfmImage to_pfm(const CartesianImage& img) {
    PfmImage out;
    out.width = img.width_px;
    out.height = img.height_px;
    out.data.resize(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = static_cast<float>(img.data[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Sidecar metadata: UTF-8 key=value lines. Doubles are printed with %.17g so
// they round-trip exactly.
// ---------------------------------------------------------------------------
using MetaMap = std::map<std::string, std::string>;

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_meta(const std::filesystem::path& path, const MetaMap& meta) {
    std::ofstream f(path);
    if (!f) throw DomainError("cannot open for writing: " + path.string());
    for (const auto& [k, v] : meta) f << k << "=" << v << "\n";
}

inline MetaMap read_meta(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DomainError("cannot open: " + path.string());
    MetaMap meta;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DomainError("bad metadata line in " + path.string() + ": " + line);
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

inline double meta_double(const MetaMap& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw DomainError("metadata key missing: " + key);
    return std::stod(it->second);
}
inline int meta_int(const MetaMap& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw DomainError("metadata key missing: " + key);
    return std::stoi(it->second);
}
inline Vec3 meta_vec3(const MetaMap& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw DomainError("metadata key missing: " + key);
    std::istringstream ss(it->second);
    Vec3 v;
    ss >> v.x() >> v.y() >> v.z();
    if (!ss) throw DomainError("bad 3-vector in metadata key: " + key);
    return v;
}

inline MetaMap geometry_meta(const ImageGeometry& geo) {
    MetaMap m;
    m["depth_min_m"] = format_double(geo.depth_min_m);
    m["depth_max_m"] = format_double(geo.depth_max_m);
    m["fov_rad"] = format_double(geo.fov_rad);
    m["n_rays"] = std::to_string(geo.n_rays);
    m["n_samples"] = std::to_string(geo.n_samples);
    return m;
}

inline ImageGeometry geometry_from_meta(const MetaMap& m) {
    ImageGeometry geo;
    geo.depth_min_m = meta_double(m, "depth_min_m");
    geo.depth_max_m = meta_double(m, "depth_max_m");
    geo.fov_rad = meta_double(m, "fov_rad");
    geo.n_rays = meta_int(m, "n_rays");
    geo.n_samples = meta_int(m, "n_samples");
    geo.validate();
    return geo;
}

// ---------------------------------------------------------------------------
// Frame-sequence directory: frames.csv + frame_{:06d}.pfm (+ geometry.meta).
// frames.csv columns: frame_id, sweep_id, sweep_direction, joint_theta_rad,
// joint_t_m, then the 12 row-major entries of the 3x4 [R|t] pose matrix.
// ---------------------------------------------------------------------------
inline std::string frame_file_name(const char* prefix, int frame_id) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%06d.pfm", prefix, frame_id);
    return buf;
}

inline void write_frames_csv(const std::filesystem::path& path, const FrameSequence& seq) {
    std::ofstream f(path);
    if (!f) throw DomainError("cannot open for writing: " + path.string());
    f << "frame_id,sweep_id,sweep_direction,joint_theta_rad,joint_t_m,"
         "r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz\n";
    for (const FrameRecord& fr : seq.frames) {
        f << fr.frame_id << "," << fr.sweep_id << "," << to_string(fr.sweep_direction) << ","
          << format_double(fr.joint_theta_rad) << "," << format_double(fr.joint_t_m);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) f << "," << format_double(fr.pose.rotation(r, c));
            f << "," << format_double(fr.pose.translation(r));
        }
        f << "\n";
    }
}

/// Reads frames.csv. When `kin` is given, each pose is checked against
/// pose_from_joints(kin, theta, t) within 1e-9.
inline std::vector<FrameRecord> read_frames_csv(const std::filesystem::path& path,
                                                const ScanKinematics* kin = nullptr) {
    std::ifstream f(path);
    if (!f) throw DomainError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw DomainError("empty frames.csv: " + path.string());
    std::vector<FrameRecord> frames;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 17) throw DomainError("bad frames.csv row: " + line);
        FrameRecord fr;
        fr.frame_id = std::stoi(cells[0]);
        fr.sweep_id = std::stoi(cells[1]);
        fr.sweep_direction = sweep_direction_from_string(cells[2]);
        fr.joint_theta_rad = std::stod(cells[3]);
        fr.joint_t_m = std::stod(cells[4]);
        int i = 5;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) fr.pose.rotation(r, c) = std::stod(cells[i++]);
            fr.pose.translation(r) = std::stod(cells[i++]);
        }
        fr.pose.validate();
        if (kin) {
            const Pose expect = pose_from_joints(*kin, fr.joint_theta_rad, fr.joint_t_m);
            if ((expect.rotation - fr.pose.rotation).cwiseAbs().maxCoeff() > 1e-9 ||
                (expect.translation - fr.pose.translation).cwiseAbs().maxCoeff() > 1e-9)
                throw DomainError("frames.csv: pose inconsistent with joint values for frame " +
                                  cells[0]);
        }
        frames.push_back(fr);
    }
    return frames;
}

// ---------------------------------------------------------------------------
// ASCII PLY meshes and point clouds. Coordinates in meters.
// ---------------------------------------------------------------------------
inline void write_ply_mesh(const std::filesystem::path& path, const TriangleMesh& mesh) {
    std::ofstream f(path);
    if (!f) throw DomainError("cannot open for writing: " + path.string());
    f << "ply\nformat ascii 1.0\n";
    f << "element vertex " << mesh.vertices.size() << "\n";
    f << "property double x\nproperty double y\nproperty double z\n";
    f << "element face " << mesh.triangles.size() << "\n";
    f << "property list uchar int vertex_indices\nend_header\n";
    for (const Vec3& v : mesh.vertices)
        f << format_double(v.x()) << " " << format_double(v.y()) << " " << format_double(v.z()) << "\n";
    for (const auto& t : mesh.triangles) f << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
}

inline void write_ply_points(const std::filesystem::path& path, const PointCloud& cloud) {
    std::ofstream f(path);
    if (!f) throw DomainError("cannot open for writing: " + path.string());
    f << "ply\nformat ascii 1.0\n";
    f << "element vertex " << cloud.points.size() << "\n";
    f << "property double x\nproperty double y\nproperty double z\nend_header\n";
    for (const Vec3& p : cloud.points)
        f << format_double(p.x()) << " " << format_double(p.y()) << " " << format_double(p.z()) << "\n";
}

namespace detail {

struct PlyHeader {
    std::size_t n_vertices = 0;
    std::size_t n_faces = 0;
};

inline PlyHeader read_ply_header(std::ifstream& f, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(f, line) || line != "ply") throw DomainError("not a PLY file: " + path.string());
    PlyHeader h;
    bool ascii = false;
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "format") {
            std::string fmt;
            ss >> fmt;
            ascii = (fmt == "ascii");
        } else if (tok == "element") {
            std::string what;
            std::size_t count = 0;
            ss >> what >> count;
            if (what == "vertex") h.n_vertices = count;
            else if (what == "face") h.n_faces = count;
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!ascii) throw DomainError("only ASCII PLY is supported: " + path.string());
    return h;
}

}  // namespace detail

inline TriangleMesh read_ply_mesh(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DomainError("cannot open: " + path.string());
    const detail::PlyHeader h = detail::read_ply_header(f, path);
    TriangleMesh mesh;
    mesh.vertices.resize(h.n_vertices);
    for (std::size_t i = 0; i < h.n_vertices; ++i) {
        f >> mesh.vertices[i].x() >> mesh.vertices[i].y() >> mesh.vertices[i].z();
        std::string rest;
        std::getline(f, rest);  // tolerate extra vertex properties
    }
    mesh.triangles.resize(h.n_faces);
    for (std::size_t i = 0; i < h.n_faces; ++i) {
        int n = 0;
        f >> n;
        if (n != 3) throw DomainError("non-triangle face in PLY: " + path.string());
        f >> mesh.triangles[i][0] >> mesh.triangles[i][1] >> mesh.triangles[i][2];
    }
    if (!f) throw DomainError("truncated PLY: " + path.string());
    mesh.validate();
    return mesh;
}

inline PointCloud read_ply_points(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DomainError("cannot open: " + path.string());
    const detail::PlyHeader h = detail::read_ply_header(f, path);
    PointCloud cloud;
    cloud.points.resize(h.n_vertices);
    for (std::size_t i = 0; i < h.n_vertices; ++i) {
        f >> cloud.points[i].x() >> cloud.points[i].y() >> cloud.points[i].z();
        std::string rest;
        std::getline(f, rest);
    }
    if (!f) throw DomainError("truncated PLY: " + path.string());
    return cloud;
}

// ---------------------------------------------------------------------------
// 8-bit binary PGM (overlay rendering output).
// ---------------------------------------------------------------------------
inline void write_pgm(const std::filesystem::path& path, int width, int height,
                      const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != static_cast<std::size_t>(width) * height)
        throw DomainError("pgm: pixel count mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DomainError("cannot open for writing: " + path.string());
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!f) throw DomainError("write failed: " + path.string());
}

}  // namespace spinesurf
