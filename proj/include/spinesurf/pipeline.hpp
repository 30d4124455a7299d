#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spinesurf/common.hpp"
#include "spinesurf/features.hpp"
#include "spinesurf/geometry.hpp"
#include "spinesurf/io.hpp"
#include "spinesurf/labelgen.hpp"
#include "spinesurf/mesh.hpp"
#include "spinesurf/net.hpp"
#include "spinesurf/phantom.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// Square Cartesian lattice sized for the network (dims = target x target).
// ---------------------------------------------------------------------------
inline CartesianImage make_square_lattice(const ImageGeometry& geo, int target_px) {
    geo.validate();
    if (target_px < 4) throw DomainError("lattice: target size must be >= 4");
    const double half = 0.5 * geo.fov_rad;
    const double xspan = 2.0 * std::sin(half) * geo.depth_max_m;
    const double zspan = geo.depth_max_m - std::cos(half) * geo.depth_min_m;
    const double px = std::max(xspan, zspan) / (target_px - 2);
    CartesianImage fitted = make_sector_lattice(geo, px);
    if (fitted.width_px > target_px || fitted.height_px > target_px)
        throw DomainError("lattice: fitted sector exceeds the target size");
    const int pad_x = (target_px - fitted.width_px) / 2;
    const int pad_y = (target_px - fitted.height_px) / 2;
    const Vec2 origin = fitted.origin_m - fitted.pixel_size_m * Vec2(pad_x, pad_y);
    CartesianImage lat(target_px, target_px, fitted.pixel_size_m, origin);
    PolarImage sector(geo, 0.0);
    polar_to_cartesian_into(sector, lat);  // stamps the inside-sector mask
    return lat;
}

inline CartesianImage scan_convert_square(const PolarImage& img, int target_px) {
    CartesianImage out = make_square_lattice(img.geometry, target_px);
    polar_to_cartesian_into(img, out);
    return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset layout (one directory):
//   geometry.meta   polar + lattice parameters
//   frames.csv      frame poses and joints
//   frame_%06d.pfm  scan-converted B-mode
//   label_%06d.pfm  scan-converted soft label
//   mesh.ply        ground-truth surface mesh
// ---------------------------------------------------------------------------
struct DatasetBundle {
    ImageGeometry geometry;
    CartesianImage lattice;  // dims/pixel size/origin template; mask = sector
    FrameSequence sequence;
    std::vector<CartesianImage> frames;
    std::vector<CartesianImage> labels;
    TriangleMesh mesh;
};

inline MetaMap dataset_meta(const DatasetBundle& d) {
    MetaMap m = geometry_meta(d.geometry);
    m["width_px"] = std::to_string(d.lattice.width_px);
    m["height_px"] = std::to_string(d.lattice.height_px);
    m["pixel_size_m"] = format_double(d.lattice.pixel_size_m);
    m["origin_x_m"] = format_double(d.lattice.origin_m.x());
    m["origin_z_m"] = format_double(d.lattice.origin_m.y());
    return m;
}

/// Rebuilds the lattice template (with its sector mask) from metadata.
inline CartesianImage lattice_from_meta(const MetaMap& m, const ImageGeometry& geo) {
    CartesianImage lat(meta_int(m, "width_px"), meta_int(m, "height_px"),
                       meta_double(m, "pixel_size_m"),
                       Vec2(meta_double(m, "origin_x_m"), meta_double(m, "origin_z_m")));
    PolarImage zero(geo, 0.0);
    polar_to_cartesian_into(zero, lat);
    return lat;
}

inline DatasetBundle build_dataset(const PhantomSpec& spec, const ScanKinematics& kin,
                                   const ScanPlan& plan, const ImageGeometry& geo, int lattice_px,
                                   double label_sigma_px = 2.0,
                                   double max_incidence_rad = 80.0 * M_PI / 180.0) {
    DatasetBundle d;
    d.geometry = geo;
    d.lattice = make_square_lattice(geo, lattice_px);
    ScanResult scan = simulate_scan(spec, kin, plan, geo, label_sigma_px, max_incidence_rad);
    d.sequence = std::move(scan.sequence);
    d.mesh = spec.mesh;
    d.frames.resize(scan.frames.size());
    d.labels.resize(scan.labels.size());
    for (std::size_t i = 0; i < scan.frames.size(); ++i) {
        CartesianImage f = d.lattice;
        polar_to_cartesian_into(scan.frames[i], f);
        d.frames[i] = std::move(f);
        CartesianImage l = d.lattice;
        polar_to_cartesian_into(scan.labels[i], l);
        d.labels[i] = std::move(l);
    }
    return d;
}

inline void save_dataset(const std::filesystem::path& dir, const DatasetBundle& d) {
    std::filesystem::create_directories(dir);
    write_meta(dir / "geometry.meta", dataset_meta(d));
    write_frames_csv(dir / "frames.csv", d.sequence);
    for (std::size_t i = 0; i < d.frames.size(); ++i) {
        write_pfm(dir / frame_file_name("frame", d.sequence.frames[i].frame_id),
                  to_pfm(d.frames[i]));
        write_pfm(dir / frame_file_name("label", d.sequence.frames[i].frame_id),
                  to_pfm(d.labels[i]));
    }
    if (!d.mesh.vertices.empty()) write_ply_mesh(dir / "mesh.ply", d.mesh);
}

/// Reads one scan-converted image back onto the dataset lattice.
inline CartesianImage read_frame_pfm(const std::filesystem::path& path,
                                     const CartesianImage& lattice) {
    const PfmImage pfm = read_pfm(path);
    if (pfm.width != lattice.width_px || pfm.height != lattice.height_px)
        throw DomainError("pfm does not match dataset lattice: " + path.string());
    CartesianImage img = lattice;
    for (std::size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = img.mask[i] ? static_cast<double>(pfm.data[i]) : 0.0;
    return img;
}

inline DatasetBundle load_dataset(const std::filesystem::path& dir, bool need_mesh = false) {
    DatasetBundle d;
    const MetaMap m = read_meta(dir / "geometry.meta");
    d.geometry = geometry_from_meta(m);
    d.lattice = lattice_from_meta(m, d.geometry);
    d.sequence.frames = read_frames_csv(dir / "frames.csv");
    d.frames.reserve(d.sequence.frames.size());
    d.labels.reserve(d.sequence.frames.size());
    for (const FrameRecord& fr : d.sequence.frames) {
        d.frames.push_back(read_frame_pfm(dir / frame_file_name("frame", fr.frame_id), d.lattice));
        const auto label_path = dir / frame_file_name("label", fr.frame_id);
        if (std::filesystem::exists(label_path))
            d.labels.push_back(read_frame_pfm(label_path, d.lattice));
    }
    if (!d.labels.empty() && d.labels.size() != d.frames.size())
        throw DomainError("dataset: label files are incomplete in " + dir.string());
    const auto mesh_path = dir / "mesh.ply";
    if (std::filesystem::exists(mesh_path))
        d.mesh = read_ply_mesh(mesh_path);
    else if (need_mesh)
        throw DomainError("dataset: mesh.ply missing in " + dir.string());
    return d;
}

/// Runs the hand-crafted feature pipeline over every frame.
inline std::vector<CartesianImage> compute_features(const std::vector<CartesianImage>& frames,
                                                    const ImageGeometry& geo,
                                                    const LogGaborParams& lg,
                                                    const ConfidenceParams& cp,
                                                    double sobel_threshold = 0.3,
                                                    int blur_kernel_px = 6,
                                                    std::vector<ConfidenceSolveInfo>* infos = nullptr) {
    std::vector<CartesianImage> feats(frames.size());
    if (infos) infos->assign(frames.size(), ConfidenceSolveInfo{});
    parallel_for(frames.size(), [&](std::size_t i) {
        ConfidenceSolveInfo info;
        feats[i] = feature_pipeline(frames[i], geo, lg, cp, sobel_threshold, blur_kernel_px, &info);
        if (infos) (*infos)[i] = info;
    });
    return feats;
}

// ---------------------------------------------------------------------------
// Packing images into network samples.
// ---------------------------------------------------------------------------
struct SamplePack {
    std::vector<Tensor> inputs;  // C x H x W
    std::vector<Tensor> labels;  // 1 x H x W
    std::vector<int> sweep_ids;
    std::vector<std::uint8_t> mask;  // sector mask, H*W
    int height = 0, width = 0;

    std::vector<TrainSample> train_samples() const {
        std::vector<TrainSample> out(inputs.size());
        for (std::size_t i = 0; i < inputs.size(); ++i)
            out[i] = TrainSample{inputs[i], labels[i], sweep_ids[i]};
        return out;
    }
};

/// Normalizes the B-mode channel to its per-frame masked maximum; the feature
/// channel (when given) is taken as-is. Everything outside the sector is 0.
inline SamplePack pack_samples(const std::vector<CartesianImage>& frames,
                               const std::vector<CartesianImage>& feats,
                               const std::vector<CartesianImage>& labels,
                               const FrameSequence& seq,
                               const std::vector<std::size_t>& indices) {
    if (frames.size() != labels.size() || frames.size() != seq.frames.size())
        throw DomainError("pack_samples: frame/label/sequence count mismatch");
    if (!feats.empty() && feats.size() != frames.size())
        throw DomainError("pack_samples: feature count mismatch");
    SamplePack pack;
    if (indices.empty()) return pack;
    pack.height = frames[indices[0]].height_px;
    pack.width = frames[indices[0]].width_px;
    pack.mask = frames[indices[0]].mask;
    const int c = feats.empty() ? 1 : 2;
    const std::size_t plane = static_cast<std::size_t>(pack.height) * pack.width;
    for (std::size_t idx : indices) {
        const CartesianImage& f = frames[idx];
        if (f.width_px != pack.width || f.height_px != pack.height)
            throw DomainError("pack_samples: inconsistent lattice");
        Tensor in(c, pack.height, pack.width);
        double fmax = 0.0;
        for (std::size_t i = 0; i < plane; ++i)
            if (f.mask[i]) fmax = std::max(fmax, f.data[i]);
        const double scale = fmax > 0.0 ? 1.0 / fmax : 1.0;
        for (std::size_t i = 0; i < plane; ++i)
            in.v[i] = f.mask[i] ? f.data[i] * scale : 0.0;
        if (c == 2) {
            const CartesianImage& ft = feats[idx];
            for (std::size_t i = 0; i < plane; ++i) in.v[plane + i] = ft.mask[i] ? ft.data[i] : 0.0;
        }
        Tensor lb(1, pack.height, pack.width);
        for (std::size_t i = 0; i < plane; ++i)
            lb.v[i] = labels[idx].mask[i] ? labels[idx].data[i] : 0.0;
        pack.inputs.push_back(std::move(in));
        pack.labels.push_back(std::move(lb));
        pack.sweep_ids.push_back(seq.frames[idx].sweep_id);
    }
    return pack;
}

inline std::vector<std::size_t> indices_for_sweeps(const FrameSequence& seq,
                                                   const std::vector<int>& sweep_ids) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < seq.frames.size(); ++i)
        if (std::find(sweep_ids.begin(), sweep_ids.end(), seq.frames[i].sweep_id) !=
            sweep_ids.end())
            out.push_back(i);
    return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
}

/// Everything the ablation harness consumes: train split, same-anatomy test
/// split (held-out sweeps), different-anatomy test set — each packed with and
/// without the feature channel.
struct BenchmarkData {
    SamplePack train2, train1;      // bmode+feature / bmode-only
    SamplePack test2, test1;        // held-out sweeps, same anatomy
    SamplePack anatomy2, anatomy1;  // unseen anatomy (may be empty)
    int frames_per_sweep = 1;
};

inline int detect_frames_per_sweep(const FrameSequence& seq) {
    if (seq.frames.empty()) return 1;
    int count = 0;
    const int first_sweep = seq.frames[0].sweep_id;
    for (const FrameRecord& fr : seq.frames)
        if (fr.sweep_id == first_sweep) ++count;
    return std::max(count, 1);
}

inline BenchmarkData make_benchmark(const DatasetBundle& data,
                                    const std::vector<CartesianImage>& feats,
                                    double train_fraction, std::uint64_t split_seed,
                                    const DatasetBundle* anatomy = nullptr,
                                    const std::vector<CartesianImage>* anatomy_feats = nullptr) {
    if (data.labels.empty()) throw DomainError("make_benchmark: dataset has no labels");
    const auto [train_sweeps, test_sweeps] =
        split_train_test(data.sequence, train_fraction, split_seed);
    const auto train_idx = indices_for_sweeps(data.sequence, train_sweeps);
    const auto test_idx = indices_for_sweeps(data.sequence, test_sweeps);
    BenchmarkData b;
    b.frames_per_sweep = detect_frames_per_sweep(data.sequence);
    b.train2 = pack_samples(data.frames, feats, data.labels, data.sequence, train_idx);
    b.train1 = pack_samples(data.frames, {}, data.labels, data.sequence, train_idx);
    b.test2 = pack_samples(data.frames, feats, data.labels, data.sequence, test_idx);
    b.test1 = pack_samples(data.frames, {}, data.labels, data.sequence, test_idx);
    if (anatomy) {
        if (anatomy->labels.empty()) throw DomainError("make_benchmark: anatomy set has no labels");
        const auto idx = all_indices(anatomy->frames.size());
        if (anatomy_feats)
            b.anatomy2 = pack_samples(anatomy->frames, *anatomy_feats, anatomy->labels,
                                      anatomy->sequence, idx);
        b.anatomy1 = pack_samples(anatomy->frames, {}, anatomy->labels, anatomy->sequence, idx);
    }
    return b;
}

}  // namespace spinesurf
