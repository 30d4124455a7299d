// Command-line front end: phantom simulation, feature extraction, label
// generation, training, inference, volume reconstruction, evaluation, overlay
// rendering, and a bundled end-to-end demo.
//
// Exit codes: 0 success, 1 domain/input errors, 2 usage errors.
// Diagnostics go to stderr; machine-readable outputs go to files only.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spinesurf/spinesurf.hpp"

namespace fs = std::filesystem;
using namespace spinesurf;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers.
// ---------------------------------------------------------------------------
RunConfig config_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

PolarImage polar_from_pfm(const PfmImage& pfm, const ImageGeometry& geo) {
    if (pfm.width != geo.n_rays || pfm.height != geo.n_samples)
        throw DomainError("pfm dims do not match the polar lattice");
    PolarImage img(geo);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = pfm.data[i];
    return img;
}

CartesianImage tensor_plane_to_cartesian(const Tensor& t, const CartesianImage& lattice) {
    if (t.h != lattice.height_px || t.w != lattice.width_px)
        throw DomainError("tensor does not match dataset lattice");
    CartesianImage out = lattice;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = out.mask[i] ? std::clamp(t.v[i], 0.0, 1.0) : 0.0;
    return out;
}

std::vector<CartesianImage> load_prefixed_images(const fs::path& dir, const char* prefix,
                                                 const DatasetBundle& data) {
    std::vector<CartesianImage> out;
    out.reserve(data.sequence.frames.size());
    for (const FrameRecord& fr : data.sequence.frames)
        out.push_back(read_frame_pfm(dir / frame_file_name(prefix, fr.frame_id), data.lattice));
    return out;
}

bool prefixed_images_exist(const fs::path& dir, const char* prefix, const DatasetBundle& data) {
    for (const FrameRecord& fr : data.sequence.frames)
        if (!fs::exists(dir / frame_file_name(prefix, fr.frame_id))) return false;
    return !data.sequence.frames.empty();
}

void write_feature_outputs(const fs::path& dir, const DatasetBundle& data,
                           const std::vector<CartesianImage>& feats,
                           const std::vector<ConfidenceSolveInfo>& infos, const RunConfig& c) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < feats.size(); ++i)
        write_pfm(dir / frame_file_name("feat", data.sequence.frames[i].frame_id),
                  to_pfm(feats[i]));
    std::ofstream mf(dir / "features_manifest.txt");
    if (!mf) throw DomainError("cannot open for writing: " + (dir / "features_manifest.txt").string());
    mf << "param.n_scales = " << c.log_gabor.n_scales << "\n";
    mf << "param.n_orientations = " << c.log_gabor.n_orientations << "\n";
    mf << "param.min_wavelength_px = " << format_double(c.log_gabor.min_wavelength_px) << "\n";
    mf << "param.scale_mult = " << format_double(c.log_gabor.scale_mult) << "\n";
    mf << "param.sigma_onf = " << format_double(c.log_gabor.sigma_onf) << "\n";
    mf << "param.d_theta_sigma = " << format_double(c.log_gabor.d_theta_sigma) << "\n";
    mf << "param.noise_t = " << format_double(c.log_gabor.noise_t) << "\n";
    mf << "param.epsilon = " << format_double(c.log_gabor.epsilon) << "\n";
    mf << "param.alpha = " << format_double(c.confidence.alpha) << "\n";
    mf << "param.beta = " << format_double(c.confidence.beta) << "\n";
    mf << "param.gamma = " << format_double(c.confidence.gamma) << "\n";
    mf << "param.solver_tol = " << format_double(c.confidence.solver_tol) << "\n";
    mf << "param.max_iters = " << c.confidence.max_iters << "\n";
    mf << "param.sobel_threshold = " << format_double(c.sobel_threshold) << "\n";
    mf << "param.blur_kernel_px = " << c.blur_kernel_px << "\n";
    for (std::size_t i = 0; i < infos.size(); ++i) {
        char key[64];
        std::snprintf(key, sizeof(key), "frame_%06d", data.sequence.frames[i].frame_id);
        mf << key << ".residual = " << format_double(infos[i].residual) << "\n";
        mf << key << ".iterations = " << infos[i].iterations << "\n";
    }
    if (!mf) throw DomainError("features manifest write failed");
}

SamplePack pack_for(const DatasetBundle& data, const std::vector<CartesianImage>& feats,
                    const std::vector<std::size_t>& idx, int channels) {
    if (channels == 2 && feats.empty())
        throw DomainError("two-channel input requested but feature maps are missing");
    return pack_samples(data.frames, channels == 2 ? feats : std::vector<CartesianImage>{},
                        data.labels, data.sequence, idx);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------
void cmd_simulate(const std::string& spec_path, const std::string& plan_path,
                  const std::string& out_dir) {
    const RunConfig spec_cfg = config_or_default(spec_path);
    const RunConfig plan_cfg = plan_path.empty() ? spec_cfg : config_or_default(plan_path);
    const DatasetBundle data = build_dataset(
        spec_cfg.phantom_spec(), spec_cfg.kinematics(), plan_cfg.scan_plan(), spec_cfg.geometry,
        spec_cfg.lattice_px, spec_cfg.label_sigma_px, spec_cfg.max_incidence_deg * M_PI / 180.0);
    save_dataset(out_dir, data);
    std::cerr << "simulated " << data.frames.size() << " frames into " << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------
void cmd_features(const std::string& input_dir, const std::string& output_dir,
                  const std::string& params_path) {
    const RunConfig c = config_or_default(params_path);
    const DatasetBundle data = load_dataset(input_dir);
    std::vector<ConfidenceSolveInfo> infos;
    const std::vector<CartesianImage> feats =
        compute_features(data.frames, data.geometry, c.log_gabor, c.confidence, c.sobel_threshold,
                         c.blur_kernel_px, &infos);
    write_feature_outputs(output_dir, data, feats, infos, c);
    std::cerr << "wrote " << feats.size() << " feature maps into " << output_dir << "\n";
}

// ---------------------------------------------------------------------------
// label
// ---------------------------------------------------------------------------
void write_registration(const fs::path& path, const IcpResult& icp) {
    MetaMap m;
    std::string pose;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) pose += format_double(icp.transform.rotation(r, c)) + " ";
        pose += format_double(icp.transform.translation(r));
        if (r < 2) pose += " ";
    }
    m["pose"] = pose;
    m["rmse_m"] = format_double(icp.rmse_m);
    m["iterations"] = std::to_string(icp.iterations);
    m["converged"] = icp.converged ? "true" : "false";
    write_meta(path, m);
}

void cmd_label(const std::string& mesh_path, const std::string& frames_dir,
               const std::string& annotations_path, const std::string& out_dir,
               const std::string& config_path) {
    const RunConfig c = config_or_default(config_path);
    const TriangleMesh mesh = read_ply_mesh(mesh_path);
    const DatasetBundle data = load_dataset(frames_dir);
    fs::create_directories(out_dir);

    Pose mesh_to_world;  // identity unless annotations drive a registration
    IcpResult icp;
    icp.rmse_m = 0.0;
    icp.converged = true;
    if (!annotations_path.empty()) {
        const PointCloud annotations = read_ply_points(annotations_path);
        icp = icp_register(annotations, mesh, c.icp_max_iter, c.icp_tol);
        mesh_to_world = icp.transform.inverse();
    }
    write_registration(fs::path(out_dir) / "registration.txt", icp);

    const TriangleMesh mesh_world = transform_mesh(mesh, mesh_to_world);
    const std::vector<PolarImage> labels =
        generate_sequence_labels(mesh_world, data.sequence, data.geometry, c.label_sigma_px,
                                 c.max_incidence_deg * M_PI / 180.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CartesianImage cart = data.lattice;
        polar_to_cartesian_into(labels[i], cart);
        write_pfm(fs::path(out_dir) / frame_file_name("label", data.sequence.frames[i].frame_id),
                  to_pfm(cart));
    }
    std::cerr << "wrote " << labels.size() << " labels into " << out_dir
              << " (registration rmse " << icp.rmse_m << " m)\n";
}

// ---------------------------------------------------------------------------
// train / infer
// ---------------------------------------------------------------------------
void cmd_train(const std::string& data_dir, const std::string& features_dir,
               const std::string& config_path, const std::string& params_out) {
    const RunConfig c = config_or_default(config_path);
    const DatasetBundle data = load_dataset(data_dir);
    if (data.labels.empty()) throw DomainError("train: dataset has no label files");
    std::vector<CartesianImage> feats;
    if (c.net.in_channels == 2) {
        const fs::path fdir = features_dir.empty() ? fs::path(data_dir) : fs::path(features_dir);
        feats = load_prefixed_images(fdir, "feat", data);
    }
    const SamplePack pack =
        pack_for(data, feats, all_indices(data.frames.size()), c.net.in_channels);
    NetParams params = make_net_params(c.net, c.train.seed);
    const TrainTrace trace = train(params, c.train, pack.train_samples());
    save_params(params_out, params_out + ".manifest", params);
    std::ofstream lf(params_out + ".loss.txt");
    for (std::size_t e = 0; e < trace.epoch_loss.size(); ++e)
        lf << e << " " << format_double(trace.epoch_loss[e]) << "\n";
    std::cerr << "trained " << c.train.epochs << " epochs; final loss "
              << trace.epoch_loss.back() << "; params written to " << params_out << "\n";
}

void cmd_infer(const std::string& data_dir, const std::string& features_dir,
               const std::string& params_path, const std::string& config_path,
               const std::string& out_dir) {
    const RunConfig c = config_or_default(config_path);
    const NetParams params = load_params(params_path);
    const DatasetBundle data = load_dataset(data_dir);
    std::vector<CartesianImage> feats;
    if (params.spec.in_channels == 2) {
        const fs::path fdir = features_dir.empty() ? fs::path(data_dir) : fs::path(features_dir);
        feats = load_prefixed_images(fdir, "feat", data);
    }
    // Labels may be absent at inference time; pack with zero labels.
    DatasetBundle shadow = data;
    if (shadow.labels.empty()) shadow.labels.assign(shadow.frames.size(), shadow.lattice);
    const SamplePack pack =
        pack_for(shadow, feats, all_indices(shadow.frames.size()), params.spec.in_channels);
    const std::vector<Tensor> preds =
        infer(params, pack.inputs, pack.sweep_ids, c.train.reset_policy);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < preds.size(); ++i)
        write_pfm(fs::path(out_dir) / frame_file_name("pred", data.sequence.frames[i].frame_id),
                  to_pfm(tensor_plane_to_cartesian(preds[i], data.lattice)));
    std::cerr << "wrote " << preds.size() << " predictions into " << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------
std::vector<PolarImage> load_maps_as_polar(const fs::path& maps_dir, const DatasetBundle& data) {
    const char* prefixes[] = {"pred", "label", "feat", "frame"};
    const char* prefix = nullptr;
    for (const char* p : prefixes)
        if (prefixed_images_exist(maps_dir, p, data)) {
            prefix = p;
            break;
        }
    if (!prefix) throw DomainError("no per-frame maps found in " + maps_dir.string());
    std::cerr << "compounding maps with prefix '" << prefix << "'\n";
    std::vector<PolarImage> maps;
    maps.reserve(data.sequence.frames.size());
    for (const FrameRecord& fr : data.sequence.frames) {
        const PfmImage pfm = read_pfm(maps_dir / frame_file_name(prefix, fr.frame_id));
        if (pfm.width == data.geometry.n_rays && pfm.height == data.geometry.n_samples) {
            maps.push_back(polar_from_pfm(pfm, data.geometry));
        } else {
            CartesianImage cart = data.lattice;
            if (pfm.width != cart.width_px || pfm.height != cart.height_px)
                throw DomainError("map dims match neither the polar nor the Cartesian lattice");
            for (std::size_t i = 0; i < cart.data.size(); ++i)
                cart.data[i] = cart.mask[i] ? static_cast<double>(pfm.data[i]) : 0.0;
            maps.push_back(cartesian_to_polar(cart, data.geometry));
        }
    }
    return maps;
}

void cmd_reconstruct(const std::string& frames_dir, const std::string& maps_dir,
                     const std::string& mode_str, double spacing, const std::string& out_path,
                     double threshold, bool trilinear) {
    const DatasetBundle data = load_dataset(frames_dir);
    const std::vector<PolarImage> maps = load_maps_as_polar(maps_dir, data);
    const CompoundingMode mode = compounding_mode_from_string(mode_str);
    const double s = spacing > 0.0 ? spacing : data.lattice.pixel_size_m;
    const GridSpec grid = fit_grid(data.sequence, data.geometry, Vec3::Constant(s));
    const VolumeGrid vol = compound(data.sequence, maps, data.geometry, grid, mode, trilinear);
    export_nrrd(vol, out_path);
    const PointCloud cloud = extract_surface_points(vol, threshold);
    const fs::path surface = fs::path(out_path).parent_path() / "surface.ply";
    write_ply_points(surface, cloud);
    std::cerr << "volume " << grid.dims[0] << "x" << grid.dims[1] << "x" << grid.dims[2] << " -> "
              << out_path << "; " << cloud.points.size() << " surface points -> "
              << surface.string() << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
void cmd_eval(const std::string& grid_path, const std::string& data_dir,
              const std::string& features_dir, const std::string& anatomy_dir,
              const std::string& anatomy_features_dir, const std::string& config_path,
              const std::string& out_csv) {
    const RunConfig c = config_or_default(config_path);
    const std::vector<ExperimentConfig> grid = load_experiment_grid(grid_path);
    const DatasetBundle data = load_dataset(data_dir);
    if (data.labels.empty()) throw DomainError("eval: dataset has no label files");

    const fs::path fdir = features_dir.empty() ? fs::path(data_dir) : fs::path(features_dir);
    std::vector<CartesianImage> feats;
    if (prefixed_images_exist(fdir, "feat", data)) feats = load_prefixed_images(fdir, "feat", data);

    std::optional<DatasetBundle> anatomy;
    std::vector<CartesianImage> anatomy_feats;
    if (!anatomy_dir.empty()) {
        anatomy = load_dataset(anatomy_dir);
        const fs::path afdir =
            anatomy_features_dir.empty() ? fs::path(anatomy_dir) : fs::path(anatomy_features_dir);
        if (prefixed_images_exist(afdir, "feat", *anatomy))
            anatomy_feats = load_prefixed_images(afdir, "feat", *anatomy);
    }

    const BenchmarkData bench =
        make_benchmark(data, feats, c.train_fraction, c.train.seed,
                       anatomy ? &*anatomy : nullptr, anatomy ? &anatomy_feats : nullptr);
    AblationSettings settings;
    settings.net = c.net;
    settings.train = c.train;
    settings.frames_per_sweep = bench.frames_per_sweep;
    const auto results = run_ablation(grid, bench, settings, out_csv);
    for (const ExperimentResult& r : results)
        std::cerr << r.experiment_id << ": "
                  << (r.failed ? "FAILED (" + r.error + ")" : format_double(r.avg_dice)) << "\n";
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------
void cmd_render(const std::string& frame_path, const std::string& label_path,
                const std::string& pred_path, const std::string& out_path) {
    const PfmImage frame = read_pfm(frame_path);
    std::optional<PfmImage> label, pred;
    if (!label_path.empty()) label = read_pfm(label_path);
    if (!pred_path.empty()) pred = read_pfm(pred_path);
    for (const auto* overlay : {&label, &pred})
        if (*overlay && ((*overlay)->width != frame.width || (*overlay)->height != frame.height))
            throw DomainError("render: overlay dims do not match the frame");
    float fmax = 0.0f;
    for (float v : frame.data) fmax = std::max(fmax, v);
    const double scale = fmax > 0.0f ? 180.0 / fmax : 0.0;
    std::vector<std::uint8_t> pixels(frame.data.size());
    for (std::size_t i = 0; i < frame.data.size(); ++i) {
        double v = std::clamp(frame.data[i] * scale, 0.0, 180.0);
        if (label && label->data[i] >= 0.5f) v += 40.0;  // label band
        if (pred && pred->data[i] >= 0.5f) v += 35.0;    // prediction band
        pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    write_pgm(out_path, frame.width, frame.height, pixels);
    std::cerr << "rendered " << frame.width << "x" << frame.height << " overlay to " << out_path
              << "\n";
}

// ---------------------------------------------------------------------------
// demo: the full chain, in-process, on the bundled config.
// ---------------------------------------------------------------------------
struct SurfaceStats {
    std::size_t n_points = 0;
    double mean_m = 0.0, median_m = 0.0, p95_m = 0.0;
    double frac_within = 0.0;
};

SurfaceStats cylinder_surface_stats(const PointCloud& cloud, const Vec3& center, double radius,
                                    double half_length, double tol_m) {
    SurfaceStats st;
    st.n_points = cloud.points.size();
    if (cloud.points.empty()) return st;
    std::vector<double> d(cloud.points.size());
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const Vec3& p = cloud.points[i];
        const double radial = std::hypot(p.x() - center.x(), p.z() - center.z());
        const double lateral = std::abs(radial - radius);
        const double overhang = std::max(std::abs(p.y() - center.y()) - half_length, 0.0);
        d[i] = std::hypot(lateral, overhang);
    }
    std::vector<double> sorted = d;
    std::sort(sorted.begin(), sorted.end());
    double acc = 0.0;
    std::size_t within = 0;
    for (double v : d) {
        acc += v;
        if (v <= tol_m) ++within;
    }
    st.mean_m = acc / d.size();
    st.median_m = sorted[sorted.size() / 2];
    st.p95_m = sorted[static_cast<std::size_t>(0.95 * (sorted.size() - 1))];
    st.frac_within = static_cast<double>(within) / d.size();
    return st;
}

void cmd_demo(const std::string& config_path, const std::string& out_dir) {
    const RunConfig c = config_or_default(config_path);
    const fs::path out(out_dir);
    fs::create_directories(out);

    // 1. Simulate the phantom scan.
    std::cerr << "demo: simulating phantom scan\n";
    const DatasetBundle data =
        build_dataset(c.phantom_spec(), c.kinematics(), c.scan_plan(), c.geometry, c.lattice_px,
                      c.label_sigma_px, c.max_incidence_deg * M_PI / 180.0);
    save_dataset(out / "data", data);

    // 2. Hand-crafted features.
    std::cerr << "demo: extracting features\n";
    std::vector<ConfidenceSolveInfo> infos;
    const std::vector<CartesianImage> feats =
        compute_features(data.frames, data.geometry, c.log_gabor, c.confidence, c.sobel_threshold,
                         c.blur_kernel_px, &infos);
    write_feature_outputs(out / "data", data, feats, infos, c);

    // 3. Registration sanity pass: sampled surface points against the mesh.
    const PointCloud annotations = sample_mesh_surface(data.mesh, 256, c.seed);
    const IcpResult icp = icp_register(annotations, data.mesh, c.icp_max_iter, c.icp_tol);
    write_registration(out / "registration.txt", icp);

    // 4. Train on whole sweeps, hold out the rest.
    std::cerr << "demo: training\n";
    const auto [train_sweeps, test_sweeps] =
        split_train_test(data.sequence, c.train_fraction, c.train.seed);
    const auto train_idx = indices_for_sweeps(data.sequence, train_sweeps);
    const auto test_idx = indices_for_sweeps(data.sequence, test_sweeps);
    UNetSpec spec = c.net;
    spec.in_channels = 2;
    const SamplePack train_pack = pack_for(data, feats, train_idx, 2);
    NetParams params = make_net_params(spec, c.train.seed);
    const TrainTrace trace = train(params, c.train, train_pack.train_samples());
    save_params(out / "params.bin", out / "params.bin.manifest", params);
    {
        std::ofstream lf(out / "loss.txt");
        for (std::size_t e = 0; e < trace.epoch_loss.size(); ++e)
            lf << e << " " << format_double(trace.epoch_loss[e]) << "\n";
    }

    // 5. Inference over the full sequence.
    std::cerr << "demo: inference\n";
    const SamplePack all_pack = pack_for(data, feats, all_indices(data.frames.size()), 2);
    const std::vector<Tensor> preds =
        infer(params, all_pack.inputs, all_pack.sweep_ids, c.train.reset_policy);
    fs::create_directories(out / "pred");
    for (std::size_t i = 0; i < preds.size(); ++i)
        write_pfm(out / "pred" / frame_file_name("pred", data.sequence.frames[i].frame_id),
                  to_pfm(tensor_plane_to_cartesian(preds[i], data.lattice)));

    // 6. Held-out w-Dice.
    double test_dice = 0.0;
    for (std::size_t idx : test_idx)
        test_dice += weighted_dice_score_masked(preds[idx], all_pack.labels[idx], all_pack.mask);
    if (!test_idx.empty()) test_dice /= static_cast<double>(test_idx.size());

    // 7. Feature localization rate against the labels, in the polar domain.
    double loc_rate = 0.0;
    for (std::size_t i = 0; i < data.frames.size(); ++i)
        loc_rate += localization_rate(cartesian_to_polar(feats[i], data.geometry),
                                      cartesian_to_polar(data.labels[i], data.geometry));
    loc_rate /= static_cast<double>(data.frames.size());

    // 8. Compound predictions into a volume and extract the surface cloud.
    std::cerr << "demo: reconstructing volume\n";
    std::vector<PolarImage> maps;
    maps.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
        maps.push_back(
            cartesian_to_polar(tensor_plane_to_cartesian(preds[i], data.lattice), data.geometry));
    const double spacing = c.voxel_spacing_m > 0.0 ? c.voxel_spacing_m : data.lattice.pixel_size_m;
    const GridSpec grid = fit_grid(data.sequence, data.geometry, Vec3::Constant(spacing));
    const VolumeGrid vol =
        compound(data.sequence, maps, data.geometry, grid, c.compounding, c.trilinear);
    export_nrrd(vol, out / "volume.nrrd");
    const PointCloud cloud = extract_surface_points(vol, c.surface_threshold);
    write_ply_points(out / "surface.ply", cloud);

    // 9. Distance statistics against the analytic cylinder.
    const double tol = 2.0 * spacing;
    const SurfaceStats st = cylinder_surface_stats(
        cloud, c.phantom_setup.cylinder_center, c.phantom_setup.cylinder_radius_m,
        c.phantom_setup.cylinder_half_length_m, tol);

    // 10. Report (timing-free and fully deterministic).
    std::ofstream rf(out / "report.txt");
    if (!rf) throw DomainError("cannot open for writing: " + (out / "report.txt").string());
    rf << "frames = " << data.frames.size() << "\n";
    rf << "sweeps = " << c.n_sweeps << "\n";
    rf << "lattice_px = " << c.lattice_px << "\n";
    rf << "train_frames = " << train_idx.size() << "\n";
    rf << "test_frames = " << test_idx.size() << "\n";
    rf << "registration_rmse_m = " << format_double(icp.rmse_m) << "\n";
    rf << "registration_iterations = " << icp.iterations << "\n";
    rf << "final_train_loss = " << format_double(trace.epoch_loss.back()) << "\n";
    rf << "localization_rate = " << format_double(loc_rate) << "\n";
    rf << "test_w_dice = " << format_double(test_dice) << "\n";
    rf << "surface_points = " << st.n_points << "\n";
    rf << "surface_dist_mean_mm = " << format_double(st.mean_m * 1e3) << "\n";
    rf << "surface_dist_median_mm = " << format_double(st.median_m * 1e3) << "\n";
    rf << "surface_dist_p95_mm = " << format_double(st.p95_m * 1e3) << "\n";
    rf << "frac_within_2_voxel = " << format_double(st.frac_within) << "\n";
    if (!rf) throw DomainError("report write failed");
    std::cerr << "demo: report written; test w-Dice " << test_dice << ", localization "
              << loc_rate << ", surface frac within 2 voxels " << st.frac_within << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spinesurf: spatiotemporal bone-surface estimation toolkit"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "simulate a phantom scan into a frame directory");
    std::string sim_spec, sim_plan, sim_out;
    sim->add_option("--spec", sim_spec, "phantom/geometry config file");
    sim->add_option("--plan", sim_plan, "scan plan config file (defaults to --spec)");
    sim->add_option("--out", sim_out, "output frame directory")->required();

    // features
    auto* feat = app.add_subcommand("features", "run the hand-crafted feature pipeline");
    std::string feat_in, feat_out, feat_params;
    feat->add_option("--input", feat_in, "frame directory")->required();
    feat->add_option("--output", feat_out, "output directory for feature maps")->required();
    feat->add_option("--params", feat_params, "feature parameter config file");

    // label
    auto* lab = app.add_subcommand("label", "generate visibility-based soft labels from a mesh");
    std::string lab_mesh, lab_frames, lab_annotations, lab_out, lab_config;
    lab->add_option("--mesh", lab_mesh, "surface mesh (ASCII PLY)")->required();
    lab->add_option("--frames", lab_frames, "frame directory")->required();
    lab->add_option("--annotations", lab_annotations,
                    "annotated surface points (PLY) registered to the mesh via ICP");
    lab->add_option("--out", lab_out, "output directory")->required();
    lab->add_option("--config", lab_config, "label generation config file");

    // train
    auto* tr = app.add_subcommand("train", "train the segmentation network");
    std::string tr_data, tr_features, tr_config, tr_params;
    tr->add_option("--data", tr_data, "frame directory with labels")->required();
    tr->add_option("--features", tr_features, "feature map directory (default: --data)");
    tr->add_option("--config", tr_config, "run config file");
    tr->add_option("--params-out", tr_params, "output parameter blob")->required();

    // infer
    auto* inf = app.add_subcommand("infer", "run inference and write per-frame predictions");
    std::string inf_data, inf_features, inf_params, inf_config, inf_out;
    inf->add_option("--data", inf_data, "frame directory")->required();
    inf->add_option("--features", inf_features, "feature map directory (default: --data)");
    inf->add_option("--params", inf_params, "parameter blob")->required();
    inf->add_option("--config", inf_config, "run config file (reset policy)");
    inf->add_option("--out", inf_out, "output directory for predictions")->required();

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "compound per-frame maps into a voxel volume");
    std::string rec_frames, rec_maps, rec_mode = "max", rec_out;
    double rec_spacing = 0.0, rec_threshold = 0.5;
    bool rec_trilinear = false;
    rec->add_option("--frames", rec_frames, "frame directory (poses and geometry)")->required();
    rec->add_option("--maps", rec_maps, "directory of per-frame maps to compound")->required();
    rec->add_option("--mode", rec_mode, "compounding mode: max|mean");
    rec->add_option("--spacing", rec_spacing, "voxel spacing in meters (0 = pixel size)");
    rec->add_option("--out", rec_out, "output NRRD header path")->required();
    rec->add_option("--threshold", rec_threshold, "surface extraction threshold");
    rec->add_flag("--trilinear", rec_trilinear, "distribute splats trilinearly");

    // eval
    auto* ev = app.add_subcommand("eval", "run the ablation grid and write a CSV");
    std::string ev_grid, ev_data, ev_features, ev_anatomy, ev_anatomy_features, ev_config, ev_out;
    ev->add_option("--grid", ev_grid, "experiment grid config file")->required();
    ev->add_option("--data", ev_data, "dataset directory (frames + labels)")->required();
    ev->add_option("--features", ev_features, "feature map directory (default: --data)");
    ev->add_option("--data-anatomy", ev_anatomy, "unseen-anatomy dataset directory");
    ev->add_option("--features-anatomy", ev_anatomy_features,
                   "unseen-anatomy feature directory (default: --data-anatomy)");
    ev->add_option("--config", ev_config, "run config file");
    ev->add_option("--out", ev_out, "output CSV path")->required();

    // render
    auto* ren = app.add_subcommand("render", "render a B-mode/label/prediction overlay PGM");
    std::string ren_frame, ren_label, ren_pred, ren_out;
    ren->add_option("--frame", ren_frame, "B-mode PFM")->required();
    ren->add_option("--label", ren_label, "label PFM overlay");
    ren->add_option("--pred", ren_pred, "prediction PFM overlay");
    ren->add_option("--out", ren_out, "output PGM path")->required();

    // demo
    auto* dem = app.add_subcommand("demo", "run the bundled end-to-end demonstration");
    std::string dem_config, dem_out;
    dem->add_option("--config", dem_config, "demo config file");
    dem->add_option("--out", dem_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (app.got_subcommand(sim)) cmd_simulate(sim_spec, sim_plan, sim_out);
        else if (app.got_subcommand(feat)) cmd_features(feat_in, feat_out, feat_params);
        else if (app.got_subcommand(lab))
            cmd_label(lab_mesh, lab_frames, lab_annotations, lab_out, lab_config);
        else if (app.got_subcommand(tr)) cmd_train(tr_data, tr_features, tr_config, tr_params);
        else if (app.got_subcommand(inf))
            cmd_infer(inf_data, inf_features, inf_params, inf_config, inf_out);
        else if (app.got_subcommand(rec))
            cmd_reconstruct(rec_frames, rec_maps, rec_mode, rec_spacing, rec_out, rec_threshold,
                            rec_trilinear);
        else if (app.got_subcommand(ev))
            cmd_eval(ev_grid, ev_data, ev_features, ev_anatomy, ev_anatomy_features, ev_config,
                     ev_out);
        else if (app.got_subcommand(ren)) cmd_render(ren_frame, ren_label, ren_pred, ren_out);
        else if (app.got_subcommand(dem)) cmd_demo(dem_config, dem_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
