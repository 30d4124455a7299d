#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "spinesurf/common.hpp"
#include "spinesurf/geometry.hpp"
#include "spinesurf/labelgen.hpp"
#include "spinesurf/mesh.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// Synthetic B-mode phantom: angle-dependent specular bone reflections over
// multiplicative Rayleigh speckle, with acoustic shadowing below the surface.
// ---------------------------------------------------------------------------
struct PhantomSpec {
    TriangleMesh mesh;
    double reflect_gain = 1.0;
    double specular_exponent = 4.0;
    double shadow_attenuation = 0.15;
    double speckle_mean = 0.12;
    double speckle_shape = std::sqrt(2.0 / M_PI);  // Rayleigh scale; this value has unit mean
    double noise_floor = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (reflect_gain < 0.0 || speckle_mean < 0.0 || speckle_shape < 0.0 || noise_floor < 0.0)
            throw DomainError("phantom: gains must be >= 0");
        if (specular_exponent < 0.0) throw DomainError("phantom: specular_exponent must be >= 0");
        if (shadow_attenuation < 0.0 || shadow_attenuation > 1.0)
            throw DomainError("phantom: shadow_attenuation must be in [0,1]");
        mesh.validate();
    }
};

struct ScanPlan {
    int n_sweeps = 8;
    std::vector<double> sweep_angles_rad;
    std::pair<double, double> carriage_range_m = {0.0, 0.0};
    int frames_per_sweep = 1;
    bool alternate_direction = true;

    void validate() const {
        if (n_sweeps < 1) throw DomainError("scan plan: n_sweeps must be >= 1");
        if (static_cast<int>(sweep_angles_rad.size()) != n_sweeps)
            throw DomainError("scan plan: sweep_angles_rad length must equal n_sweeps");
        if (frames_per_sweep < 1) throw DomainError("scan plan: frames_per_sweep must be >= 1");
        for (double a : sweep_angles_rad)
            if (!std::isfinite(a)) throw DomainError("scan plan: sweep angle not finite");
        if (!std::isfinite(carriage_range_m.first) || !std::isfinite(carriage_range_m.second))
            throw DomainError("scan plan: carriage range not finite");
    }
};

/// One simulated frame plus its exact soft label (shared ray-cast path with
/// the label generator, so the two coincide bit-exactly).
inline std::pair<PolarImage, PolarImage> simulate_frame(const PhantomSpec& spec, const MeshBvh& bvh,
                                                        const Pose& pose, const ImageGeometry& geo,
                                                        std::uint64_t frame_seed,
                                                        double sigma_px = 2.0,
                                                        double max_incidence_rad = 80.0 * M_PI /
                                                                                   180.0) {
    spec.validate();
    geo.validate();
    const auto hits = cast_frame_rays(bvh, pose, geo);
    const PolarImage binary = detail::binary_hit_map(hits, pose, geo, max_incidence_rad);
    const PolarImage label = detail::soften_hits(binary, sigma_px);

    PolarImage img(geo);
    Rng rng(mix_seed(spec.seed, frame_seed));
    for (int s = 0; s < geo.n_samples; ++s) {
        const double depth = geo.sample_depth(s);
        for (int k = 0; k < geo.n_rays; ++k) {
            double base = spec.speckle_mean;
            if (hits[k]) {
                const RayHit& hit = *hits[k];
                if (depth > hit.t) base *= spec.shadow_attenuation;
                if (hit.t >= geo.depth_min_m && hit.t <= geo.depth_max_m) {
                    const int hit_bin = std::clamp(
                        static_cast<int>(std::lround((hit.t - geo.depth_min_m) / geo.depth_step())), 0,
                        geo.n_samples - 1);
                    if (s == hit_bin) {
                        const double a = geo.ray_angle(k);
                        const Vec3 dir = (pose.rotation * Vec3(std::sin(a), 0.0, std::cos(a))).normalized();
                        const double cos_inc = std::abs(dir.dot(hit.normal));
                        base += spec.reflect_gain * std::pow(cos_inc, spec.specular_exponent);
                    }
                }
            }
            img.at(k, s) = base * rng.rayleigh(spec.speckle_shape) + spec.noise_floor;
        }
    }
    return {std::move(img), std::move(label)};
}

inline std::pair<PolarImage, PolarImage> simulate_frame(const PhantomSpec& spec, const Pose& pose,
                                                        const ImageGeometry& geo,
                                                        std::uint64_t frame_seed,
                                                        double sigma_px = 2.0,
                                                        double max_incidence_rad = 80.0 * M_PI /
                                                                                   180.0) {
    return simulate_frame(spec, MeshBvh(spec.mesh), pose, geo, frame_seed, sigma_px,
                          max_incidence_rad);
}

struct ScanResult {
    FrameSequence sequence;
    std::vector<PolarImage> frames;
    std::vector<PolarImage> labels;
};

/// Enumerates sweeps in order; within a sweep the carriage moves uniformly
/// over its range, reversing on odd sweeps when alternate_direction is set.
inline FrameSequence plan_frames(const ScanKinematics& kin, const ScanPlan& plan) {
    plan.validate();
    kin.validate();
    FrameSequence seq;
    seq.kinematics = kin;
    int frame_id = 0;
    for (int sweep = 0; sweep < plan.n_sweeps; ++sweep) {
        const bool backward = plan.alternate_direction && (sweep % 2 == 1);
        for (int j = 0; j < plan.frames_per_sweep; ++j) {
            const int step = backward ? plan.frames_per_sweep - 1 - j : j;
            const double frac =
                plan.frames_per_sweep > 1 ? static_cast<double>(step) / (plan.frames_per_sweep - 1) : 0.0;
            FrameRecord fr;
            fr.frame_id = frame_id++;
            fr.sweep_id = sweep;
            fr.sweep_direction = backward ? SweepDirection::backward : SweepDirection::forward;
            fr.joint_theta_rad = plan.sweep_angles_rad[sweep];
            fr.joint_t_m = plan.carriage_range_m.first +
                           frac * (plan.carriage_range_m.second - plan.carriage_range_m.first);
            fr.pose = pose_from_joints(kin, fr.joint_theta_rad, fr.joint_t_m);
            seq.frames.push_back(fr);
        }
    }
    return seq;
}

inline ScanResult simulate_scan(const PhantomSpec& spec, const ScanKinematics& kin,
                                const ScanPlan& plan, const ImageGeometry& geo,
                                double sigma_px = 2.0,
                                double max_incidence_rad = 80.0 * M_PI / 180.0) {
    spec.validate();
    ScanResult result;
    result.sequence = plan_frames(kin, plan);
    const std::size_t n = result.sequence.frames.size();
    result.frames.resize(n);
    result.labels.resize(n);
    const MeshBvh bvh(spec.mesh);
    parallel_for(n, [&](std::size_t i) {
        const FrameRecord& fr = result.sequence.frames[i];
        auto [img, label] = simulate_frame(spec, bvh, fr.pose, geo,
                                           static_cast<std::uint64_t>(fr.frame_id), sigma_px,
                                           max_incidence_rad);
        result.frames[i] = std::move(img);
        result.labels[i] = std::move(label);
    });
    return result;
}

/// Sweep-granular train/test split: returns the (train, test) sweep ids, with
/// whole sweeps on one side and the train side closest to the requested
/// fraction of frames.
inline std::pair<std::vector<int>, std::vector<int>> split_train_test(const FrameSequence& seq,
                                                                      double train_fraction,
                                                                      std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw DomainError("split: train_fraction must be in (0,1)");
    std::vector<int> sweep_ids;
    for (const FrameRecord& fr : seq.frames)
        if (sweep_ids.empty() || sweep_ids.back() != fr.sweep_id) sweep_ids.push_back(fr.sweep_id);
    if (sweep_ids.size() < 2) throw DomainError("split: need at least 2 sweeps");

    Rng rng(seed);
    for (std::size_t i = sweep_ids.size() - 1; i > 0; --i)
        std::swap(sweep_ids[i], sweep_ids[rng.uniform_int(static_cast<int>(i) + 1)]);

    std::vector<int> frames_per_sweep_id;
    for (int sid : sweep_ids) {
        int count = 0;
        for (const FrameRecord& fr : seq.frames)
            if (fr.sweep_id == sid) ++count;
        frames_per_sweep_id.push_back(count);
    }
    const double target = train_fraction * static_cast<double>(seq.frames.size());
    int best_k = 1;
    double best_err = std::numeric_limits<double>::infinity();
    int running = 0;
    for (std::size_t k = 1; k < sweep_ids.size(); ++k) {
        running += frames_per_sweep_id[k - 1];
        const double err = std::abs(running - target);
        if (err < best_err) {
            best_err = err;
            best_k = static_cast<int>(k);
        }
    }
    std::vector<int> train(sweep_ids.begin(), sweep_ids.begin() + best_k);
    std::vector<int> test(sweep_ids.begin() + best_k, sweep_ids.end());
    return {train, test};
}

}  // namespace spinesurf
