#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spinesurf/common.hpp"
#include "spinesurf/eval.hpp"
#include "spinesurf/features.hpp"
#include "spinesurf/geometry.hpp"
#include "spinesurf/mesh.hpp"
#include "spinesurf/net.hpp"
#include "spinesurf/phantom.hpp"
#include "spinesurf/volume.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// Minimal strict INI: [section] headers, key = value lines, # or ; comments.
// ---------------------------------------------------------------------------
struct IniSection {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }
};

struct IniFile {
    std::vector<IniSection> sections;

    static IniFile parse_text(const std::string& text, const std::string& origin) {
        IniFile ini;
        std::istringstream ss(text);
        std::string line;
        int lineno = 0;
        const auto trim = [](std::string s) {
            const auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
            s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
            s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
            return s;
        };
        while (std::getline(ss, line)) {
            ++lineno;
            const auto comment = line.find_first_of("#;");
            if (comment != std::string::npos) line.erase(comment);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw DomainError(origin + ":" + std::to_string(lineno) +
                                      ": malformed section header");
                ini.sections.push_back({trim(line.substr(1, line.size() - 2)), {}});
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw DomainError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            if (ini.sections.empty())
                throw DomainError(origin + ":" + std::to_string(lineno) +
                                  ": key outside any [section]");
            ini.sections.back().entries.emplace_back(trim(line.substr(0, eq)),
                                                     trim(line.substr(eq + 1)));
        }
        return ini;
    }

    static IniFile parse(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw DomainError("cannot open: " + path.string());
        std::stringstream buf;
        buf << f.rdbuf();
        return parse_text(buf.str(), path.string());
    }

    const IniSection* find(const std::string& name) const {
        for (const IniSection& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
};

namespace detail {

/// Tracks which keys a section loader consumed so unknown keys can be rejected.
class SectionReader {
  public:
    SectionReader(const IniFile& ini, const std::string& name) : name_(name) {
        section_ = ini.find(name);
    }
    bool present() const { return section_ != nullptr; }

    template <typename T>
    void get(const std::string& key, T& out) {
        consumed_.insert(key);
        if (!section_) return;
        const std::string* v = section_->find(key);
        if (!v) return;
        parse_value(*v, key, out);
    }

    void finish() const {
        if (!section_) return;
        for (const auto& [k, v] : section_->entries)
            if (!consumed_.count(k))
                throw DomainError("config: unknown key [" + name_ + "] " + k);
    }

  private:
    void parse_value(const std::string& raw, const std::string& key, double& out) const {
        std::size_t pos = 0;
        try {
            out = std::stod(raw, &pos);
        } catch (...) {
            bad(key, raw);
        }
        if (pos != raw.size()) bad(key, raw);
    }
    void parse_value(const std::string& raw, const std::string& key, int& out) const {
        std::size_t pos = 0;
        try {
            out = std::stoi(raw, &pos);
        } catch (...) {
            bad(key, raw);
        }
        if (pos != raw.size()) bad(key, raw);
    }
    void parse_value(const std::string& raw, const std::string& key, std::uint64_t& out) const {
        std::size_t pos = 0;
        try {
            out = std::stoull(raw, &pos);
        } catch (...) {
            bad(key, raw);
        }
        if (pos != raw.size()) bad(key, raw);
    }
    void parse_value(const std::string& raw, const std::string& key, bool& out) const {
        if (raw == "true" || raw == "1")
            out = true;
        else if (raw == "false" || raw == "0")
            out = false;
        else
            bad(key, raw);
    }
    void parse_value(const std::string& raw, const std::string&, std::string& out) const {
        out = raw;
    }
    void parse_value(const std::string& raw, const std::string& key, Vec3& out) const {
        std::istringstream ss(raw);
        if (!(ss >> out[0] >> out[1] >> out[2])) bad(key, raw);
        std::string rest;
        if (ss >> rest) bad(key, raw);
    }
    [[noreturn]] void bad(const std::string& key, const std::string& raw) const {
        throw DomainError("config: bad value for [" + name_ + "] " + key + ": " + raw);
    }

    std::string name_;
    const IniSection* section_ = nullptr;
    std::set<std::string> consumed_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Full run configuration: every knob defaulted, every key validated.
// ---------------------------------------------------------------------------
struct PhantomSetup {
    std::string mesh_kind = "cylinder_wedge";  // cylinder|wedge|plate|cylinder_wedge|<file.ply>
    Vec3 cylinder_center = Vec3(0.0, 0.03, 0.055);
    double cylinder_radius_m = 0.012;
    double cylinder_half_length_m = 0.05;
    int cylinder_segments = 48;
    int cylinder_slices = 12;
    Vec3 wedge_center = Vec3(0.0, 0.03, 0.082);
    double wedge_half_width_m = 0.009;
    double wedge_height_m = 0.006;
    double wedge_half_length_m = 0.04;
    Vec3 plate_center = Vec3(0.0, 0.03, 0.06);
    double plate_half_x_m = 0.02;
    double plate_half_y_m = 0.05;
    double plate_tilt_deg = 8.0;
    int plate_subdivisions = 12;

    TriangleMesh build() const {
        if (mesh_kind == "cylinder")
            return make_cylinder(cylinder_center, cylinder_radius_m, cylinder_half_length_m,
                                 cylinder_segments, cylinder_slices);
        if (mesh_kind == "wedge")
            return make_wedge(wedge_center, wedge_half_width_m, wedge_height_m,
                              wedge_half_length_m);
        if (mesh_kind == "plate")
            return make_plate(plate_center, plate_half_x_m, plate_half_y_m,
                              plate_tilt_deg * M_PI / 180.0, plate_subdivisions);
        if (mesh_kind == "cylinder_wedge") {
            TriangleMesh m = make_cylinder(cylinder_center, cylinder_radius_m,
                                           cylinder_half_length_m, cylinder_segments,
                                           cylinder_slices);
            append_mesh(m, make_wedge(wedge_center, wedge_half_width_m, wedge_height_m,
                                      wedge_half_length_m));
            return m;
        }
        return read_ply_mesh(mesh_kind);  // treat as a PLY path
    }
};

struct RunConfig {
    // [geometry]
    ImageGeometry geometry{0.015, 0.090, 50.0 * M_PI / 180.0, 64, 64};
    int lattice_px = 64;
    // [phantom]
    PhantomSetup phantom_setup;
    double reflect_gain = 1.0;
    double specular_exponent = 4.0;
    double shadow_attenuation = 0.15;
    double speckle_mean = 0.12;
    double speckle_shape = std::sqrt(2.0 / M_PI);
    double noise_floor = 0.0;
    std::uint64_t seed = 17;
    int n_sweeps = 8;
    int frames_per_sweep = 12;
    double sweep_angle_min_deg = -12.0;
    double sweep_angle_max_deg = 12.0;
    double carriage_min_m = 0.0;
    double carriage_max_m = 0.06;
    bool alternate_direction = true;
    // [features]
    LogGaborParams log_gabor;
    ConfidenceParams confidence;
    double sobel_threshold = 0.3;
    int blur_kernel_px = 6;
    // [labelgen]
    double label_sigma_px = 2.0;
    double max_incidence_deg = 80.0;
    int icp_max_iter = 50;
    double icp_tol = 1e-7;
    // [net]
    UNetSpec net{2, 6, 3, true, true, true};
    // [train]
    TrainConfig train;
    double train_fraction = 0.75;
    // [volume]
    double voxel_spacing_m = 0.0;  // 0 = lattice pixel size
    CompoundingMode compounding = CompoundingMode::max;
    double surface_threshold = 0.5;
    bool trilinear = false;

    ScanPlan scan_plan() const {
        ScanPlan plan;
        plan.n_sweeps = n_sweeps;
        plan.frames_per_sweep = frames_per_sweep;
        plan.alternate_direction = alternate_direction;
        plan.carriage_range_m = {carriage_min_m, carriage_max_m};
        plan.sweep_angles_rad.resize(n_sweeps);
        for (int i = 0; i < n_sweeps; ++i) {
            const double frac = n_sweeps > 1 ? static_cast<double>(i) / (n_sweeps - 1) : 0.0;
            plan.sweep_angles_rad[i] =
                (sweep_angle_min_deg + frac * (sweep_angle_max_deg - sweep_angle_min_deg)) *
                M_PI / 180.0;
        }
        return plan;
    }
    PhantomSpec phantom_spec() const {
        PhantomSpec spec;
        spec.mesh = phantom_setup.build();
        spec.reflect_gain = reflect_gain;
        spec.specular_exponent = specular_exponent;
        spec.shadow_attenuation = shadow_attenuation;
        spec.speckle_mean = speckle_mean;
        spec.speckle_shape = speckle_shape;
        spec.noise_floor = noise_floor;
        spec.seed = seed;
        return spec;
    }
    ScanKinematics kinematics() const { return ScanKinematics{}; }
};

inline RunConfig run_config_from_ini(const IniFile& ini) {
    static const std::set<std::string> known_sections = {
        "geometry", "phantom", "features", "labelgen", "net", "train", "volume", "eval"};
    for (const IniSection& s : ini.sections)
        if (!known_sections.count(s.name))
            throw DomainError("config: unknown section [" + s.name + "]");

    RunConfig c;
    {
        detail::SectionReader r(ini, "geometry");
        r.get("depth_min_m", c.geometry.depth_min_m);
        r.get("depth_max_m", c.geometry.depth_max_m);
        double fov_deg = c.geometry.fov_rad * 180.0 / M_PI;
        r.get("fov_deg", fov_deg);
        c.geometry.fov_rad = fov_deg * M_PI / 180.0;
        r.get("n_rays", c.geometry.n_rays);
        r.get("n_samples", c.geometry.n_samples);
        r.get("lattice_px", c.lattice_px);
        r.finish();
        c.geometry.validate();
    }
    {
        detail::SectionReader r(ini, "phantom");
        r.get("mesh", c.phantom_setup.mesh_kind);
        r.get("cylinder_center", c.phantom_setup.cylinder_center);
        r.get("cylinder_radius_m", c.phantom_setup.cylinder_radius_m);
        r.get("cylinder_half_length_m", c.phantom_setup.cylinder_half_length_m);
        r.get("cylinder_segments", c.phantom_setup.cylinder_segments);
        r.get("cylinder_slices", c.phantom_setup.cylinder_slices);
        r.get("wedge_center", c.phantom_setup.wedge_center);
        r.get("wedge_half_width_m", c.phantom_setup.wedge_half_width_m);
        r.get("wedge_height_m", c.phantom_setup.wedge_height_m);
        r.get("wedge_half_length_m", c.phantom_setup.wedge_half_length_m);
        r.get("plate_center", c.phantom_setup.plate_center);
        r.get("plate_half_x_m", c.phantom_setup.plate_half_x_m);
        r.get("plate_half_y_m", c.phantom_setup.plate_half_y_m);
        r.get("plate_tilt_deg", c.phantom_setup.plate_tilt_deg);
        r.get("plate_subdivisions", c.phantom_setup.plate_subdivisions);
        r.get("reflect_gain", c.reflect_gain);
        r.get("specular_exponent", c.specular_exponent);
        r.get("shadow_attenuation", c.shadow_attenuation);
        r.get("speckle_mean", c.speckle_mean);
        r.get("speckle_shape", c.speckle_shape);
        r.get("noise_floor", c.noise_floor);
        r.get("seed", c.seed);
        r.get("n_sweeps", c.n_sweeps);
        r.get("frames_per_sweep", c.frames_per_sweep);
        r.get("sweep_angle_min_deg", c.sweep_angle_min_deg);
        r.get("sweep_angle_max_deg", c.sweep_angle_max_deg);
        r.get("carriage_min_m", c.carriage_min_m);
        r.get("carriage_max_m", c.carriage_max_m);
        r.get("alternate_direction", c.alternate_direction);
        r.finish();
    }
    {
        detail::SectionReader r(ini, "features");
        r.get("n_scales", c.log_gabor.n_scales);
        r.get("n_orientations", c.log_gabor.n_orientations);
        r.get("min_wavelength_px", c.log_gabor.min_wavelength_px);
        r.get("scale_mult", c.log_gabor.scale_mult);
        r.get("sigma_onf", c.log_gabor.sigma_onf);
        r.get("d_theta_sigma", c.log_gabor.d_theta_sigma);
        r.get("noise_t", c.log_gabor.noise_t);
        r.get("epsilon", c.log_gabor.epsilon);
        r.get("alpha", c.confidence.alpha);
        r.get("beta", c.confidence.beta);
        r.get("gamma", c.confidence.gamma);
        r.get("solver_tol", c.confidence.solver_tol);
        r.get("max_iters", c.confidence.max_iters);
        r.get("sobel_threshold", c.sobel_threshold);
        r.get("blur_kernel_px", c.blur_kernel_px);
        r.finish();
        c.log_gabor.validate();
        c.confidence.validate();
    }
    {
        detail::SectionReader r(ini, "labelgen");
        r.get("label_sigma_px", c.label_sigma_px);
        r.get("max_incidence_deg", c.max_incidence_deg);
        r.get("icp_max_iter", c.icp_max_iter);
        r.get("icp_tol", c.icp_tol);
        r.finish();
    }
    {
        detail::SectionReader r(ini, "net");
        r.get("in_channels", c.net.in_channels);
        r.get("base_channels", c.net.base_channels);
        r.get("depth", c.net.depth);
        r.get("use_convgru", c.net.use_convgru);
        r.get("use_spatial_attention", c.net.use_spatial_attention);
        r.get("use_channel_attention", c.net.use_channel_attention);
        r.finish();
        c.net.validate();
    }
    {
        detail::SectionReader r(ini, "train");
        std::string loss = "w_dice";
        r.get("loss", loss);
        if (loss == "w_dice")
            c.train.loss = LossKind::w_dice;
        else if (loss == "w_ce")
            c.train.loss = LossKind::w_ce;
        else
            throw DomainError("config: unknown loss " + loss);
        r.get("learning_rate", c.train.learning_rate);
        r.get("epochs", c.train.epochs);
        std::string reset = "align_with_scan";
        int reset_k = 16;
        r.get("reset", reset);
        r.get("reset_k", reset_k);
        if (reset == "fixed_length")
            c.train.reset_policy = ResetPolicy::fixed(reset_k);
        else if (reset == "align_with_scan")
            c.train.reset_policy = ResetPolicy::align();
        else
            throw DomainError("config: unknown reset policy " + reset);
        r.get("seed", c.train.seed);
        r.get("ce_weight_lambda", c.train.ce_weight_lambda);
        r.get("train_fraction", c.train_fraction);
        r.finish();
        c.train.validate();
    }
    {
        detail::SectionReader r(ini, "volume");
        r.get("voxel_spacing_m", c.voxel_spacing_m);
        std::string mode = to_string(c.compounding);
        r.get("mode", mode);
        c.compounding = compounding_mode_from_string(mode);
        r.get("surface_threshold", c.surface_threshold);
        r.get("trilinear", c.trilinear);
        r.finish();
    }
    {
        detail::SectionReader r(ini, "eval");
        r.finish();  // reserved; rejects stray keys
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_ini(IniFile::parse(path));
}

// ---------------------------------------------------------------------------
// Experiment-grid files: one [experiment] section per row.
// ---------------------------------------------------------------------------
inline std::vector<ExperimentConfig> load_experiment_grid(const std::filesystem::path& path) {
    const IniFile ini = IniFile::parse(path);
    std::vector<ExperimentConfig> grid;
    for (const IniSection& s : ini.sections) {
        if (s.name != "experiment")
            throw DomainError("grid config: unexpected section [" + s.name + "]");
        ExperimentConfig cfg;
        for (const auto& [k, v] : s.entries) {
            if (k == "id") {
                cfg.experiment_id = v;
            } else if (k == "loss") {
                if (v == "w_dice")
                    cfg.loss = LossKind::w_dice;
                else if (v == "w_ce")
                    cfg.loss = LossKind::w_ce;
                else
                    throw DomainError("grid config: unknown loss " + v);
            } else if (k == "network") {
                if (v == "rnn")
                    cfg.network = NetworkKind::rnn;
                else if (v == "cnn")
                    cfg.network = NetworkKind::cnn;
                else
                    throw DomainError("grid config: unknown network " + v);
            } else if (k == "reset") {
                if (v == "fixed_length")
                    cfg.reset = ResetKind::fixed_length;
                else if (v == "align_with_scan")
                    cfg.reset = ResetKind::align_with_scan;
                else if (v == "none")
                    cfg.reset = ResetKind::none;
                else
                    throw DomainError("grid config: unknown reset " + v);
            } else if (k == "reset_k") {
                cfg.reset_k = std::stoi(v);
            } else if (k == "test") {
                if (v == "unseen_image")
                    cfg.test_split = TestSplit::unseen_image;
                else if (v == "unseen_anatomy")
                    cfg.test_split = TestSplit::unseen_anatomy;
                else
                    throw DomainError("grid config: unknown test split " + v);
            } else if (k == "channels") {
                if (v == "bmode_plus_feature")
                    cfg.input_channels = InputChannels::bmode_plus_feature;
                else if (v == "bmode_only")
                    cfg.input_channels = InputChannels::bmode_only;
                else
                    throw DomainError("grid config: unknown channels " + v);
            } else {
                throw DomainError("grid config: unknown key " + k);
            }
        }
        cfg.validate();
        grid.push_back(std::move(cfg));
    }
    if (grid.empty()) throw DomainError("grid config: no [experiment] sections in " + path.string());
    return grid;
}

}  // namespace spinesurf
