// Geometry, scan conversion, file I/O, config parsing, FFT, and basic tensor
// op semantics.
#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace spinesurf;
using namespace testsup;

// ---------------------------------------------------------------------------
// Sector geometry.
// ---------------------------------------------------------------------------
TEST_CASE("ray angles span the full field of view", "[geometry]") {
    const ImageGeometry g = small_geometry();
    CHECK(g.ray_angle(0) == Catch::Approx(-0.5 * g.fov_rad));
    CHECK(g.ray_angle(g.n_rays - 1) == Catch::Approx(0.5 * g.fov_rad));
    CHECK(g.sample_depth(0) == Catch::Approx(g.depth_min_m));
    CHECK(g.sample_depth(g.n_samples - 1) == Catch::Approx(g.depth_max_m));
    // Uniform spacing.
    CHECK(g.ray_angle(5) - g.ray_angle(4) == Catch::Approx(g.angle_step()));
    CHECK(g.sample_depth(9) - g.sample_depth(8) == Catch::Approx(g.depth_step()));
}

TEST_CASE("geometry validation rejects degenerate setups", "[geometry]") {
    ImageGeometry g = small_geometry();
    g.depth_min_m = g.depth_max_m;
    CHECK_THROWS_AS(g.validate(), DomainError);
    g = small_geometry();
    g.fov_rad = M_PI;
    CHECK_THROWS_AS(g.validate(), DomainError);
    g = small_geometry();
    g.n_rays = 1;
    CHECK_THROWS_AS(g.validate(), DomainError);
}

TEST_CASE("inside_sector matches radial and angular bounds", "[geometry]") {
    const ImageGeometry g = small_geometry();
    CHECK(g.inside_sector(g.depth_min_m, 0.0));
    CHECK(g.inside_sector(g.depth_max_m, 0.5 * g.fov_rad));
    CHECK_FALSE(g.inside_sector(g.depth_min_m - 1e-9, 0.0));
    CHECK_FALSE(g.inside_sector(g.depth_max_m + 1e-9, 0.0));
    CHECK_FALSE(g.inside_sector(0.05, 0.5 * g.fov_rad + 1e-9));
}

TEST_CASE("sector lattice bounds every polar bin with a one-pixel margin", "[geometry]") {
    const ImageGeometry g = small_geometry();
    const double px = 0.0012;
    const CartesianImage lat = make_sector_lattice(g, px);
    const double xmax = std::sin(0.5 * g.fov_rad) * g.depth_max_m;
    const double zmin = std::cos(0.5 * g.fov_rad) * g.depth_min_m;
    CHECK(lat.width_px == static_cast<int>(std::ceil(2.0 * xmax / px)) + 2);
    CHECK(lat.height_px == static_cast<int>(std::ceil((g.depth_max_m - zmin) / px)) + 2);
    // Every polar bin lands strictly inside the pixel bounding box.
    for (int s = 0; s < g.n_samples; ++s)
        for (int k = 0; k < g.n_rays; ++k) {
            const Vec2 p = bin_plane_position(g, k, s);
            const double fx = (p.x() - lat.origin_m.x()) / px;
            const double fy = (p.y() - lat.origin_m.y()) / px;
            REQUIRE(fx >= 0.0);
            REQUIRE(fy >= 0.0);
            REQUIRE(fx <= lat.width_px - 1.0);
            REQUIRE(fy <= lat.height_px - 1.0);
        }
}

TEST_CASE("constant polar image scan-converts to a constant masked sector", "[geometry]") {
    const ImageGeometry g = small_geometry();
    const PolarImage img(g, 0.7);
    CartesianImage cart = make_sector_lattice(g, 0.0015);
    polar_to_cartesian_into(img, cart);
    cart.validate();
    std::size_t inside = 0;
    for (std::size_t i = 0; i < cart.data.size(); ++i) {
        if (cart.mask[i]) {
            ++inside;
            CHECK(cart.data[i] == Catch::Approx(0.7).margin(1e-12));
        } else {
            REQUIRE(cart.data[i] == 0.0);
        }
    }
    CHECK(inside > cart.data.size() / 4);
}

TEST_CASE("polar -> cartesian -> polar roundtrip reproduces smooth fields", "[geometry]") {
    const ImageGeometry g = small_geometry(48, 48);
    PolarImage img(g);
    for (int s = 0; s < g.n_samples; ++s)
        for (int k = 0; k < g.n_rays; ++k)
            img.at(k, s) = 0.5 + 0.4 * std::sin(3.0 * g.ray_angle(k)) *
                                     std::cos(40.0 * g.sample_depth(s));
    // Fine pixels keep interpolation error small.
    CartesianImage cart = make_sector_lattice(g, 0.0004);
    polar_to_cartesian_into(img, cart);
    const PolarImage back = cartesian_to_polar(cart, g);
    double err = 0.0;
    for (int s = 1; s + 1 < g.n_samples; ++s)
        for (int k = 1; k + 1 < g.n_rays; ++k)
            err = std::max(err, std::abs(back.at(k, s) - img.at(k, s)));
    CHECK(err < 0.02);
}

TEST_CASE("cartesian_to_polar rejects lattices that truncate the sector", "[geometry]") {
    const ImageGeometry g = small_geometry();
    CartesianImage tiny(4, 4, 0.001, Vec2(-0.002, 0.0));
    for (auto& m : tiny.mask) m = 1;
    CHECK_THROWS_WITH(cartesian_to_polar(tiny, g),
                      Catch::Matchers::ContainsSubstring("sector extends beyond"));
}

TEST_CASE("square lattice hits the requested size exactly for the benchmark geometry",
          "[geometry]") {
    const ImageGeometry g = bench_geometry();
    const CartesianImage lat = make_square_lattice(g, 64);
    CHECK(lat.width_px == 64);
    CHECK(lat.height_px == 64);
    std::size_t inside = 0;
    for (auto m : lat.mask) inside += m;
    CHECK(inside > 64u * 64u / 4u);
}

TEST_CASE("square lattice never exceeds the requested size", "[geometry]") {
    for (int target : {16, 32, 48, 96}) {
        const CartesianImage lat = make_square_lattice(small_geometry(), target);
        CHECK(lat.width_px == target);
        CHECK(lat.height_px == target);
    }
}

TEST_CASE("poses compose, invert, and map pixels to world coordinates", "[geometry]") {
    ScanKinematics kin;
    const Pose p = pose_from_joints(kin, 0.3, 0.02);
    p.validate();
    const Pose q = p.compose(p.inverse());
    CHECK((q.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(q.translation.norm() < 1e-12);

    const Pose ident = pose_from_joints(kin, 0.0, 0.0);
    CHECK((ident.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(ident.translation.norm() < 1e-12);

    const ImageGeometry g = small_geometry();
    const Vec3 w = pixel_to_world(g, ident, 0, 0);
    const double a = g.ray_angle(0);
    CHECK(w.x() == Catch::Approx(std::sin(a) * g.depth_min_m));
    CHECK(w.y() == Catch::Approx(0.0).margin(1e-15));
    CHECK(w.z() == Catch::Approx(std::cos(a) * g.depth_min_m));

    // Carriage translation moves frames along the carriage axis only.
    const Pose moved = pose_from_joints(kin, 0.0, 0.05);
    CHECK((pixel_to_world(g, moved, 3, 7) - pixel_to_world(g, ident, 3, 7) - Vec3(0, 0.05, 0))
              .norm() < 1e-12);
}

TEST_CASE("masked-out cartesian pixels must carry zero", "[geometry]") {
    CartesianImage img(4, 4, 0.001, Vec2::Zero());
    img.at(1, 1) = 0.5;  // mask is 0 there
    CHECK_THROWS_AS(img.validate(), DomainError);
    img.mask_at(1, 1) = 1;
    CHECK_NOTHROW(img.validate());
}

// ---------------------------------------------------------------------------
// File I/O.
// ---------------------------------------------------------------------------
TEST_CASE("pfm roundtrip preserves float values and row order", "[io]") {
    const auto dir = tmp_dir("pfm");
    PfmImage img;
    img.width = 5;
    img.height = 3;
    img.data.resize(15);
    for (int i = 0; i < 15; ++i) img.data[i] = static_cast<float>(std::sin(i) * 1e-3);
    write_pfm(dir / "a.pfm", img);
    const PfmImage back = read_pfm(dir / "a.pfm");
    REQUIRE(back.width == 5);
    REQUIRE(back.height == 3);
    for (int i = 0; i < 15; ++i) REQUIRE(back.data[i] == img.data[i]);
}

TEST_CASE("polar and cartesian images convert to pfm and back", "[io]") {
    const ImageGeometry g = small_geometry(8, 6);
    const PolarImage img = random_polar(g, 3);
    const PfmImage pfm = to_pfm(img);
    REQUIRE(pfm.width == g.n_rays);
    REQUIRE(pfm.height == g.n_samples);
    for (int s = 0; s < g.n_samples; ++s)
        for (int k = 0; k < g.n_rays; ++k)
            REQUIRE(pfm.data[static_cast<std::size_t>(s) * g.n_rays + k] ==
                    static_cast<float>(img.at(k, s)));
}

TEST_CASE("meta files roundtrip doubles at full precision", "[io]") {
    const auto dir = tmp_dir("meta");
    MetaMap m;
    m["a"] = format_double(1.0 / 3.0);
    m["b"] = format_double(-2.5e-17);
    m["name"] = "phantom";
    write_meta(dir / "m.meta", m);
    const MetaMap back = read_meta(dir / "m.meta");
    CHECK(meta_double(back, "a") == 1.0 / 3.0);
    CHECK(meta_double(back, "b") == -2.5e-17);
    CHECK(back.at("name") == "phantom");
    CHECK_THROWS_AS(meta_double(back, "missing"), DomainError);
}

TEST_CASE("geometry meta roundtrip", "[io]") {
    const ImageGeometry g = bench_geometry();
    const MetaMap m = geometry_meta(g);
    const ImageGeometry back = geometry_from_meta(m);
    CHECK(back == g);
}

TEST_CASE("frames csv roundtrip preserves ids, joints, and poses", "[io]") {
    const auto dir = tmp_dir("csv");
    ScanKinematics kin;
    ScanPlan plan;
    plan.n_sweeps = 3;
    plan.frames_per_sweep = 4;
    plan.sweep_angles_rad = {-0.1, 0.0, 0.1};
    plan.carriage_range_m = {0.0, 0.03};
    plan.alternate_direction = true;
    const FrameSequence seq = plan_frames(kin, plan);
    write_frames_csv(dir / "frames.csv", seq);
    const std::vector<FrameRecord> back = read_frames_csv(dir / "frames.csv", &kin);
    REQUIRE(back.size() == seq.frames.size());
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        CHECK(back[i].frame_id == seq.frames[i].frame_id);
        CHECK(back[i].sweep_id == seq.frames[i].sweep_id);
        CHECK(back[i].sweep_direction == seq.frames[i].sweep_direction);
        CHECK((back[i].pose.rotation - seq.frames[i].pose.rotation).cwiseAbs().maxCoeff() < 1e-15);
        CHECK((back[i].pose.translation - seq.frames[i].pose.translation).norm() < 1e-15);
    }
    // A tampered pose must trip the joint-consistency check.
    std::string text;
    {
        std::ifstream f(dir / "frames.csv");
        std::getline(f, text);
        std::string row;
        std::getline(f, row);
        const auto pos = row.rfind(',');
        row = row.substr(0, pos + 1) + "0.5";
        text += "\n" + row + "\n";
    }
    std::ofstream(dir / "tampered.csv") << text;
    CHECK_THROWS_WITH(read_frames_csv(dir / "tampered.csv", &kin),
                      Catch::Matchers::ContainsSubstring("inconsistent"));
}

TEST_CASE("ply mesh and point cloud roundtrip", "[io]") {
    const auto dir = tmp_dir("ply");
    const TriangleMesh mesh = make_wedge(Vec3(0.01, 0.0, 0.05), 0.01, 0.005, 0.02);
    write_ply_mesh(dir / "m.ply", mesh);
    const TriangleMesh back = read_ply_mesh(dir / "m.ply");
    REQUIRE(back.vertices.size() == mesh.vertices.size());
    REQUIRE(back.triangles.size() == mesh.triangles.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        CHECK((back.vertices[i] - mesh.vertices[i]).norm() < 1e-15);

    const PointCloud cloud = sample_mesh_surface(mesh, 50, 7);
    write_ply_points(dir / "c.ply", cloud);
    const PointCloud cback = read_ply_points(dir / "c.ply");
    REQUIRE(cback.points.size() == cloud.points.size());
    for (std::size_t i = 0; i < cloud.points.size(); ++i)
        CHECK((cback.points[i] - cloud.points[i]).norm() < 1e-15);
}

TEST_CASE("pgm writes a valid 8-bit P5 file", "[io]") {
    const auto dir = tmp_dir("pgm");
    std::vector<std::uint8_t> px = {0, 64, 128, 255, 1, 2};
    write_pgm(dir / "img.pgm", 3, 2, px);
    std::ifstream f(dir / "img.pgm", std::ios::binary);
    std::string magic, dims;
    std::getline(f, magic);
    CHECK(magic == "P5");
    std::vector<char> rest((std::istreambuf_iterator<char>(f)), {});
    const std::string tail(rest.end() - 6, rest.end());
    for (int i = 0; i < 6; ++i) CHECK(static_cast<std::uint8_t>(tail[i]) == px[i]);
}

TEST_CASE("format_double roundtrips through parsing exactly", "[io]") {
    for (double v : {1.0 / 3.0, 0.1, -7.25e-13, 3.14159265358979323846, 1e300, 0.0})
        CHECK(std::stod(format_double(v)) == v);
}

// ---------------------------------------------------------------------------
// Config parsing.
// ---------------------------------------------------------------------------
TEST_CASE("ini parser handles sections, comments, and whitespace", "[config]") {
    const auto dir = tmp_dir("ini");
    std::ofstream(dir / "a.cfg") << "# comment\n[geometry]\nn_rays = 48 ; trailing\n\n"
                                    "[train]\nepochs=7\nloss = w_ce\n";
    const RunConfig c = load_run_config(dir / "a.cfg");
    CHECK(c.geometry.n_rays == 48);
    CHECK(c.train.epochs == 7);
    CHECK(c.train.loss == LossKind::w_ce);
    // Untouched keys keep their defaults.
    CHECK(c.geometry.n_samples == 64);
}

TEST_CASE("config rejects unknown sections and keys", "[config]") {
    const auto dir = tmp_dir("inibad");
    std::ofstream(dir / "bad1.cfg") << "[nonsense]\nx = 1\n";
    CHECK_THROWS_WITH(load_run_config(dir / "bad1.cfg"),
                      Catch::Matchers::ContainsSubstring("unknown section"));
    std::ofstream(dir / "bad2.cfg") << "[geometry]\nn_raysss = 1\n";
    CHECK_THROWS_WITH(load_run_config(dir / "bad2.cfg"),
                      Catch::Matchers::ContainsSubstring("unknown key"));
    std::ofstream(dir / "bad3.cfg") << "[train]\nreset = sometimes\n";
    CHECK_THROWS_AS(load_run_config(dir / "bad3.cfg"), DomainError);
}

TEST_CASE("config parses vectors, bools, and reset policies", "[config]") {
    const auto dir = tmp_dir("inivec");
    std::ofstream(dir / "a.cfg") << "[phantom]\ncylinder_center = 0.01 0.02 0.03\n"
                                    "alternate_direction = false\n"
                                    "[train]\nreset = fixed_length\nreset_k = 5\n"
                                    "[volume]\ntrilinear = true\nmode = mean\n";
    const RunConfig c = load_run_config(dir / "a.cfg");
    CHECK((c.phantom_setup.cylinder_center - Vec3(0.01, 0.02, 0.03)).norm() == 0.0);
    CHECK_FALSE(c.alternate_direction);
    CHECK(c.train.reset_policy.kind == ResetPolicy::Kind::fixed_length);
    CHECK(c.train.reset_policy.k == 5);
    CHECK(c.trilinear);
    CHECK(c.compounding == CompoundingMode::mean);
}

TEST_CASE("experiment grid parses rows and enforces the reset invariant", "[config]") {
    const auto dir = tmp_dir("grid");
    std::ofstream(dir / "g.cfg") << "[experiment]\nid = a\nloss = w_dice\nnetwork = rnn\n"
                                    "reset = fixed_length\nreset_k = 8\ntest = unseen_image\n"
                                    "channels = bmode_plus_feature\n"
                                    "[experiment]\nid = b\nloss = w_ce\nnetwork = cnn\n"
                                    "reset = none\ntest = unseen_anatomy\nchannels = bmode_only\n";
    const auto grid = load_experiment_grid(dir / "g.cfg");
    REQUIRE(grid.size() == 2);
    CHECK(grid[0].experiment_id == "a");
    CHECK(grid[0].reset_k == 8);
    CHECK(grid[1].network == NetworkKind::cnn);
    CHECK(grid[1].test_split == TestSplit::unseen_anatomy);

    std::ofstream(dir / "bad.cfg") << "[experiment]\nid = x\nnetwork = cnn\nreset = fixed_length\n";
    CHECK_THROWS_AS(load_experiment_grid(dir / "bad.cfg"), DomainError);
    std::ofstream(dir / "empty.cfg") << "# nothing\n";
    CHECK_THROWS_AS(load_experiment_grid(dir / "empty.cfg"), DomainError);
}

TEST_CASE("bundled configs parse", "[config]") {
    const char* cfg_dir = std::getenv("SPINESURF_CONFIG_DIR");
    REQUIRE(cfg_dir != nullptr);
    const std::filesystem::path d(cfg_dir);
    CHECK_NOTHROW(load_run_config(d / "demo.cfg"));
    CHECK_NOTHROW(load_run_config(d / "small.cfg"));
    CHECK(load_experiment_grid(d / "ablation_grid.cfg").size() == 4);
    CHECK(load_experiment_grid(d / "small_grid.cfg").size() == 2);
}

// ---------------------------------------------------------------------------
// FFT against a direct DFT oracle.
// ---------------------------------------------------------------------------
namespace {
std::vector<Complex> dft_oracle(const std::vector<Complex>& a, int sign) {
    const int n = static_cast<int>(a.size());
    std::vector<Complex> out(n);
    for (int k = 0; k < n; ++k) {
        Complex acc = 0.0;
        for (int t = 0; t < n; ++t)
            acc += a[t] * std::polar(1.0, sign * 2.0 * M_PI * k * t / n);
        out[k] = acc;
    }
    return out;
}
}  // namespace

TEST_CASE("fft matches the direct dft on random inputs", "[fft]") {
    for (int n : {2, 8, 16, 64}) {
        Rng rng(100 + n);
        std::vector<Complex> a(n);
        for (auto& z : a) z = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
        std::vector<Complex> fast = a;
        fft(fast);
        const std::vector<Complex> slow = dft_oracle(a, -1);
        for (int i = 0; i < n; ++i) REQUIRE(std::abs(fast[i] - slow[i]) < 1e-10);
    }
}

TEST_CASE("ifft inverts fft including normalization", "[fft]") {
    Rng rng(42);
    std::vector<Complex> a(32);
    for (auto& z : a) z = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
    std::vector<Complex> b = a;
    fft(b);
    ifft(b);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("fft2 matches a row-column dft oracle", "[fft]") {
    const int h = 8, w = 16;
    Rng rng(7);
    std::vector<Complex> a(static_cast<std::size_t>(h) * w);
    for (auto& z : a) z = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));

    // Oracle: 1-D DFT over rows then columns.
    std::vector<Complex> oracle = a;
    for (int r = 0; r < h; ++r) {
        std::vector<Complex> row(oracle.begin() + r * w, oracle.begin() + (r + 1) * w);
        row = dft_oracle(row, -1);
        std::copy(row.begin(), row.end(), oracle.begin() + r * w);
    }
    for (int c = 0; c < w; ++c) {
        std::vector<Complex> col(h);
        for (int r = 0; r < h; ++r) col[r] = oracle[static_cast<std::size_t>(r) * w + c];
        col = dft_oracle(col, -1);
        for (int r = 0; r < h; ++r) oracle[static_cast<std::size_t>(r) * w + c] = col[r];
    }

    std::vector<Complex> fast = a;
    fft2(fast, h, w);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(fast[i] - oracle[i]) < 1e-10);

    ifft2(fast, h, w);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(fast[i] - a[i]) < 1e-12);
}

TEST_CASE("fft rejects non-power-of-two lengths", "[fft]") {
    std::vector<Complex> a(12);
    CHECK_THROWS_AS(fft(a), DomainError);
}

// ---------------------------------------------------------------------------
// Tensor op semantics (forward only; gradients are covered separately).
// ---------------------------------------------------------------------------
TEST_CASE("conv2d matches a direct convolution oracle", "[tensor]") {
    Rng rng(11);
    Tensor in(2, 5, 6);
    for (auto& v : in.v) v = rng.uniform(-1, 1);
    ConvWeight w(3, 2, 3);
    for (auto& v : w.v) v = rng.uniform(-1, 1);
    std::vector<double> bias = {0.1, -0.2, 0.3};
    const Tensor out = conv2d(in, w, bias);
    REQUIRE(out.c == 3);
    REQUIRE(out.h == 5);
    REQUIRE(out.w == 6);
    for (int o = 0; o < 3; ++o)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 6; ++x) {
                double acc = bias[o];
                for (int i = 0; i < 2; ++i)
                    for (int ky = -1; ky <= 1; ++ky)
                        for (int kx = -1; kx <= 1; ++kx) {
                            const int yy = y + ky, xx = x + kx;
                            if (yy < 0 || yy >= 5 || xx < 0 || xx >= 6) continue;
                            acc += w.at(o, i, ky + 1, kx + 1) * in.at(i, yy, xx);
                        }
                REQUIRE(out.at(o, y, x) == Catch::Approx(acc).margin(1e-12));
            }
}

TEST_CASE("instance norm produces zero-mean unit-variance channels", "[tensor]") {
    Rng rng(13);
    Tensor in(3, 8, 8);
    for (auto& v : in.v) v = rng.uniform(-2, 5);
    std::vector<double> gamma = {1.0, 1.0, 1.0}, beta = {0.0, 0.0, 0.0};
    const Tensor out = instance_norm(in, gamma, beta, nullptr);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < 64; ++i) mean += out.v[c * 64 + i];
        mean /= 64.0;
        for (int i = 0; i < 64; ++i) var += (out.v[c * 64 + i] - mean) * (out.v[c * 64 + i] - mean);
        var /= 64.0;
        CHECK(mean == Catch::Approx(0.0).margin(1e-12));
        CHECK(var == Catch::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("maxpool2 picks the window maximum and upsample repeats pixels", "[tensor]") {
    Tensor in(1, 4, 4);
    for (int i = 0; i < 16; ++i) in.v[i] = i;
    const Tensor pooled = maxpool2(in, nullptr);
    REQUIRE(pooled.h == 2);
    REQUIRE(pooled.w == 2);
    CHECK(pooled.at(0, 0, 0) == 5);
    CHECK(pooled.at(0, 0, 1) == 7);
    CHECK(pooled.at(0, 1, 0) == 13);
    CHECK(pooled.at(0, 1, 1) == 15);

    const Tensor up = upsample_nearest2(pooled);
    REQUIRE(up.h == 4);
    CHECK(up.at(0, 0, 0) == 5);
    CHECK(up.at(0, 0, 1) == 5);
    CHECK(up.at(0, 1, 0) == 5);
    CHECK(up.at(0, 3, 3) == 15);
}

TEST_CASE("concat stacks channels in order", "[tensor]") {
    Tensor a(1, 2, 2), b(2, 2, 2);
    for (int i = 0; i < 4; ++i) a.v[i] = i;
    for (int i = 0; i < 8; ++i) b.v[i] = 10 + i;
    const Tensor cat = concat_channels(a, b);
    REQUIRE(cat.c == 3);
    CHECK(cat.at(0, 1, 1) == 3);
    CHECK(cat.at(1, 0, 0) == 10);
    CHECK(cat.at(2, 1, 1) == 17);
}

TEST_CASE("rng is deterministic per seed", "[common]") {
    Rng a(99), b(99), c(100);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform(), y = b.uniform(), z = c.uniform();
        all_equal = all_equal && x == y;
        any_diff = any_diff || x != z;
    }
    CHECK(all_equal);
    CHECK(any_diff);
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}
