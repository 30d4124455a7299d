// Hand-crafted feature stack: log-Gabor bank, phase symmetry, random-walk
// confidence map, shadow boundary, and aggregation.
#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace spinesurf;
using namespace testsup;

TEST_CASE("log-gabor bank has zero dc response and nonnegative filters", "[features]") {
    LogGaborParams p;
    const LogGaborBank bank = log_gabor_bank(32, 32, p);
    REQUIRE(bank.filters.size() ==
            static_cast<std::size_t>(p.n_scales) * p.n_orientations);
    for (const auto& f : bank.filters) {
        REQUIRE(f.size() == 32u * 32u);
        CHECK(f[0] == 0.0);  // DC bin
        for (double v : f) REQUIRE(v >= 0.0);
    }
    // Filters are not identically zero.
    for (const auto& f : bank.filters) {
        double sum = 0.0;
        for (double v : f) sum += v;
        CHECK(sum > 0.0);
    }
}

TEST_CASE("phase symmetry peaks on a gaussian ridge", "[features]") {
    const ImageGeometry g = small_geometry();
    LogGaborParams p;
    int good = 0, total = 0;
    Rng rng(2024);
    for (int trial = 0; trial < 10; ++trial) {
        const double row = 8.0 + 16.0 * rng.uniform();
        const double amp = 0.3 + 2.7 * rng.uniform();
        const PolarImage img = ridge_polar(g, row, amp);
        const PolarImage ps = phase_symmetry(img, p);
        REQUIRE(ps.data.size() == img.data.size());
        for (double v : ps.data) REQUIRE((v >= 0.0 && v <= 1.0));
        for (int k = 0; k < g.n_rays; ++k) {
            ++total;
            if (std::abs(column_argmax(ps, k) - row) <= 1.5) ++good;
        }
    }
    CHECK(static_cast<double>(good) / total >= 0.95);
}

TEST_CASE("phase symmetry is contrast invariant without noise gating", "[features]") {
    const ImageGeometry g = small_geometry();
    LogGaborParams p;
    p.noise_t = 0.0;
    const PolarImage img = ridge_polar(g, 14.0, 1.0);
    const PolarImage base = phase_symmetry(img, p);
    for (double scale : {0.5, 2.0, 10.0}) {
        PolarImage scaled = img;
        for (double& v : scaled.data) v *= scale;
        const PolarImage ps = phase_symmetry(scaled, p);
        CHECK(max_abs_diff(ps.data, base.data) < 1e-6);
    }
}

TEST_CASE("iterative confidence map matches the dense direct solve", "[features]") {
    ConfidenceParams p;
    Rng rng(55);
    for (int trial = 0; trial < 10; ++trial) {
        const int rays = 4 + rng.uniform_int(13);
        const int samples = 4 + rng.uniform_int(13);
        const PolarImage img = random_polar(small_geometry(rays, samples), 900 + trial);
        const PolarImage dense = confidence_map_dense(img, p);
        ConfidenceSolveInfo info;
        const PolarImage iter = confidence_map(img, p, &info);
        CHECK(max_abs_diff(dense.data, iter.data) < 1e-6);
        CHECK(info.iterations > 0);
    }
}

TEST_CASE("confidence map satisfies boundary conditions and the maximum principle",
          "[features]") {
    ConfidenceParams p;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const ImageGeometry g = small_geometry(12, 14);
        const PolarImage img = random_polar(g, seed);
        const PolarImage conf = confidence_map(img, p, nullptr);
        for (int k = 0; k < g.n_rays; ++k) {
            CHECK(conf.at(k, 0) == 1.0);
            CHECK(conf.at(k, g.n_samples - 1) == 0.0);
        }
        const auto sys = detail::confidence_weights(img, p);
        for (int s = 1; s + 1 < g.n_samples; ++s)
            for (int k = 0; k < g.n_rays; ++k) {
                double lo = 1e300, hi = -1e300;
                detail::for_each_neighbor(sys, s, k, [&](int nr, int nc, double) {
                    lo = std::min(lo, conf.at(nc, nr));
                    hi = std::max(hi, conf.at(nc, nr));
                });
                const double v = conf.at(k, s);
                if (hi - lo <= 1e-9) continue;  // locally constant
                REQUIRE(v > lo - 1e-6);
                REQUIRE(v < hi + 1e-6);
            }
    }
}

TEST_CASE("confidence map drops across a strong horizontal reflector", "[features]") {
    const ImageGeometry g = small_geometry(16, 24);
    PolarImage img(g, 0.05);
    for (int k = 0; k < g.n_rays; ++k) img.at(k, 12) = 1.0;  // bright reflector row
    ConfidenceParams p;
    const PolarImage conf = confidence_map(img, p, nullptr);
    double above = 0.0, below = 0.0;
    for (int k = 0; k < g.n_rays; ++k) {
        above += conf.at(k, 8);
        below += conf.at(k, 16);
    }
    CHECK(above / g.n_rays > below / g.n_rays + 0.2);
}

TEST_CASE("confidence map rejects negative intensities", "[features]") {
    PolarImage img(small_geometry(6, 6), 0.5);
    img.at(2, 2) = -0.1;
    CHECK_THROWS_AS(confidence_map(img, ConfidenceParams{}, nullptr), DomainError);
}

TEST_CASE("shadow boundary highlights the confidence drop and stays in range", "[features]") {
    const ImageGeometry g = small_geometry(24, 32);
    PolarImage conf(g);
    for (int s = 0; s < g.n_samples; ++s)
        for (int k = 0; k < g.n_rays; ++k) conf.at(k, s) = s < 16 ? 1.0 : 0.0;
    const PolarImage shadow = shadow_boundary(conf, 0.3, 4);
    for (double v : shadow.data) REQUIRE((v >= 0.0 && v <= 1.0));
    // Mass concentrates around the drop row; none far away.
    double near = 0.0, far = 0.0;
    for (int k = 0; k < g.n_rays; ++k) {
        for (int s = 12; s <= 20; ++s) near += shadow.at(k, s);
        for (int s = 0; s <= 6; ++s) far += shadow.at(k, s);
    }
    CHECK(near > 0.0);
    CHECK(far == Catch::Approx(0.0).margin(1e-12));

    // A constant confidence map has no boundary at all.
    const PolarImage flat = shadow_boundary(PolarImage(g, 0.8), 0.3, 4);
    for (double v : flat.data) REQUIRE(v == 0.0);
}

TEST_CASE("shadow boundary validates its inputs", "[features]") {
    const PolarImage conf(small_geometry(8, 8), 0.5);
    CHECK_THROWS_AS(shadow_boundary(conf, 0.0, 4), DomainError);
    CHECK_THROWS_AS(shadow_boundary(conf, 1.0, 4), DomainError);
    CHECK_THROWS_AS(shadow_boundary(conf, 0.3, 0), DomainError);
    PolarImage bad = conf;
    bad.at(1, 1) = 1.5;
    CHECK_THROWS_AS(shadow_boundary(bad, 0.3, 4), DomainError);
}

TEST_CASE("aggregation is the elementwise product of its inputs", "[features]") {
    const ImageGeometry g = small_geometry(6, 5);
    const PolarImage a = random_polar(g, 10);
    const PolarImage b = random_polar(g, 11);
    const PolarImage out = aggregate(a, b);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        REQUIRE(out.data[i] == a.data[i] * b.data[i]);
    PolarImage wrong(small_geometry(5, 5));
    CHECK_THROWS_AS(aggregate(a, wrong), DomainError);
}

TEST_CASE("feature pipeline produces a masked cartesian map in range", "[features]") {
    const ImageGeometry g = small_geometry();
    const PolarImage ridge = ridge_polar(g, 14.0, 1.0);
    CartesianImage bmode = make_square_lattice(g, 32);
    polar_to_cartesian_into(ridge, bmode);
    LogGaborParams lg;
    ConfidenceParams cp;
    const CartesianImage feat = feature_pipeline(bmode, g, lg, cp, 0.3, 4, nullptr);
    feat.validate();
    REQUIRE(feat.width_px == bmode.width_px);
    REQUIRE(feat.height_px == bmode.height_px);
    for (std::size_t i = 0; i < feat.data.size(); ++i) {
        REQUIRE((feat.data[i] >= 0.0 && feat.data[i] <= 1.0));
        if (!feat.mask[i]) REQUIRE(feat.data[i] == 0.0);
    }
    // Determinism: identical input gives identical output.
    const CartesianImage again = feature_pipeline(bmode, g, lg, cp, 0.3, 4, nullptr);
    CHECK(max_abs_diff(feat.data, again.data) == 0.0);
}

TEST_CASE("median helper matches a sorted oracle", "[features]") {
    Rng rng(77);
    for (int n : {1, 2, 5, 8, 33}) {
        std::vector<double> v(n);
        for (double& x : v) x = rng.uniform(-5, 5);
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        const double expect =
            n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        CHECK(detail::median_of(v) == Catch::Approx(expect).margin(1e-15));
    }
}
