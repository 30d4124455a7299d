// From-scratch network: finite-difference gradient checks for every layer,
// loss algebra, training behavior, and parameter serialization.
#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "test_support.hpp"

using namespace spinesurf;
using namespace testsup;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

void fill_random(std::vector<double>& v, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (double& x : v) x = rng.uniform(lo, hi);
}

/// Random values bounded away from zero (for ReLU-adjacent inputs).
void fill_random_away_from_zero(std::vector<double>& v, Rng& rng, double min_abs = 0.05) {
    for (double& x : v) {
        x = rng.uniform(min_abs, 1.0);
        if (rng.uniform() < 0.5) x = -x;
    }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Central finite differences over every entry of x against analytic grads.
template <class ScalarFn>
void fd_check(std::vector<double>& x, const std::vector<double>& analytic, ScalarFn f,
              double tol = kTol) {
    REQUIRE(x.size() == analytic.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + kEps;
        const double up = f();
        x[i] = keep - kEps;
        const double dn = f();
        x[i] = keep;
        const double fd = (up - dn) / (2.0 * kEps);
        INFO("index " << i << " fd " << fd << " analytic " << analytic[i]);
        REQUIRE(rel_err(fd, analytic[i]) < tol);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Layer-by-layer gradient checks.
// ---------------------------------------------------------------------------
TEST_CASE("conv2d gradients match finite differences", "[grad]") {
    Rng rng(1);
    Tensor in(2, 5, 6);
    fill_random(in.v, rng);
    ConvWeight w(3, 2, 3);
    fill_random(w.v, rng);
    std::vector<double> bias(3);
    fill_random(bias, rng);
    Tensor dir(3, 5, 6);
    fill_random(dir.v, rng);

    const auto loss = [&]() { return dot(conv2d(in, w, bias).v, dir.v); };
    Tensor g_in = Tensor::zeros_like(in);
    ConvWeight g_w(3, 2, 3);
    std::vector<double> g_b(3, 0.0);
    conv2d_backward(in, w, dir, &g_in, g_w, g_b);

    fd_check(in.v, g_in.v, loss);
    fd_check(w.v, g_w.v, loss);
    fd_check(bias, g_b, loss);
}

TEST_CASE("instance norm gradients match finite differences", "[grad]") {
    Rng rng(2);
    Tensor in(2, 4, 5);
    fill_random(in.v, rng);
    std::vector<double> gamma(2), beta(2);
    fill_random(gamma, rng, 0.5, 1.5);
    fill_random(beta, rng, -0.4, 0.4);
    Tensor dir(2, 4, 5);
    fill_random(dir.v, rng);

    const auto loss = [&]() { return dot(instance_norm(in, gamma, beta, nullptr).v, dir.v); };
    InstanceNormCache cache;
    instance_norm(in, gamma, beta, &cache);
    Tensor g_in = Tensor::zeros_like(in);
    std::vector<double> g_gamma(2, 0.0), g_beta(2, 0.0);
    instance_norm_backward(cache, gamma, dir, g_in, g_gamma, g_beta);

    fd_check(in.v, g_in.v, loss);
    fd_check(gamma, g_gamma, loss);
    fd_check(beta, g_beta, loss);
}

TEST_CASE("activation gradients match finite differences", "[grad]") {
    Rng rng(3);
    Tensor in(2, 4, 4);
    fill_random_away_from_zero(in.v, rng);
    Tensor dir(2, 4, 4);
    fill_random(dir.v, rng);

    SECTION("relu") {
        const auto loss = [&]() { return dot(relu(in).v, dir.v); };
        const Tensor act = relu(in);
        Tensor g = Tensor::zeros_like(in);
        relu_backward(act, dir, g);
        fd_check(in.v, g.v, loss);
    }
    SECTION("sigmoid") {
        const auto loss = [&]() { return dot(sigmoid(in).v, dir.v); };
        const Tensor act = sigmoid(in);
        Tensor g = Tensor::zeros_like(in);
        sigmoid_backward(act, dir, g);
        fd_check(in.v, g.v, loss);
    }
    SECTION("tanh") {
        const auto loss = [&]() { return dot(tanh_map(in).v, dir.v); };
        const Tensor act = tanh_map(in);
        Tensor g = Tensor::zeros_like(in);
        tanh_backward(act, dir, g);
        fd_check(in.v, g.v, loss);
    }
}

TEST_CASE("maxpool and upsample gradients match finite differences", "[grad]") {
    Rng rng(4);
    Tensor in(2, 6, 6);
    // Spread values so +-eps never flips a window winner.
    for (std::size_t i = 0; i < in.v.size(); ++i)
        in.v[i] = rng.uniform(-1, 1) + 0.001 * static_cast<double>(i);

    SECTION("maxpool2") {
        Tensor dir(2, 3, 3);
        fill_random(dir.v, rng);
        const auto loss = [&]() { return dot(maxpool2(in, nullptr).v, dir.v); };
        MaxPoolCache cache;
        maxpool2(in, &cache);
        Tensor g = Tensor::zeros_like(in);
        maxpool2_backward(cache, dir, g);
        fd_check(in.v, g.v, loss);
    }
    SECTION("upsample_nearest2") {
        Tensor small(2, 3, 3);
        fill_random(small.v, rng);
        Tensor dir(2, 6, 6);
        fill_random(dir.v, rng);
        const auto loss = [&]() { return dot(upsample_nearest2(small).v, dir.v); };
        Tensor g = Tensor::zeros_like(small);
        upsample_nearest2_backward(dir, g);
        fd_check(small.v, g.v, loss);
    }
}

TEST_CASE("double-conv block gradients match finite differences", "[grad]") {
    Rng rng(5);
    BlockParams bp = detail::alloc_block(2, 3);
    fill_random(bp.c1.w.v, rng, -0.5, 0.5);
    fill_random(bp.c1.b, rng, -0.2, 0.2);
    fill_random(bp.c2.w.v, rng, -0.5, 0.5);
    fill_random(bp.c2.b, rng, -0.2, 0.2);
    fill_random(bp.n1.gamma, rng, 0.6, 1.4);
    fill_random(bp.n1.beta, rng, -0.3, 0.3);
    fill_random(bp.n2.gamma, rng, 0.6, 1.4);
    fill_random(bp.n2.beta, rng, -0.3, 0.3);
    Tensor in(2, 6, 6);
    fill_random(in.v, rng);
    Tensor dir(3, 6, 6);
    fill_random(dir.v, rng);

    const auto loss = [&]() { return dot(run_block(bp, in, nullptr).v, dir.v); };
    BlockCache cache;
    run_block(bp, in, &cache);
    BlockParams gp = detail::alloc_block(2, 3);
    gp.n1.gamma.assign(3, 0.0);
    gp.n2.gamma.assign(3, 0.0);
    Tensor g_in = Tensor::zeros_like(in);
    block_backward(bp, cache, dir, gp, g_in);

    fd_check(in.v, g_in.v, loss);
    fd_check(bp.c1.w.v, gp.c1.w.v, loss);
    fd_check(bp.c1.b, gp.c1.b, loss);
    fd_check(bp.n1.gamma, gp.n1.gamma, loss);
    fd_check(bp.n1.beta, gp.n1.beta, loss);
    fd_check(bp.c2.w.v, gp.c2.w.v, loss);
    fd_check(bp.c2.b, gp.c2.b, loss);
    fd_check(bp.n2.gamma, gp.n2.gamma, loss);
    fd_check(bp.n2.beta, gp.n2.beta, loss);
}

TEST_CASE("channel attention gradients match finite differences", "[grad]") {
    Rng rng(6);
    SeParams sp;
    sp.in = 3;
    sp.hidden = 3;
    sp.w1.assign(9, 0.0);
    sp.b1.assign(3, 0.0);
    sp.w2.assign(9, 0.0);
    sp.b2.assign(3, 0.0);
    fill_random(sp.w1, rng, -0.7, 0.7);
    fill_random(sp.b1, rng, 0.1, 0.4);  // keep fc1 relu inputs away from zero
    fill_random(sp.w2, rng, -0.7, 0.7);
    fill_random(sp.b2, rng, -0.3, 0.3);
    Tensor in(3, 4, 4);
    fill_random(in.v, rng, 0.1, 1.0);
    Tensor dir(3, 4, 4);
    fill_random(dir.v, rng);

    const auto loss = [&]() { return dot(se_forward(sp, in, nullptr).v, dir.v); };
    SeCache cache;
    se_forward(sp, in, &cache);
    SeParams gp = sp;
    gp.w1.assign(9, 0.0);
    gp.b1.assign(3, 0.0);
    gp.w2.assign(9, 0.0);
    gp.b2.assign(3, 0.0);
    Tensor g_in = Tensor::zeros_like(in);
    se_backward(sp, cache, dir, gp, g_in);

    fd_check(in.v, g_in.v, loss);
    fd_check(sp.w1, gp.w1, loss);
    fd_check(sp.b1, gp.b1, loss);
    fd_check(sp.w2, gp.w2, loss);
    fd_check(sp.b2, gp.b2, loss);
}

TEST_CASE("attention gate gradients match finite differences", "[grad]") {
    Rng rng(7);
    AttnParams ap;
    ap.wg = detail::alloc_conv(2, 3, 1);
    ap.wx = detail::alloc_conv(2, 2, 1);
    ap.psi = detail::alloc_conv(1, 2, 1);
    fill_random(ap.wg.w.v, rng, -0.7, 0.7);
    fill_random(ap.wg.b, rng, 0.1, 0.3);
    fill_random(ap.wx.w.v, rng, -0.7, 0.7);
    fill_random(ap.wx.b, rng, 0.1, 0.3);
    fill_random(ap.psi.w.v, rng, -0.7, 0.7);
    fill_random(ap.psi.b, rng, -0.2, 0.2);
    Tensor up(3, 4, 4), skip(2, 4, 4), dir(2, 4, 4);
    fill_random(up.v, rng);
    fill_random(skip.v, rng);
    fill_random(dir.v, rng);

    const auto loss = [&]() { return dot(attn_forward(ap, up, skip, nullptr).v, dir.v); };
    AttnCache cache;
    attn_forward(ap, up, skip, &cache);
    AttnParams gp;
    gp.wg = detail::alloc_conv(2, 3, 1);
    gp.wx = detail::alloc_conv(2, 2, 1);
    gp.psi = detail::alloc_conv(1, 2, 1);
    Tensor g_up = Tensor::zeros_like(up), g_skip = Tensor::zeros_like(skip);
    attn_backward(ap, cache, up, skip, dir, gp, g_up, g_skip);

    fd_check(up.v, g_up.v, loss);
    fd_check(skip.v, g_skip.v, loss);
    fd_check(ap.wg.w.v, gp.wg.w.v, loss);
    fd_check(ap.wg.b, gp.wg.b, loss);
    fd_check(ap.wx.w.v, gp.wx.w.v, loss);
    fd_check(ap.wx.b, gp.wx.b, loss);
    fd_check(ap.psi.w.v, gp.psi.w.v, loss);
    fd_check(ap.psi.b, gp.psi.b, loss);
}

TEST_CASE("conv-gru cell gradients match finite differences", "[grad]") {
    Rng rng(8);
    GruParams gp;
    gp.z = detail::alloc_conv(3, 6, 3);
    gp.r = detail::alloc_conv(3, 6, 3);
    gp.h = detail::alloc_conv(3, 6, 3);
    fill_random(gp.z.w.v, rng, -0.4, 0.4);
    fill_random(gp.z.b, rng, -0.2, 0.2);
    fill_random(gp.r.w.v, rng, -0.4, 0.4);
    fill_random(gp.r.b, rng, -0.2, 0.2);
    fill_random(gp.h.w.v, rng, -0.4, 0.4);
    fill_random(gp.h.b, rng, -0.2, 0.2);
    Tensor x(3, 4, 4), h(3, 4, 4), dir(3, 4, 4);
    fill_random(x.v, rng);
    fill_random(h.v, rng);
    fill_random(dir.v, rng);

    const auto loss = [&]() { return dot(conv_gru_cell(gp, x, h, nullptr).v, dir.v); };
    GruCache cache;
    conv_gru_cell(gp, x, h, &cache);
    GruParams gg;
    gg.z = detail::alloc_conv(3, 6, 3);
    gg.r = detail::alloc_conv(3, 6, 3);
    gg.h = detail::alloc_conv(3, 6, 3);
    Tensor g_x = Tensor::zeros_like(x), g_h = Tensor::zeros_like(h);
    conv_gru_cell_backward(gp, cache, dir, gg, g_x, g_h);

    fd_check(x.v, g_x.v, loss);
    fd_check(h.v, g_h.v, loss);
    fd_check(gp.z.w.v, gg.z.w.v, loss);
    fd_check(gp.z.b, gg.z.b, loss);
    fd_check(gp.r.w.v, gg.r.w.v, loss);
    fd_check(gp.r.b, gg.r.b, loss);
    fd_check(gp.h.w.v, gg.h.w.v, loss);
    fd_check(gp.h.b, gg.h.b, loss);
}

TEST_CASE("full network gradients match finite differences", "[grad]") {
    UNetSpec spec;
    spec.in_channels = 2;
    spec.base_channels = 2;
    spec.depth = 1;
    spec.use_convgru = true;
    spec.use_spatial_attention = true;
    spec.use_channel_attention = true;
    NetParams p = make_net_params(spec, 12345);

    Rng rng(9);
    Tensor input(2, 8, 8);
    fill_random(input.v, rng, 0.05, 1.0);
    Tensor state = ConvGRUState::zeros(spec, 8, 8).hidden;
    fill_random(state.v, rng, -0.5, 0.5);
    Tensor dir_pred(1, 8, 8), dir_state(state.c, state.h, state.w);
    fill_random(dir_pred.v, rng);
    fill_random(dir_state.v, rng);

    const auto loss = [&]() {
        Tensor state_out;
        const Tensor pred = unet_forward(p, input, state, &state_out, nullptr);
        return dot(pred.v, dir_pred.v) + dot(state_out.v, dir_state.v);
    };

    ForwardCache cache;
    Tensor state_out;
    unet_forward(p, input, state, &state_out, &cache);
    NetParams grads = make_zero_params(spec);
    grads.zero_all();  // identity norms would otherwise offset the accumulators
    Tensor grad_state_in = Tensor::zeros_like(state);
    unet_backward(p, cache, dir_pred, dir_state, grads, &grad_state_in);

    // Gradient w.r.t. the incoming recurrent state.
    fd_check(state.v, grad_state_in.v, loss);

    // All parameter arrays.
    std::vector<std::vector<double>*> pa;
    std::vector<std::vector<double>*> ga;
    p.for_each_array(
        [&](const std::string&, std::vector<double>& a, const std::string&) { pa.push_back(&a); });
    grads.for_each_array(
        [&](const std::string&, std::vector<double>& a, const std::string&) { ga.push_back(&a); });
    REQUIRE(pa.size() == ga.size());
    for (std::size_t i = 0; i < pa.size(); ++i) fd_check(*pa[i], *ga[i], loss);
}

TEST_CASE("plain cnn variant propagates state untouched", "[grad]") {
    UNetSpec spec;
    spec.in_channels = 1;
    spec.base_channels = 2;
    spec.depth = 1;
    spec.use_convgru = false;
    spec.use_spatial_attention = false;
    spec.use_channel_attention = false;
    NetParams p = make_net_params(spec, 7);

    Rng rng(10);
    Tensor input(1, 8, 8);
    fill_random(input.v, rng, 0.05, 1.0);
    Tensor state = ConvGRUState::zeros(spec, 8, 8).hidden;
    fill_random(state.v, rng);
    Tensor state_out;
    ForwardCache cache;
    const Tensor pred = unet_forward(p, input, state, &state_out, &cache);
    REQUIRE(state_out.v == state.v);  // passthrough
    REQUIRE(pred.c == 1);

    Tensor dir_pred(1, 8, 8);
    fill_random(dir_pred.v, rng);
    const auto loss = [&]() {
        Tensor so;
        return dot(unet_forward(p, input, state, &so, nullptr).v, dir_pred.v);
    };
    NetParams grads = make_zero_params(spec);
    grads.zero_all();
    Tensor grad_state_in = Tensor::zeros_like(state);
    unet_backward(p, cache, dir_pred, Tensor::zeros_like(state), grads, &grad_state_in);
    std::vector<std::vector<double>*> pa, ga;
    p.for_each_array(
        [&](const std::string&, std::vector<double>& a, const std::string&) { pa.push_back(&a); });
    grads.for_each_array(
        [&](const std::string&, std::vector<double>& a, const std::string&) { ga.push_back(&a); });
    for (std::size_t i = 0; i < pa.size(); ++i) fd_check(*pa[i], *ga[i], loss);
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------
TEST_CASE("dice loss gradients match finite differences", "[grad]") {
    Rng rng(11);
    Tensor p(1, 6, 6), g(1, 6, 6);
    fill_random(p.v, rng, 0.1, 0.9);
    for (auto& v : g.v) v = rng.uniform() < 0.4 ? 1.0 : (rng.uniform() < 0.3 ? 0.5 : 0.0);
    const auto loss = [&]() { return w_dice_loss(p, g).loss; };
    const LossValue lv = w_dice_loss(p, g);
    fd_check(p.v, lv.grad.v, loss);
}

TEST_CASE("cross-entropy loss gradients match finite differences", "[grad]") {
    Rng rng(12);
    Tensor p(1, 6, 6), g(1, 6, 6);
    fill_random(p.v, rng, 0.1, 0.9);
    for (auto& v : g.v) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const double lambda = 4.0;
    const auto loss = [&]() { return w_ce_loss(p, g, lambda).loss; };
    const LossValue lv = w_ce_loss(p, g, lambda);
    fd_check(p.v, lv.grad.v, loss);
}

TEST_CASE("cross-entropy clamps have zero gradient", "[net]") {
    Tensor p(1, 1, 2), g(1, 1, 2);
    p.v = {1e-9, 1.0 - 1e-9};
    g.v = {1.0, 0.0};
    const LossValue lv = w_ce_loss(p, g, 4.0);
    CHECK(std::isfinite(lv.loss));
    CHECK(lv.grad.v[0] == 0.0);
    CHECK(lv.grad.v[1] == 0.0);
}

TEST_CASE("dice score algebra", "[net]") {
    const ImageGeometry geo = bench_geometry();
    // score(p = g) = 1 within 1e-6.
    PolarImage g = random_polar(geo, 1001);
    CHECK(weighted_dice_score(g, g) == Catch::Approx(1.0).margin(1e-6));
    // Disjoint supports -> <= 1e-6.
    PolarImage a(geo), b(geo);
    for (int k = 0; k < geo.n_rays; ++k) {
        a.at(k, 10) = 1.0;
        b.at(k, 40) = 1.0;
    }
    CHECK(weighted_dice_score(a, b) <= 1e-6);
    // p = 0.5 g with binary g -> 0.8 within 1e-9 (needs enough support mass).
    PolarImage gbin(geo), phalf(geo);
    int ones = 0;
    for (int s = 16; s < 48; ++s)
        for (int k = 8; k < 56; ++k) {
            gbin.at(k, s) = 1.0;
            phalf.at(k, s) = 0.5;
            ++ones;
        }
    REQUIRE(ones >= 1000);
    CHECK(weighted_dice_score(phalf, gbin) == Catch::Approx(0.8).margin(1e-9));
    // score + loss = 1 within 1e-12.
    Rng rng(55);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor tp(1, 32, 32), tg(1, 32, 32);
        for (auto& v : tp.v) v = rng.uniform();
        for (auto& v : tg.v) v = rng.uniform();
        const double score = weighted_dice_score(tp, tg);
        const double loss = w_dice_loss(tp, tg).loss;
        CHECK(std::abs(score + loss - 1.0) < 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Reset policies and training.
// ---------------------------------------------------------------------------
TEST_CASE("reset flags follow the policy", "[net]") {
    const std::vector<int> sweeps = {0, 0, 0, 1, 1, 2, 2};
    const auto fixed = reset_flags(ResetPolicy::fixed(3), sweeps);
    CHECK(fixed == std::vector<bool>{true, false, false, true, false, false, true});
    const auto align = reset_flags(ResetPolicy::align(), sweeps);
    CHECK(align == std::vector<bool>{true, false, false, true, false, true, false});
    CHECK(reset_flags(ResetPolicy::fixed(1), {7, 7}) == std::vector<bool>{true, true});
    CHECK_THROWS_AS(ResetPolicy::fixed(0), DomainError);
}

namespace {

std::vector<TrainSample> tiny_dataset(const UNetSpec& spec, int n_frames, int hw,
                                      std::uint64_t seed) {
    std::vector<TrainSample> samples;
    Rng rng(seed);
    for (int f = 0; f < n_frames; ++f) {
        TrainSample s;
        s.input = Tensor(spec.in_channels, hw, hw);
        s.label = Tensor(1, hw, hw);
        for (auto& v : s.input.v) v = rng.uniform();
        // A fixed bright band that the input also carries in channel 0.
        for (int y = hw / 4; y < hw / 2; ++y)
            for (int x = 0; x < hw; ++x) {
                s.label.at(0, y, x) = 1.0;
                s.input.at(0, y, x) = 0.9;
            }
        s.sweep_id = f / 4;
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

TEST_CASE("training overfits a tiny dataset", "[train]") {
    UNetSpec spec;
    spec.in_channels = 2;
    spec.base_channels = 4;
    spec.depth = 2;
    NetParams params = make_net_params(spec, 3);
    TrainConfig cfg;
    cfg.loss = LossKind::w_dice;
    cfg.learning_rate = 0.5;
    cfg.epochs = 30;
    cfg.reset_policy = ResetPolicy::align();
    const auto samples = tiny_dataset(spec, 8, 16, 42);
    const TrainTrace trace = train(params, cfg, samples);
    REQUIRE(trace.epoch_loss.size() == 30);
    CHECK(trace.epoch_loss.back() < 0.5 * trace.epoch_loss.front());
    for (double l : trace.epoch_loss) REQUIRE(std::isfinite(l));
}

TEST_CASE("cross-entropy training also reduces its loss", "[train]") {
    UNetSpec spec;
    spec.in_channels = 1;
    spec.base_channels = 2;
    spec.depth = 1;
    spec.use_convgru = false;
    spec.use_spatial_attention = false;
    spec.use_channel_attention = false;
    NetParams params = make_net_params(spec, 5);
    TrainConfig cfg;
    cfg.loss = LossKind::w_ce;
    cfg.learning_rate = 0.3;
    cfg.epochs = 15;
    cfg.reset_policy = ResetPolicy::fixed(1);
    const auto samples = tiny_dataset(spec, 4, 16, 43);
    const TrainTrace trace = train(params, cfg, samples);
    CHECK(trace.epoch_loss.back() < trace.epoch_loss.front());
}

TEST_CASE("training is deterministic", "[train]") {
    UNetSpec spec;
    spec.in_channels = 2;
    spec.base_channels = 2;
    spec.depth = 1;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.reset_policy = ResetPolicy::fixed(2);
    const auto samples = tiny_dataset(spec, 4, 8, 44);

    NetParams a = make_net_params(spec, 9);
    NetParams b = make_net_params(spec, 9);
    const TrainTrace ta = train(a, cfg, samples);
    const TrainTrace tb = train(b, cfg, samples);
    CHECK(ta.epoch_loss == tb.epoch_loss);
    bool identical = true;
    std::vector<std::vector<double>*> av, bv;
    a.for_each_array(
        [&](const std::string&, std::vector<double>& x, const std::string&) { av.push_back(&x); });
    b.for_each_array(
        [&](const std::string&, std::vector<double>& x, const std::string&) { bv.push_back(&x); });
    for (std::size_t i = 0; i < av.size(); ++i) identical = identical && (*av[i] == *bv[i]);
    CHECK(identical);
}

TEST_CASE("non-finite loss raises a training error with the epoch", "[train]") {
    UNetSpec spec;
    spec.in_channels = 1;
    spec.base_channels = 2;
    spec.depth = 1;
    spec.use_convgru = false;
    spec.use_spatial_attention = false;
    spec.use_channel_attention = false;
    NetParams params = make_net_params(spec, 1);
    auto samples = tiny_dataset(spec, 1, 8, 45);
    samples[0].label.v[3] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.reset_policy = ResetPolicy::fixed(1);
    try {
        train(params, cfg, samples);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(e.epoch_index == 0);
    }
}

TEST_CASE("training validates shapes and sample counts", "[train]") {
    UNetSpec spec;
    spec.in_channels = 2;
    spec.base_channels = 2;
    spec.depth = 1;
    NetParams params = make_net_params(spec, 1);
    TrainConfig cfg;
    CHECK_THROWS_AS(train(params, cfg, {}), DomainError);
    auto samples = tiny_dataset(spec, 2, 8, 46);
    samples[1].label = Tensor(1, 4, 4);
    CHECK_THROWS_AS(train(params, cfg, samples), DomainError);
}

TEST_CASE("inference resets state per policy", "[train]") {
    UNetSpec spec;
    spec.in_channels = 2;
    spec.base_channels = 2;
    spec.depth = 1;
    const NetParams params = make_net_params(spec, 21);
    const auto samples = tiny_dataset(spec, 2, 8, 47);
    const std::vector<Tensor> inputs = {samples[0].input, samples[1].input};

    // k=1 resets before every frame: second output equals a fresh single-frame run.
    const auto both = infer(params, inputs, {0, 0}, ResetPolicy::fixed(1));
    const auto solo = infer(params, {inputs[1]}, {0}, ResetPolicy::fixed(1));
    CHECK(max_abs_diff(both[1].v, solo[0].v) == 0.0);

    // k=2 carries state into the second frame, changing it.
    const auto carried = infer(params, inputs, {0, 0}, ResetPolicy::fixed(2));
    CHECK(max_abs_diff(carried[1].v, solo[0].v) > 0.0);
    CHECK(max_abs_diff(carried[0].v, both[0].v) == 0.0);

    // align: a sweep change acts like a reset.
    const auto aligned = infer(params, inputs, {0, 1}, ResetPolicy::align());
    CHECK(max_abs_diff(aligned[1].v, solo[0].v) == 0.0);
}

// ---------------------------------------------------------------------------
// Parameter plumbing and serialization.
// ---------------------------------------------------------------------------
TEST_CASE("parameter initialization is seeded and structured", "[net]") {
    UNetSpec spec;
    spec.in_channels = 2;
    spec.base_channels = 4;
    spec.depth = 2;
    const NetParams a = make_net_params(spec, 100);
    const NetParams b = make_net_params(spec, 100);
    const NetParams c = make_net_params(spec, 101);
    CHECK(a.parameter_count() == b.parameter_count());
    CHECK(a.parameter_count() > 1000);

    bool ab_same = true, ac_diff = false;
    std::vector<const std::vector<double>*> av, bv, cv;
    a.for_each_array([&](const std::string&, const std::vector<double>& x, const std::string&) {
        av.push_back(&x);
    });
    b.for_each_array([&](const std::string&, const std::vector<double>& x, const std::string&) {
        bv.push_back(&x);
    });
    c.for_each_array([&](const std::string&, const std::vector<double>& x, const std::string&) {
        cv.push_back(&x);
    });
    for (std::size_t i = 0; i < av.size(); ++i) {
        ab_same = ab_same && (*av[i] == *bv[i]);
        ac_diff = ac_diff || (*av[i] != *cv[i]);
    }
    CHECK(ab_same);
    CHECK(ac_diff);

    // Norm gains start at one, biases at zero.
    a.for_each_array([&](const std::string& name, const std::vector<double>& x,
                         const std::string&) {
        if (name.find("gamma") != std::string::npos)
            for (double v : x) REQUIRE(v == 1.0);
        if (name.ends_with("_b") || name.find("beta") != std::string::npos)
            for (double v : x) REQUIRE(v == 0.0);
    });

    // Array names are unique.
    std::set<std::string> names;
    std::size_t count = 0;
    a.for_each_array([&](const std::string& name, const std::vector<double>&, const std::string&) {
        names.insert(name);
        ++count;
    });
    CHECK(names.size() == count);
}

TEST_CASE("parameter blobs roundtrip through disk", "[net]") {
    const auto dir = tmp_dir("params");
    UNetSpec spec;
    spec.in_channels = 2;
    spec.base_channels = 4;
    spec.depth = 2;
    spec.use_convgru = true;
    const NetParams p = make_net_params(spec, 77);
    save_params(dir / "p.bin", dir / "p.bin.manifest", p);
    const NetParams q = load_params(dir / "p.bin");
    CHECK(q.spec == spec);

    std::vector<const std::vector<double>*> pv, qv;
    p.for_each_array([&](const std::string&, const std::vector<double>& x, const std::string&) {
        pv.push_back(&x);
    });
    q.for_each_array([&](const std::string&, const std::vector<double>& x, const std::string&) {
        qv.push_back(&x);
    });
    REQUIRE(pv.size() == qv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) REQUIRE(*pv[i] == *qv[i]);

    // Manifest has one line per array with increasing offsets.
    std::ifstream mf(dir / "p.bin.manifest");
    std::string line;
    std::size_t lines = 0;
    long long prev_offset = -1;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        ++lines;
        std::istringstream ss(line);
        std::string name, shape;
        long long offset = 0;
        ss >> name >> offset >> shape;
        REQUIRE(offset > prev_offset);
        prev_offset = offset;
    }
    CHECK(lines == pv.size());

    // Truncated blobs are rejected.
    {
        std::ifstream in(dir / "p.bin", std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        bytes.resize(bytes.size() / 2);
        std::ofstream out(dir / "trunc.bin", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_params(dir / "trunc.bin"), DomainError);
    // Wrong magic is rejected.
    std::ofstream(dir / "bad.bin", std::ios::binary) << "NOTME00000000000000000000";
    CHECK_THROWS_AS(load_params(dir / "bad.bin"), DomainError);
}

TEST_CASE("network validates input shapes", "[net]") {
    UNetSpec spec;
    spec.in_channels = 2;
    spec.base_channels = 2;
    spec.depth = 2;
    const NetParams p = make_net_params(spec, 1);
    Tensor bad_channels(1, 8, 8);
    Tensor state = ConvGRUState::zeros(spec, 8, 8).hidden;
    Tensor so;
    CHECK_THROWS_AS(unet_forward(p, bad_channels, state, &so, nullptr), DomainError);
    Tensor bad_dims(2, 10, 10);  // 10 not divisible by 4
    Tensor state2 = ConvGRUState::zeros(spec, 10, 10).hidden;
    CHECK_THROWS_WITH(unet_forward(p, bad_dims, state2, &so, nullptr),
                      Catch::Matchers::ContainsSubstring("divisible"));
    Tensor wrong_state(1, 2, 2);
    Tensor ok(2, 8, 8);
    CHECK_THROWS_AS(unet_forward(p, ok, wrong_state, &so, nullptr), DomainError);
}
