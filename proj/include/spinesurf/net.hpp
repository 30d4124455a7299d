#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "spinesurf/common.hpp"
#include "spinesurf/tensor.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// Architecture description.
// ---------------------------------------------------------------------------
struct UNetSpec {
    int in_channels = 2;  // B-mode + aggregated feature map
    int base_channels = 8;
    int depth = 3;
    bool use_convgru = true;
    bool use_spatial_attention = true;
    bool use_channel_attention = true;

    void validate() const {
        if (in_channels < 1) throw DomainError("unet: in_channels must be >= 1");
        if (base_channels < 1) throw DomainError("unet: base_channels must be >= 1");
        if (depth < 1) throw DomainError("unet: depth must be >= 1");
    }
    int level_channels(int level) const { return base_channels << level; }
    int bottleneck_channels() const { return base_channels << depth; }
    bool operator==(const UNetSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters, grouped per layer, visitable in declaration order.
// ---------------------------------------------------------------------------
struct ConvParam {
    ConvWeight w;
    std::vector<double> b;
};

struct NormParam {
    std::vector<double> gamma, beta;
};

struct BlockParams {
    ConvParam c1;
    NormParam n1;
    ConvParam c2;
    NormParam n2;
};

struct AttnParams {
    ConvParam wg, wx, psi;
};

struct GruParams {
    ConvParam z, r, h;
};

struct SeParams {
    int in = 0, hidden = 0;
    std::vector<double> w1, b1, w2, b2;  // w1: hidden x in, w2: in x hidden
};

struct NetParams {
    UNetSpec spec;
    SeParams se;
    std::vector<BlockParams> enc;
    BlockParams bottleneck;
    GruParams gru;
    std::vector<AttnParams> att;  // index = decoder level
    std::vector<BlockParams> dec;
    ConvParam head;

    template <typename Self, typename F>
    static void visit(Self& self, F&& f) {
        const UNetSpec& s = self.spec;
        const auto conv_shape = [](const ConvWeight& w) {
            return std::to_string(w.out_c) + "x" + std::to_string(w.in_c) + "x" +
                   std::to_string(w.k) + "x" + std::to_string(w.k);
        };
        const auto vec_shape = [](const auto& v) { return std::to_string(v.size()); };
        const auto visit_conv = [&](const std::string& name, auto& cp) {
            f(name + "_w", cp.w.v, conv_shape(cp.w));
            f(name + "_b", cp.b, vec_shape(cp.b));
        };
        const auto visit_norm = [&](const std::string& name, auto& np) {
            f(name + "_gamma", np.gamma, vec_shape(np.gamma));
            f(name + "_beta", np.beta, vec_shape(np.beta));
        };
        const auto visit_block = [&](const std::string& name, auto& bp) {
            visit_conv(name + "_conv1", bp.c1);
            visit_norm(name + "_norm1", bp.n1);
            visit_conv(name + "_conv2", bp.c2);
            visit_norm(name + "_norm2", bp.n2);
        };
        if (s.use_channel_attention) {
            f("ca_fc1_w", self.se.w1,
              std::to_string(self.se.hidden) + "x" + std::to_string(self.se.in));
            f("ca_fc1_b", self.se.b1, vec_shape(self.se.b1));
            f("ca_fc2_w", self.se.w2,
              std::to_string(self.se.in) + "x" + std::to_string(self.se.hidden));
            f("ca_fc2_b", self.se.b2, vec_shape(self.se.b2));
        }
        for (int i = 0; i < s.depth; ++i) visit_block("enc" + std::to_string(i), self.enc[i]);
        visit_block("bottleneck", self.bottleneck);
        if (s.use_convgru) {
            visit_conv("gru_z", self.gru.z);
            visit_conv("gru_r", self.gru.r);
            visit_conv("gru_h", self.gru.h);
        }
        for (int i = s.depth - 1; i >= 0; --i) {
            if (s.use_spatial_attention) {
                visit_conv("att" + std::to_string(i) + "_wg", self.att[i].wg);
                visit_conv("att" + std::to_string(i) + "_wx", self.att[i].wx);
                visit_conv("att" + std::to_string(i) + "_psi", self.att[i].psi);
            }
            visit_block("dec" + std::to_string(i), self.dec[i]);
        }
        visit_conv("head", self.head);
    }
    template <typename F>
    void for_each_array(F&& f) {
        visit(*this, std::forward<F>(f));
    }
    template <typename F>
    void for_each_array(F&& f) const {
        visit(*this, std::forward<F>(f));
    }

    void zero_all() {
        for_each_array([](const std::string&, std::vector<double>& a, const std::string&) {
            std::fill(a.begin(), a.end(), 0.0);
        });
    }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_array([&](const std::string&, const std::vector<double>& a, const std::string&) {
            n += a.size();
        });
        return n;
    }
};

namespace detail {

inline ConvParam alloc_conv(int out_c, int in_c, int k) {
    ConvParam cp;
    cp.w = ConvWeight(out_c, in_c, k);
    cp.b.assign(out_c, 0.0);
    return cp;
}

inline NormParam alloc_norm(int ch) {
    NormParam np;
    np.gamma.assign(ch, 1.0);
    np.beta.assign(ch, 0.0);
    return np;
}

inline BlockParams alloc_block(int in_c, int out_c) {
    BlockParams bp;
    bp.c1 = alloc_conv(out_c, in_c, 3);
    bp.n1 = alloc_norm(out_c);
    bp.c2 = alloc_conv(out_c, out_c, 3);
    bp.n2 = alloc_norm(out_c);
    return bp;
}

inline int attn_inter_channels(int skip_c) { return std::max(1, skip_c / 2); }

}  // namespace detail

/// Allocates the full parameter set (zero weights, identity norms).
inline NetParams make_zero_params(const UNetSpec& spec) {
    spec.validate();
    NetParams p;
    p.spec = spec;
    if (spec.use_channel_attention) {
        p.se.in = spec.in_channels;
        p.se.hidden = std::max(2, spec.in_channels);
        p.se.w1.assign(static_cast<std::size_t>(p.se.hidden) * p.se.in, 0.0);
        p.se.b1.assign(p.se.hidden, 0.0);
        p.se.w2.assign(static_cast<std::size_t>(p.se.in) * p.se.hidden, 0.0);
        p.se.b2.assign(p.se.in, 0.0);
    }
    for (int i = 0; i < spec.depth; ++i)
        p.enc.push_back(detail::alloc_block(i == 0 ? spec.in_channels : spec.level_channels(i - 1),
                                            spec.level_channels(i)));
    p.bottleneck =
        detail::alloc_block(spec.level_channels(spec.depth - 1), spec.bottleneck_channels());
    if (spec.use_convgru) {
        const int ch = spec.bottleneck_channels();
        p.gru.z = detail::alloc_conv(ch, 2 * ch, 3);
        p.gru.r = detail::alloc_conv(ch, 2 * ch, 3);
        p.gru.h = detail::alloc_conv(ch, 2 * ch, 3);
    }
    p.att.resize(spec.depth);
    p.dec.resize(spec.depth);
    for (int i = 0; i < spec.depth; ++i) {
        const int skip_c = spec.level_channels(i);
        const int deep_c =
            i == spec.depth - 1 ? spec.bottleneck_channels() : spec.level_channels(i + 1);
        if (spec.use_spatial_attention) {
            const int inter = detail::attn_inter_channels(skip_c);
            p.att[i].wg = detail::alloc_conv(inter, deep_c, 1);
            p.att[i].wx = detail::alloc_conv(inter, skip_c, 1);
            p.att[i].psi = detail::alloc_conv(1, inter, 1);
        }
        p.dec[i] = detail::alloc_block(deep_c + skip_c, skip_c);
    }
    p.head = detail::alloc_conv(1, spec.base_channels, 1);
    return p;
}

/// He-normal initialization, deterministic in the seed; draw order equals the
/// visitation (serialization) order.
inline NetParams make_net_params(const UNetSpec& spec, std::uint64_t seed) {
    NetParams p = make_zero_params(spec);
    Rng rng(seed);
    // Weight arrays need their fan-in, so walk the structured layout directly
    // (same order as for_each_array); biases stay 0, norm scales stay 1.
    const auto init_conv = [&rng](ConvParam& cp) {
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(cp.w.in_c) * cp.w.k * cp.w.k));
        for (double& x : cp.w.v) x = rng.normal() * std_dev;
    };
    const auto init_block = [&](BlockParams& bp) {
        init_conv(bp.c1);
        init_conv(bp.c2);
    };
    if (spec.use_channel_attention) {
        const double s1 = std::sqrt(2.0 / p.se.in);
        for (double& x : p.se.w1) x = rng.normal() * s1;
        const double s2 = std::sqrt(2.0 / p.se.hidden);
        for (double& x : p.se.w2) x = rng.normal() * s2;
    }
    for (auto& bp : p.enc) init_block(bp);
    init_block(p.bottleneck);
    if (spec.use_convgru) {
        init_conv(p.gru.z);
        init_conv(p.gru.r);
        init_conv(p.gru.h);
    }
    for (int i = spec.depth - 1; i >= 0; --i) {
        if (spec.use_spatial_attention) {
            init_conv(p.att[i].wg);
            init_conv(p.att[i].wx);
            init_conv(p.att[i].psi);
        }
        init_block(p.dec[i]);
    }
    init_conv(p.head);
    return p;
}

// ---------------------------------------------------------------------------
// Layer compositions with explicit caches for reverse-mode gradients.
// ---------------------------------------------------------------------------
struct BlockCache {
    Tensor in;
    InstanceNormCache n1;
    Tensor r1;
    InstanceNormCache n2;
    Tensor out;
};

inline Tensor run_block(const BlockParams& bp, const Tensor& in, BlockCache* bc) {
    const Tensor c1 = conv2d(in, bp.c1.w, bp.c1.b);
    const Tensor n1 = instance_norm(c1, bp.n1.gamma, bp.n1.beta, bc ? &bc->n1 : nullptr);
    Tensor r1 = relu(n1);
    const Tensor c2 = conv2d(r1, bp.c2.w, bp.c2.b);
    const Tensor n2 = instance_norm(c2, bp.n2.gamma, bp.n2.beta, bc ? &bc->n2 : nullptr);
    Tensor out = relu(n2);
    if (bc) {
        bc->in = in;
        bc->r1 = std::move(r1);
        bc->out = out;
        return bc->out;
    }
    return out;
}

inline void block_backward(const BlockParams& bp, const BlockCache& bc, const Tensor& grad_out,
                           BlockParams& gp, Tensor& grad_in) {
    Tensor g_n2 = Tensor::zeros_like(bc.out);
    relu_backward(bc.out, grad_out, g_n2);
    Tensor g_c2 = Tensor::zeros_like(bc.out);
    instance_norm_backward(bc.n2, bp.n2.gamma, g_n2, g_c2, gp.n2.gamma, gp.n2.beta);
    Tensor g_r1 = Tensor::zeros_like(bc.r1);
    conv2d_backward(bc.r1, bp.c2.w, g_c2, &g_r1, gp.c2.w, gp.c2.b);
    Tensor g_n1 = Tensor::zeros_like(bc.r1);
    relu_backward(bc.r1, g_r1, g_n1);
    Tensor g_c1 = Tensor::zeros_like(bc.r1);
    instance_norm_backward(bc.n1, bp.n1.gamma, g_n1, g_c1, gp.n1.gamma, gp.n1.beta);
    conv2d_backward(bc.in, bp.c1.w, g_c1, &grad_in, gp.c1.w, gp.c1.b);
}

struct SeCache {
    Tensor in;
    std::vector<double> m, a1, s;
};

inline Tensor se_forward(const SeParams& sp, const Tensor& in, SeCache* c) {
    if (in.c != sp.in) throw DomainError("channel attention: channel mismatch");
    const int n = in.plane();
    std::vector<double> m(sp.in, 0.0);
    for (int ci = 0; ci < sp.in; ++ci) {
        const double* src = in.v.data() + static_cast<std::size_t>(ci) * n;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += src[i];
        m[ci] = acc / n;
    }
    std::vector<double> a1(sp.hidden, 0.0);
    for (int j = 0; j < sp.hidden; ++j) {
        double acc = sp.b1[j];
        for (int i = 0; i < sp.in; ++i) acc += sp.w1[static_cast<std::size_t>(j) * sp.in + i] * m[i];
        a1[j] = std::max(acc, 0.0);
    }
    std::vector<double> s(sp.in, 0.0);
    for (int i = 0; i < sp.in; ++i) {
        double acc = sp.b2[i];
        for (int j = 0; j < sp.hidden; ++j)
            acc += sp.w2[static_cast<std::size_t>(i) * sp.hidden + j] * a1[j];
        s[i] = 1.0 / (1.0 + std::exp(-acc));
    }
    Tensor out(in.c, in.h, in.w);
    for (int ci = 0; ci < in.c; ++ci) {
        const double* src = in.v.data() + static_cast<std::size_t>(ci) * n;
        double* dst = out.v.data() + static_cast<std::size_t>(ci) * n;
        for (int i = 0; i < n; ++i) dst[i] = src[i] * s[ci];
    }
    if (c) {
        c->in = in;
        c->m = std::move(m);
        c->a1 = std::move(a1);
        c->s = std::move(s);
    }
    return out;
}

/// The per-channel sigmoid scales the attention produces for a given input.
inline std::vector<double> channel_attention_scales(const NetParams& p, const Tensor& in) {
    SeCache c;
    se_forward(p.se, in, &c);
    return c.s;
}

inline void se_backward(const SeParams& sp, const SeCache& c, const Tensor& grad_out, SeParams& gp,
                        Tensor& grad_in) {
    const int n = c.in.plane();
    std::vector<double> ds(sp.in, 0.0);
    for (int ci = 0; ci < sp.in; ++ci) {
        const double* src = c.in.v.data() + static_cast<std::size_t>(ci) * n;
        const double* go = grad_out.v.data() + static_cast<std::size_t>(ci) * n;
        double* gi = grad_in.v.data() + static_cast<std::size_t>(ci) * n;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += go[i] * src[i];
            gi[i] += go[i] * c.s[ci];
        }
        ds[ci] = acc;
    }
    std::vector<double> da2(sp.in);
    for (int i = 0; i < sp.in; ++i) da2[i] = ds[i] * c.s[i] * (1.0 - c.s[i]);
    std::vector<double> da1(sp.hidden, 0.0);
    for (int i = 0; i < sp.in; ++i) {
        gp.b2[i] += da2[i];
        for (int j = 0; j < sp.hidden; ++j) {
            gp.w2[static_cast<std::size_t>(i) * sp.hidden + j] += da2[i] * c.a1[j];
            da1[j] += sp.w2[static_cast<std::size_t>(i) * sp.hidden + j] * da2[i];
        }
    }
    std::vector<double> dm(sp.in, 0.0);
    for (int j = 0; j < sp.hidden; ++j) {
        const double d = c.a1[j] > 0.0 ? da1[j] : 0.0;
        gp.b1[j] += d;
        for (int i = 0; i < sp.in; ++i) {
            gp.w1[static_cast<std::size_t>(j) * sp.in + i] += d * c.m[i];
            dm[i] += sp.w1[static_cast<std::size_t>(j) * sp.in + i] * d;
        }
    }
    for (int ci = 0; ci < sp.in; ++ci) {
        double* gi = grad_in.v.data() + static_cast<std::size_t>(ci) * n;
        const double per_pixel = dm[ci] / n;
        for (int i = 0; i < n; ++i) gi[i] += per_pixel;
    }
}

struct GruCache {
    Tensor h_prev, cat1, cat2, z, r, htilde, h_new;
};

/// z = s(conv_z([x;h])), r = s(conv_r([x;h])), h~ = tanh(conv_h([x;r.h])),
/// h' = (1-z).h + z.h~
inline Tensor conv_gru_cell(const GruParams& gp, const Tensor& x, const Tensor& h_prev,
                            GruCache* c) {
    if (x.h != h_prev.h || x.w != h_prev.w) throw DomainError("conv_gru_cell: spatial mismatch");
    Tensor cat1 = concat_channels(x, h_prev);
    Tensor z = sigmoid(conv2d(cat1, gp.z.w, gp.z.b));
    Tensor r = sigmoid(conv2d(cat1, gp.r.w, gp.r.b));
    Tensor rh = h_prev;
    for (std::size_t i = 0; i < rh.v.size(); ++i) rh.v[i] *= r.v[i];
    Tensor cat2 = concat_channels(x, rh);
    Tensor htilde = tanh_map(conv2d(cat2, gp.h.w, gp.h.b));
    Tensor h_new(h_prev.c, h_prev.h, h_prev.w);
    for (std::size_t i = 0; i < h_new.v.size(); ++i)
        h_new.v[i] = (1.0 - z.v[i]) * h_prev.v[i] + z.v[i] * htilde.v[i];
    if (c) {
        c->h_prev = h_prev;
        c->cat1 = std::move(cat1);
        c->cat2 = std::move(cat2);
        c->z = std::move(z);
        c->r = std::move(r);
        c->htilde = std::move(htilde);
        c->h_new = h_new;
    }
    return h_new;
}

inline void conv_gru_cell_backward(const GruParams& gp, const GruCache& c, const Tensor& grad_h_new,
                                   GruParams& gg, Tensor& grad_x, Tensor& grad_h_prev) {
    const std::size_t n = c.h_prev.v.size();
    Tensor dz(c.z.c, c.z.h, c.z.w), dhtilde(c.z.c, c.z.h, c.z.w);
    for (std::size_t i = 0; i < n; ++i) {
        dz.v[i] = (c.htilde.v[i] - c.h_prev.v[i]) * grad_h_new.v[i];
        dhtilde.v[i] = c.z.v[i] * grad_h_new.v[i];
        grad_h_prev.v[i] += (1.0 - c.z.v[i]) * grad_h_new.v[i];
    }
    // candidate path
    Tensor dpre_h = Tensor::zeros_like(c.htilde);
    tanh_backward(c.htilde, dhtilde, dpre_h);
    Tensor dcat2 = Tensor::zeros_like(c.cat2);
    conv2d_backward(c.cat2, gp.h.w, dpre_h, &dcat2, gg.h.w, gg.h.b);
    Tensor drh(c.h_prev.c, c.h_prev.h, c.h_prev.w);
    {
        Tensor dx_part = Tensor::zeros_like(grad_x);
        Tensor drh_zero = Tensor::zeros_like(drh);
        split_channels_backward(dcat2, dx_part, drh_zero);
        for (std::size_t i = 0; i < grad_x.v.size(); ++i) grad_x.v[i] += dx_part.v[i];
        drh = std::move(drh_zero);
    }
    Tensor dr(c.r.c, c.r.h, c.r.w);
    for (std::size_t i = 0; i < n; ++i) {
        dr.v[i] = drh.v[i] * c.h_prev.v[i];
        grad_h_prev.v[i] += drh.v[i] * c.r.v[i];
    }
    // gate paths
    Tensor dpre_z = Tensor::zeros_like(c.z);
    sigmoid_backward(c.z, dz, dpre_z);
    Tensor dpre_r = Tensor::zeros_like(c.r);
    sigmoid_backward(c.r, dr, dpre_r);
    Tensor dcat1 = Tensor::zeros_like(c.cat1);
    conv2d_backward(c.cat1, gp.z.w, dpre_z, &dcat1, gg.z.w, gg.z.b);
    conv2d_backward(c.cat1, gp.r.w, dpre_r, &dcat1, gg.r.w, gg.r.b);
    Tensor dx_part = Tensor::zeros_like(grad_x);
    Tensor dh_part = Tensor::zeros_like(grad_h_prev);
    split_channels_backward(dcat1, dx_part, dh_part);
    for (std::size_t i = 0; i < grad_x.v.size(); ++i) grad_x.v[i] += dx_part.v[i];
    for (std::size_t i = 0; i < grad_h_prev.v.size(); ++i) grad_h_prev.v[i] += dh_part.v[i];
}

struct AttnCache {
    Tensor rrelu;  // relu(wg*up + wx*skip)
    Tensor a;      // sigmoid(psi(rrelu)), single channel
};

inline Tensor attn_forward(const AttnParams& ap, const Tensor& up, const Tensor& skip,
                           AttnCache* c) {
    Tensor q = conv2d(up, ap.wg.w, ap.wg.b);
    const Tensor qx = conv2d(skip, ap.wx.w, ap.wx.b);
    for (std::size_t i = 0; i < q.v.size(); ++i) q.v[i] += qx.v[i];
    Tensor rr = relu(q);
    Tensor a = sigmoid(conv2d(rr, ap.psi.w, ap.psi.b));
    Tensor gated(skip.c, skip.h, skip.w);
    const int n = skip.plane();
    for (int ci = 0; ci < skip.c; ++ci)
        for (int i = 0; i < n; ++i)
            gated.v[static_cast<std::size_t>(ci) * n + i] =
                skip.v[static_cast<std::size_t>(ci) * n + i] * a.v[i];
    if (c) {
        c->rrelu = std::move(rr);
        c->a = std::move(a);
    }
    return gated;
}

inline void attn_backward(const AttnParams& ap, const AttnCache& c, const Tensor& up,
                          const Tensor& skip, const Tensor& grad_gated, AttnParams& gp,
                          Tensor& grad_up, Tensor& grad_skip) {
    const int n = skip.plane();
    Tensor da(1, skip.h, skip.w);
    for (int ci = 0; ci < skip.c; ++ci)
        for (int i = 0; i < n; ++i) {
            da.v[i] += grad_gated.v[static_cast<std::size_t>(ci) * n + i] *
                       skip.v[static_cast<std::size_t>(ci) * n + i];
            grad_skip.v[static_cast<std::size_t>(ci) * n + i] +=
                grad_gated.v[static_cast<std::size_t>(ci) * n + i] * c.a.v[i];
        }
    Tensor de = Tensor::zeros_like(c.a);
    sigmoid_backward(c.a, da, de);
    Tensor drr = Tensor::zeros_like(c.rrelu);
    conv2d_backward(c.rrelu, ap.psi.w, de, &drr, gp.psi.w, gp.psi.b);
    Tensor dq = Tensor::zeros_like(c.rrelu);
    relu_backward(c.rrelu, drr, dq);
    conv2d_backward(up, ap.wg.w, dq, &grad_up, gp.wg.w, gp.wg.b);
    conv2d_backward(skip, ap.wx.w, dq, &grad_skip, gp.wx.w, gp.wx.b);
}

// ---------------------------------------------------------------------------
// Full network forward / backward.
// ---------------------------------------------------------------------------
struct ConvGRUState {
    Tensor hidden;

    static ConvGRUState zeros(const UNetSpec& spec, int input_h, int input_w) {
        return {Tensor(spec.bottleneck_channels(), input_h >> spec.depth, input_w >> spec.depth)};
    }
    void reset() { std::fill(hidden.v.begin(), hidden.v.end(), 0.0); }
};

struct LevelCache {
    Tensor up, skip;
    AttnCache attn;
    Tensor gated, cat;
    BlockCache block;
};

struct ForwardCache {
    SeCache se;
    std::vector<BlockCache> enc;
    std::vector<MaxPoolCache> pool;
    BlockCache bottleneck;
    GruCache gru;
    std::vector<LevelCache> dec;  // index = level
    Tensor head_in;
    Tensor pred;
};

inline Tensor unet_forward(const NetParams& p, const Tensor& input, const Tensor& state,
                           Tensor* state_out, ForwardCache* cache) {
    const UNetSpec& s = p.spec;
    s.validate();
    if (input.c != s.in_channels) throw DomainError("unet_forward: input channel mismatch");
    if (input.h % (1 << s.depth) != 0 || input.w % (1 << s.depth) != 0)
        throw DomainError("unet_forward: spatial dims must be divisible by 2^depth");
    if (cache) {
        cache->enc.resize(s.depth);
        cache->pool.resize(s.depth);
        cache->dec.resize(s.depth);
    }

    Tensor x = s.use_channel_attention ? se_forward(p.se, input, cache ? &cache->se : nullptr)
                                       : input;
    std::vector<Tensor> skips(s.depth);
    for (int i = 0; i < s.depth; ++i) {
        x = run_block(p.enc[i], x, cache ? &cache->enc[i] : nullptr);
        skips[i] = x;
        x = maxpool2(x, cache ? &cache->pool[i] : nullptr);
    }
    x = run_block(p.bottleneck, x, cache ? &cache->bottleneck : nullptr);
    if (s.use_convgru) {
        if (!state.same_shape(Tensor(s.bottleneck_channels(), x.h, x.w)))
            throw DomainError("unet_forward: state shape mismatch");
        x = conv_gru_cell(p.gru, x, state, cache ? &cache->gru : nullptr);
        if (state_out) *state_out = x;
    } else if (state_out) {
        *state_out = state;
    }
    for (int i = s.depth - 1; i >= 0; --i) {
        Tensor up = upsample_nearest2(x);
        const Tensor& skip = skips[i];
        Tensor gated =
            s.use_spatial_attention
                ? attn_forward(p.att[i], up, skip, cache ? &cache->dec[i].attn : nullptr)
                : skip;
        Tensor cat = concat_channels(up, gated);
        x = run_block(p.dec[i], cat, cache ? &cache->dec[i].block : nullptr);
        if (cache) {
            cache->dec[i].up = std::move(up);
            cache->dec[i].skip = skip;
            cache->dec[i].gated = std::move(gated);
            cache->dec[i].cat = std::move(cat);
        }
    }
    Tensor pred = sigmoid(conv2d(x, p.head.w, p.head.b));
    if (cache) {
        cache->head_in = std::move(x);
        cache->pred = pred;
    }
    return pred;
}

/// Accumulates parameter gradients; returns the gradient w.r.t. the incoming
/// state through grad_state_in. grad_state_out carries dL/d(state emitted by
/// this frame) from later frames in the truncated-backprop window.
inline void unet_backward(const NetParams& p, const ForwardCache& c, const Tensor& grad_pred,
                          const Tensor& grad_state_out, NetParams& grads, Tensor* grad_state_in) {
    const UNetSpec& s = p.spec;
    Tensor g_logits = Tensor::zeros_like(c.pred);
    sigmoid_backward(c.pred, grad_pred, g_logits);
    Tensor g_x = Tensor::zeros_like(c.head_in);
    conv2d_backward(c.head_in, p.head.w, g_logits, &g_x, grads.head.w, grads.head.b);

    std::vector<Tensor> g_skip(s.depth);
    for (int i = 0; i < s.depth; ++i) {
        const LevelCache& lc = c.dec[i];
        Tensor g_cat = Tensor::zeros_like(lc.cat);
        block_backward(p.dec[i], lc.block, g_x, grads.dec[i], g_cat);
        Tensor g_up = Tensor::zeros_like(lc.up);
        Tensor g_gated = Tensor::zeros_like(lc.gated);
        split_channels_backward(g_cat, g_up, g_gated);
        g_skip[i] = Tensor::zeros_like(lc.skip);
        if (s.use_spatial_attention)
            attn_backward(p.att[i], lc.attn, lc.up, lc.skip, g_gated, grads.att[i], g_up, g_skip[i]);
        else
            for (std::size_t j = 0; j < g_gated.v.size(); ++j) g_skip[i].v[j] += g_gated.v[j];
        Tensor g_deeper(lc.up.c, lc.up.h / 2, lc.up.w / 2);
        upsample_nearest2_backward(g_up, g_deeper);
        g_x = std::move(g_deeper);
    }

    Tensor g_bott_out = std::move(g_x);
    if (s.use_convgru) {
        for (std::size_t i = 0; i < g_bott_out.v.size(); ++i) g_bott_out.v[i] += grad_state_out.v[i];
        Tensor g_gru_x = Tensor::zeros_like(c.gru.h_prev);
        Tensor g_h_prev = Tensor::zeros_like(c.gru.h_prev);
        conv_gru_cell_backward(p.gru, c.gru, g_bott_out, grads.gru, g_gru_x, g_h_prev);
        if (grad_state_in) *grad_state_in = std::move(g_h_prev);
        g_bott_out = std::move(g_gru_x);
    } else if (grad_state_in) {
        *grad_state_in = grad_state_out;  // pass-through state
    }

    Tensor g_pool = Tensor::zeros_like(c.bottleneck.in);
    block_backward(p.bottleneck, c.bottleneck, g_bott_out, grads.bottleneck, g_pool);
    for (int i = s.depth - 1; i >= 0; --i) {
        Tensor g_enc_out = Tensor::zeros_like(c.enc[i].out);
        maxpool2_backward(c.pool[i], g_pool, g_enc_out);
        for (std::size_t j = 0; j < g_enc_out.v.size(); ++j) g_enc_out.v[j] += g_skip[i].v[j];
        Tensor g_enc_in = Tensor::zeros_like(c.enc[i].in);
        block_backward(p.enc[i], c.enc[i], g_enc_out, grads.enc[i], g_enc_in);
        g_pool = std::move(g_enc_in);
    }
    if (s.use_channel_attention) {
        Tensor g_input = Tensor::zeros_like(c.se.in);
        se_backward(p.se, c.se, g_pool, grads.se, g_input);
    }
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------
struct LossValue {
    double loss = 0.0;
    Tensor grad;
};

/// Soft Dice on intensities: D = (2 sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps).
inline LossValue w_dice_loss(const Tensor& pred, const Tensor& label) {
    if (!pred.same_shape(label)) throw DomainError("w_dice_loss: shape mismatch");
    constexpr double eps = 1e-6;
    double pg = 0.0, pp = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        pg += pred.v[i] * label.v[i];
        pp += pred.v[i] * pred.v[i];
        gg += label.v[i] * label.v[i];
    }
    const double num = 2.0 * pg + eps;
    const double den = pp + gg + eps;
    LossValue out;
    out.loss = 1.0 - num / den;
    out.grad = Tensor(pred.c, pred.h, pred.w);
    const double inv_den2 = 1.0 / (den * den);
    for (std::size_t i = 0; i < pred.v.size(); ++i)
        out.grad.v[i] = (2.0 * num * pred.v[i] - 2.0 * label.v[i] * den) * inv_den2;
    return out;
}

/// Pixel-weighted binary cross-entropy, weight = 1 + lambda * label.
inline LossValue w_ce_loss(const Tensor& pred, const Tensor& label, double lambda) {
    if (!pred.same_shape(label)) throw DomainError("w_ce_loss: shape mismatch");
    if (lambda < 0.0) throw DomainError("w_ce_loss: lambda must be >= 0");
    constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
    double wsum = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) wsum += 1.0 + lambda * label.v[i];
    LossValue out;
    out.grad = Tensor(pred.c, pred.h, pred.w);
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double g = label.v[i];
        const double w = 1.0 + lambda * g;
        const double p = std::clamp(pred.v[i], lo, hi);
        acc += w * (-g * std::log(p) - (1.0 - g) * std::log(1.0 - p));
        out.grad.v[i] = (pred.v[i] > lo && pred.v[i] < hi)
                            ? w * (-g / p + (1.0 - g) / (1.0 - p)) / wsum
                            : 0.0;
    }
    out.loss = acc / wsum;
    return out;
}

// ---------------------------------------------------------------------------
// Training: full-batch gradient descent with truncated-through-reset BPTT.
// ---------------------------------------------------------------------------
enum class LossKind { w_dice, w_ce };

struct ResetPolicy {
    enum class Kind { fixed_length, align_with_scan };
    Kind kind = Kind::fixed_length;
    int k = 1;

    static ResetPolicy fixed(int k) {
        if (k < 1) throw DomainError("reset policy: k must be >= 1");
        return {Kind::fixed_length, k};
    }
    static ResetPolicy align() { return {Kind::align_with_scan, 0}; }
};

struct TrainConfig {
    LossKind loss = LossKind::w_dice;
    double learning_rate = 0.2;
    int epochs = 40;
    ResetPolicy reset_policy = ResetPolicy::fixed(16);
    std::uint64_t seed = 1;
    double ce_weight_lambda = 4.0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw DomainError("train: learning_rate must be > 0");
        if (epochs < 1) throw DomainError("train: epochs must be >= 1");
        if (reset_policy.kind == ResetPolicy::Kind::fixed_length && reset_policy.k < 1)
            throw DomainError("train: fixed_length reset needs k >= 1");
    }
};

struct TrainSample {
    Tensor input;
    Tensor label;  // 1 x H x W
    int sweep_id = 0;
};

/// True at indices where the recurrent state is zeroed before the frame.
inline std::vector<bool> reset_flags(const ResetPolicy& rp, const std::vector<int>& sweep_ids) {
    std::vector<bool> flags(sweep_ids.size(), false);
    if (flags.empty()) return flags;
    flags[0] = true;
    for (std::size_t i = 1; i < sweep_ids.size(); ++i) {
        if (rp.kind == ResetPolicy::Kind::fixed_length)
            flags[i] = (i % static_cast<std::size_t>(rp.k)) == 0;
        else
            flags[i] = sweep_ids[i] != sweep_ids[i - 1];
    }
    return flags;
}

struct TrainTrace {
    std::vector<double> epoch_loss;
};

inline LossValue compute_loss(LossKind kind, const Tensor& pred, const Tensor& label,
                              double lambda) {
    return kind == LossKind::w_dice ? w_dice_loss(pred, label) : w_ce_loss(pred, label, lambda);
}

inline TrainTrace train(NetParams& params, const TrainConfig& cfg,
                        const std::vector<TrainSample>& samples) {
    cfg.validate();
    if (samples.empty()) throw DomainError("train: empty training set");
    const int h = samples[0].input.h, w = samples[0].input.w;
    for (const TrainSample& s : samples) {
        s.input.require_shape(params.spec.in_channels, h, w, "train input");
        s.label.require_shape(1, h, w, "train label");
    }
    std::vector<int> sweep_ids(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) sweep_ids[i] = samples[i].sweep_id;
    const std::vector<bool> resets = reset_flags(cfg.reset_policy, sweep_ids);

    NetParams grads = make_zero_params(params.spec);
    TrainTrace trace;
    const double n_frames = static_cast<double>(samples.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        grads.zero_all();
        double total_loss = 0.0;
        std::size_t start = 0;
        while (start < samples.size()) {
            std::size_t end = start + 1;
            while (end < samples.size() && !resets[end]) ++end;
            // forward the window
            const std::size_t len = end - start;
            std::vector<ForwardCache> caches(len);
            std::vector<Tensor> grad_preds(len);
            Tensor state = ConvGRUState::zeros(params.spec, h, w).hidden;
            for (std::size_t i = 0; i < len; ++i) {
                Tensor state_next;
                const Tensor pred =
                    unet_forward(params, samples[start + i].input, state, &state_next, &caches[i]);
                const LossValue lv =
                    compute_loss(cfg.loss, pred, samples[start + i].label, cfg.ce_weight_lambda);
                total_loss += lv.loss;
                grad_preds[i] = lv.grad;
                state = std::move(state_next);
            }
            // backward through the window, newest frame first
            Tensor grad_state = Tensor::zeros_like(state);
            for (std::size_t i = len; i-- > 0;) {
                Tensor grad_state_prev;
                unet_backward(params, caches[i], grad_preds[i], grad_state, grads,
                              &grad_state_prev);
                grad_state = std::move(grad_state_prev);
            }
            start = end;
        }
        const double mean_loss = total_loss / n_frames;
        if (!std::isfinite(mean_loss)) throw TrainingError("train: loss diverged", epoch);
        trace.epoch_loss.push_back(mean_loss);
        // one full-batch update per epoch
        std::vector<std::vector<double>*> pa, ga;
        params.for_each_array(
            [&](const std::string&, std::vector<double>& a, const std::string&) { pa.push_back(&a); });
        grads.for_each_array(
            [&](const std::string&, std::vector<double>& a, const std::string&) { ga.push_back(&a); });
        for (std::size_t i = 0; i < pa.size(); ++i)
            for (std::size_t j = 0; j < pa[i]->size(); ++j)
                (*pa[i])[j] -= cfg.learning_rate * (*ga[i])[j] / n_frames;
    }
    return trace;
}

inline std::vector<Tensor> infer(const NetParams& params, const std::vector<Tensor>& inputs,
                                 const std::vector<int>& sweep_ids, const ResetPolicy& rp) {
    if (inputs.size() != sweep_ids.size()) throw DomainError("infer: sweep id count mismatch");
    std::vector<Tensor> preds(inputs.size());
    if (inputs.empty()) return preds;
    const std::vector<bool> resets = reset_flags(rp, sweep_ids);
    Tensor state = ConvGRUState::zeros(params.spec, inputs[0].h, inputs[0].w).hidden;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (resets[i]) std::fill(state.v.begin(), state.v.end(), 0.0);
        Tensor state_next;
        preds[i] = unet_forward(params, inputs[i], state, &state_next, nullptr);
        state = std::move(state_next);
    }
    return preds;
}

// ---------------------------------------------------------------------------
// Serialization: little-endian blob with magic "SSUN1" + int32 spec fields +
// float64 arrays in visitation order; companion manifest lists name/offset/shape.
// ---------------------------------------------------------------------------
inline void save_params(const std::filesystem::path& blob_path,
                        const std::filesystem::path& manifest_path, const NetParams& p) {
    std::ofstream f(blob_path, std::ios::binary);
    if (!f) throw DomainError("cannot open for writing: " + blob_path.string());
    f.write("SSUN1", 5);
    const std::int32_t fields[6] = {p.spec.in_channels,
                                    p.spec.base_channels,
                                    p.spec.depth,
                                    p.spec.use_convgru ? 1 : 0,
                                    p.spec.use_spatial_attention ? 1 : 0,
                                    p.spec.use_channel_attention ? 1 : 0};
    f.write(reinterpret_cast<const char*>(fields), sizeof(fields));
    std::ofstream mf(manifest_path);
    if (!mf) throw DomainError("cannot open for writing: " + manifest_path.string());
    std::size_t offset = 5 + sizeof(fields);
    p.for_each_array([&](const std::string& name, const std::vector<double>& a,
                         const std::string& shape) {
        f.write(reinterpret_cast<const char*>(a.data()),
                static_cast<std::streamsize>(a.size() * sizeof(double)));
        mf << name << " " << offset << " " << shape << "\n";
        offset += a.size() * sizeof(double);
    });
    if (!f || !mf) throw DomainError("write failed: " + blob_path.string());
}

inline NetParams load_params(const std::filesystem::path& blob_path) {
    std::ifstream f(blob_path, std::ios::binary);
    if (!f) throw DomainError("cannot open: " + blob_path.string());
    char magic[5];
    f.read(magic, 5);
    if (!f || std::string(magic, 5) != "SSUN1")
        throw DomainError("not a parameter blob: " + blob_path.string());
    std::int32_t fields[6];
    f.read(reinterpret_cast<char*>(fields), sizeof(fields));
    if (!f) throw DomainError("truncated parameter blob header: " + blob_path.string());
    UNetSpec spec;
    spec.in_channels = fields[0];
    spec.base_channels = fields[1];
    spec.depth = fields[2];
    spec.use_convgru = fields[3] != 0;
    spec.use_spatial_attention = fields[4] != 0;
    spec.use_channel_attention = fields[5] != 0;
    NetParams p = make_zero_params(spec);
    p.for_each_array([&](const std::string& name, std::vector<double>& a, const std::string&) {
        f.read(reinterpret_cast<char*>(a.data()),
               static_cast<std::streamsize>(a.size() * sizeof(double)));
        if (!f) throw DomainError("truncated parameter blob at array " + name);
    });
    return p;
}

}  // namespace spinesurf
