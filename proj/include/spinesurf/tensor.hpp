#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spinesurf/common.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// Dense (channels, height, width) tensor, row-major.
// ---------------------------------------------------------------------------
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.c, t.h, t.w); }

    double& at(int ci, int y, int x) {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    double at(int ci, int y, int x) const {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    std::size_t size() const { return v.size(); }
    int plane() const { return h * w; }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

    void require_shape(int c_, int h_, int w_, const char* what) const {
        if (c != c_ || h != h_ || w != w_)
            throw DomainError(std::string(what) + ": tensor shape mismatch");
    }
    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

/// Convolution kernel weights, [out][in][ky][kx] row-major, square kernel.
struct ConvWeight {
    int out_c = 0, in_c = 0, k = 0;
    std::vector<double> v;

    ConvWeight() = default;
    ConvWeight(int o, int i, int kk)
        : out_c(o), in_c(i), k(kk), v(static_cast<std::size_t>(o) * i * kk * kk, 0.0) {}

    double& at(int o, int i, int ky, int kx) {
        return v[((static_cast<std::size_t>(o) * in_c + i) * k + ky) * k + kx];
    }
    std::size_t size() const { return v.size(); }
};

namespace detail {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// cols(ci*k*k + ky*k + kx, y*w + x) = in(ci, y+ky-pad, x+kx-pad), zero-padded.
inline Eigen::MatrixXd im2col(const Tensor& in, int k, int pad) {
    const int hw = in.h * in.w;
    Eigen::MatrixXd cols(in.c * k * k, hw);
    for (int ci = 0; ci < in.c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int row = (ci * k + ky) * k + kx;
                for (int y = 0; y < in.h; ++y) {
                    const int sy = y + ky - pad;
                    for (int x = 0; x < in.w; ++x) {
                        const int sx = x + kx - pad;
                        cols(row, y * in.w + x) =
                            (sy >= 0 && sy < in.h && sx >= 0 && sx < in.w) ? in.at(ci, sy, sx) : 0.0;
                    }
                }
            }
    return cols;
}

inline void col2im_add(const Eigen::MatrixXd& cols, int k, int pad, Tensor& grad_in) {
    for (int ci = 0; ci < grad_in.c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int row = (ci * k + ky) * k + kx;
                for (int y = 0; y < grad_in.h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= grad_in.h) continue;
                    for (int x = 0; x < grad_in.w; ++x) {
                        const int sx = x + kx - pad;
                        if (sx < 0 || sx >= grad_in.w) continue;
                        grad_in.at(ci, sy, sx) += cols(row, y * grad_in.w + x);
                    }
                }
            }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (stride 1, zero padding k/2 so spatial dims are preserved).
// ---------------------------------------------------------------------------
inline Tensor conv2d(const Tensor& in, const ConvWeight& w, const std::vector<double>& bias) {
    if (in.c != w.in_c) throw DomainError("conv2d: channel mismatch");
    if (static_cast<int>(bias.size()) != w.out_c) throw DomainError("conv2d: bias size mismatch");
    const int pad = w.k / 2;
    const Eigen::MatrixXd cols = detail::im2col(in, w.k, pad);
    Tensor out(w.out_c, in.h, in.w);
    Eigen::Map<const detail::MatRM> wmat(w.v.data(), w.out_c, w.in_c * w.k * w.k);
    Eigen::Map<detail::MatRM> omat(out.v.data(), w.out_c, in.h * in.w);
    omat.noalias() = wmat * cols;
    for (int o = 0; o < w.out_c; ++o) omat.row(o).array() += bias[o];
    return out;
}

/// Accumulates input/weight/bias gradients (callers zero-initialize).
inline void conv2d_backward(const Tensor& in, const ConvWeight& w, const Tensor& grad_out,
                            Tensor* grad_in, ConvWeight& grad_w, std::vector<double>& grad_b) {
    const int pad = w.k / 2;
    Eigen::Map<const detail::MatRM> gmat(grad_out.v.data(), w.out_c, in.h * in.w);
    const Eigen::MatrixXd cols = detail::im2col(in, w.k, pad);
    Eigen::Map<detail::MatRM> gwmat(grad_w.v.data(), w.out_c, w.in_c * w.k * w.k);
    gwmat.noalias() += gmat * cols.transpose();
    for (int o = 0; o < w.out_c; ++o) grad_b[o] += gmat.row(o).sum();
    if (grad_in) {
        Eigen::Map<const detail::MatRM> wmat(w.v.data(), w.out_c, w.in_c * w.k * w.k);
        const Eigen::MatrixXd gcols = wmat.transpose() * gmat;
        detail::col2im_add(gcols, w.k, pad, *grad_in);
    }
}

// ---------------------------------------------------------------------------
// Instance normalization (per channel over H*W, learned affine).
// ---------------------------------------------------------------------------
constexpr double kInstanceNormEps = 1e-5;

struct InstanceNormCache {
    std::vector<double> inv_std;  // per channel
    Tensor xhat;
};

inline Tensor instance_norm(const Tensor& in, const std::vector<double>& gamma,
                            const std::vector<double>& beta, InstanceNormCache* cache) {
    if (static_cast<int>(gamma.size()) != in.c || static_cast<int>(beta.size()) != in.c)
        throw DomainError("instance_norm: affine size mismatch");
    Tensor out(in.c, in.h, in.w);
    const int n = in.plane();
    if (cache) {
        cache->inv_std.assign(in.c, 0.0);
        cache->xhat = Tensor(in.c, in.h, in.w);
    }
    for (int ci = 0; ci < in.c; ++ci) {
        const double* src = in.v.data() + static_cast<std::size_t>(ci) * n;
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += src[i];
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= n;
        const double inv_std = 1.0 / std::sqrt(var + kInstanceNormEps);
        double* dst = out.v.data() + static_cast<std::size_t>(ci) * n;
        double* xh = cache ? cache->xhat.v.data() + static_cast<std::size_t>(ci) * n : nullptr;
        for (int i = 0; i < n; ++i) {
            const double xhat = (src[i] - mean) * inv_std;
            if (xh) xh[i] = xhat;
            dst[i] = gamma[ci] * xhat + beta[ci];
        }
        if (cache) cache->inv_std[ci] = inv_std;
    }
    return out;
}

inline void instance_norm_backward(const InstanceNormCache& cache, const std::vector<double>& gamma,
                                   const Tensor& grad_out, Tensor& grad_in,
                                   std::vector<double>& grad_gamma, std::vector<double>& grad_beta) {
    const int n = cache.xhat.plane();
    for (int ci = 0; ci < cache.xhat.c; ++ci) {
        const double* xh = cache.xhat.v.data() + static_cast<std::size_t>(ci) * n;
        const double* go = grad_out.v.data() + static_cast<std::size_t>(ci) * n;
        double* gi = grad_in.v.data() + static_cast<std::size_t>(ci) * n;
        double sum_go = 0.0, sum_go_xh = 0.0;
        for (int i = 0; i < n; ++i) {
            sum_go += go[i];
            sum_go_xh += go[i] * xh[i];
        }
        grad_gamma[ci] += sum_go_xh;
        grad_beta[ci] += sum_go;
        const double scale = gamma[ci] * cache.inv_std[ci];
        const double mean_go = sum_go / n;
        const double mean_go_xh = sum_go_xh / n;
        for (int i = 0; i < n; ++i) gi[i] += scale * (go[i] - mean_go - xh[i] * mean_go_xh);
    }
}

// ---------------------------------------------------------------------------
// Pointwise activations.
// ---------------------------------------------------------------------------
inline Tensor relu(const Tensor& in) {
    Tensor out = in;
    for (double& x : out.v) x = std::max(x, 0.0);
    return out;
}

/// grad through relu using the activation output as the mask.
inline void relu_backward(const Tensor& activated, const Tensor& grad_out, Tensor& grad_in) {
    for (std::size_t i = 0; i < activated.v.size(); ++i)
        grad_in.v[i] += activated.v[i] > 0.0 ? grad_out.v[i] : 0.0;
}

inline Tensor sigmoid(const Tensor& in) {
    Tensor out = in;
    for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    return out;
}

inline void sigmoid_backward(const Tensor& activated, const Tensor& grad_out, Tensor& grad_in) {
    for (std::size_t i = 0; i < activated.v.size(); ++i)
        grad_in.v[i] += activated.v[i] * (1.0 - activated.v[i]) * grad_out.v[i];
}

inline Tensor tanh_map(const Tensor& in) {
    Tensor out = in;
    for (double& x : out.v) x = std::tanh(x);
    return out;
}

inline void tanh_backward(const Tensor& activated, const Tensor& grad_out, Tensor& grad_in) {
    for (std::size_t i = 0; i < activated.v.size(); ++i)
        grad_in.v[i] += (1.0 - activated.v[i] * activated.v[i]) * grad_out.v[i];
}

// ---------------------------------------------------------------------------
// 2x2 max pooling (stride 2) with argmax cache; first maximum wins ties.
// ---------------------------------------------------------------------------
struct MaxPoolCache {
    std::vector<std::int32_t> argmax;  // flat index into the input tensor
    int in_c = 0, in_h = 0, in_w = 0;
};

inline Tensor maxpool2(const Tensor& in, MaxPoolCache* cache) {
    if (in.h % 2 != 0 || in.w % 2 != 0) throw DomainError("maxpool2: odd spatial dims");
    Tensor out(in.c, in.h / 2, in.w / 2);
    if (cache) {
        cache->argmax.assign(out.size(), 0);
        cache->in_c = in.c;
        cache->in_h = in.h;
        cache->in_w = in.w;
    }
    std::size_t oi = 0;
    for (int ci = 0; ci < in.c; ++ci)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x, ++oi) {
                double best = -std::numeric_limits<double>::infinity();
                std::int32_t best_idx = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t idx =
                            (static_cast<std::size_t>(ci) * in.h + 2 * y + dy) * in.w + 2 * x + dx;
                        if (in.v[idx] > best) {
                            best = in.v[idx];
                            best_idx = static_cast<std::int32_t>(idx);
                        }
                    }
                out.v[oi] = best;
                if (cache) cache->argmax[oi] = best_idx;
            }
    return out;
}

inline void maxpool2_backward(const MaxPoolCache& cache, const Tensor& grad_out, Tensor& grad_in) {
    for (std::size_t i = 0; i < grad_out.v.size(); ++i)
        grad_in.v[cache.argmax[i]] += grad_out.v[i];
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling.
// ---------------------------------------------------------------------------
inline Tensor upsample_nearest2(const Tensor& in) {
    Tensor out(in.c, in.h * 2, in.w * 2);
    for (int ci = 0; ci < in.c; ++ci)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) out.at(ci, y, x) = in.at(ci, y / 2, x / 2);
    return out;
}

inline void upsample_nearest2_backward(const Tensor& grad_out, Tensor& grad_in) {
    for (int ci = 0; ci < grad_in.c; ++ci)
        for (int y = 0; y < grad_out.h; ++y)
            for (int x = 0; x < grad_out.w; ++x)
                grad_in.at(ci, y / 2, x / 2) += grad_out.at(ci, y, x);
}

// ---------------------------------------------------------------------------
// Channel concatenation.
// ---------------------------------------------------------------------------
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.h != b.h || a.w != b.w) throw DomainError("concat_channels: spatial mismatch");
    Tensor out(a.c + b.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
    return out;
}

inline void split_channels_backward(const Tensor& grad_cat, Tensor& grad_a, Tensor& grad_b) {
    for (std::size_t i = 0; i < grad_a.v.size(); ++i) grad_a.v[i] += grad_cat.v[i];
    for (std::size_t i = 0; i < grad_b.v.size(); ++i) grad_b.v[i] += grad_cat.v[grad_a.v.size() + i];
}

}  // namespace spinesurf
