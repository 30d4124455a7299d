#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "spinesurf/common.hpp"
#include "spinesurf/fft.hpp"
#include "spinesurf/geometry.hpp"

namespace spinesurf {

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------
struct LogGaborParams {
    int n_scales = 3;
    int n_orientations = 6;
    double min_wavelength_px = 6.0;
    double scale_mult = 2.1;
    double sigma_onf = 0.55;
    double d_theta_sigma = 1.0 / 1.2;  // angular sigma / orientation spacing
    double noise_t = 2.0;              // noise threshold multiplier; 0 disables
    double epsilon = 1e-8;

    void validate() const {
        if (n_scales < 1 || n_orientations < 1) throw DomainError("log-gabor: counts must be >= 1");
        if (min_wavelength_px < 2.0) throw DomainError("log-gabor: min_wavelength_px must be >= 2");
        if (!(sigma_onf > 0.0 && sigma_onf < 1.0)) throw DomainError("log-gabor: sigma_onf in (0,1)");
        if (!(scale_mult > 1.0)) throw DomainError("log-gabor: scale_mult must be > 1");
        if (!(d_theta_sigma > 0.0)) throw DomainError("log-gabor: d_theta_sigma must be > 0");
        if (!(epsilon > 0.0)) throw DomainError("log-gabor: epsilon must be > 0");
        if (noise_t < 0.0) throw DomainError("log-gabor: noise_t must be >= 0");
    }
};

struct ConfidenceParams {
    double alpha = 2.0;    // depth attenuation exponent
    double beta = 90.0;    // intensity contrast weight
    double gamma = 0.05;   // horizontal / diagonal penalty
    // Tight by default: on poorly conditioned weight graphs the solution error
    // runs orders of magnitude above the preconditioned residual.
    double solver_tol = 1e-12;
    int max_iters = 20000;

    void validate() const {
        if (alpha < 0.0) throw DomainError("confidence: alpha must be >= 0");
        if (!(beta > 0.0)) throw DomainError("confidence: beta must be > 0");
        if (gamma < 0.0) throw DomainError("confidence: gamma must be >= 0");
        if (!(solver_tol > 0.0)) throw DomainError("confidence: solver_tol must be > 0");
        if (max_iters < 1) throw DomainError("confidence: max_iters must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Log-Gabor filter bank (frequency domain, single-sided in orientation so the
// inverse transform yields an even/odd quadrature pair).
// ---------------------------------------------------------------------------
struct LogGaborBank {
    int rows = 0, cols = 0;
    int n_scales = 0, n_orientations = 0;
    std::vector<std::vector<double>> filters;  // [s * n_orientations + o][row * cols + col]

    const std::vector<double>& filter(int scale, int orient) const {
        return filters[static_cast<std::size_t>(scale) * n_orientations + orient];
    }
};

inline LogGaborBank log_gabor_bank(int rows, int cols, const LogGaborParams& p) {
    p.validate();
    if (rows < 4 || cols < 4) throw DomainError("log_gabor_bank: lattice must be at least 4x4");
    LogGaborBank bank;
    bank.rows = rows;
    bank.cols = cols;
    bank.n_scales = p.n_scales;
    bank.n_orientations = p.n_orientations;

    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    std::vector<double> radius(n), angle(n);
    for (int r = 0; r < rows; ++r) {
        const double fy = (r <= rows / 2 ? r : r - rows) / static_cast<double>(rows);
        for (int c = 0; c < cols; ++c) {
            const double fx = (c <= cols / 2 ? c : c - cols) / static_cast<double>(cols);
            radius[static_cast<std::size_t>(r) * cols + c] = std::hypot(fx, fy);
            angle[static_cast<std::size_t>(r) * cols + c] = std::atan2(fy, fx);
        }
    }
    radius[0] = 1.0;  // placeholder; the DC bin is zeroed below

    const double log_sigma = std::log(p.sigma_onf);
    const double spacing = M_PI / p.n_orientations;
    const double theta_sigma = p.d_theta_sigma * spacing;

    bank.filters.reserve(static_cast<std::size_t>(p.n_scales) * p.n_orientations);
    for (int s = 0; s < p.n_scales; ++s) {
        const double f0 = 1.0 / (p.min_wavelength_px * std::pow(p.scale_mult, s));
        std::vector<double> radial(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double lr = std::log(radius[i] / f0);
            radial[i] = std::exp(-(lr * lr) / (2.0 * log_sigma * log_sigma));
        }
        radial[0] = 0.0;
        for (int o = 0; o < p.n_orientations; ++o) {
            const double theta = o * spacing;
            const double ct = std::cos(theta), st = std::sin(theta);
            std::vector<double> filt(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double ds = std::sin(angle[i]) * ct - std::cos(angle[i]) * st;
                const double dc = std::cos(angle[i]) * ct + std::sin(angle[i]) * st;
                const double dtheta = std::abs(std::atan2(ds, dc));
                filt[i] = radial[i] * std::exp(-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma));
            }
            filt[0] = 0.0;
            bank.filters.push_back(std::move(filt));
        }
    }
    return bank;
}

namespace detail {

/// Mirror-extends `img` (rows x cols) onto a centered padded lattice.
inline std::vector<Complex> mirror_pad(const std::vector<double>& img, int rows, int cols,
                                       int padded_rows, int padded_cols) {
    const auto reflect = [](int idx, int size) {
        const int period = 2 * size;
        int m = idx % period;
        if (m < 0) m += period;
        return m < size ? m : period - 1 - m;
    };
    const int off_r = (padded_rows - rows) / 2;
    const int off_c = (padded_cols - cols) / 2;
    std::vector<Complex> out(static_cast<std::size_t>(padded_rows) * padded_cols);
    for (int r = 0; r < padded_rows; ++r) {
        const int sr = reflect(r - off_r, rows);
        for (int c = 0; c < padded_cols; ++c) {
            const int sc = reflect(c - off_c, cols);
            out[static_cast<std::size_t>(r) * padded_cols + c] =
                Complex(img[static_cast<std::size_t>(sr) * cols + sc], 0.0);
        }
    }
    return out;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
        m = 0.5 * (m + v[mid - 1]);
    }
    return m;
}

}  // namespace detail

/// Phase symmetry on the polar lattice (rows = samples, cols = rays):
/// PS = sum_{s,o} max(|even| - |odd| - T_so, 0) / (sum_{s,o} sqrt(even^2+odd^2) + eps).
inline PolarImage phase_symmetry(const PolarImage& img, const LogGaborParams& p) {
    img.validate();
    p.validate();
    const int rows = img.geometry.n_samples;
    const int cols = img.geometry.n_rays;
    // Pad to at least twice the extent: the mirror extension must actually
    // surround the image, or the coarsest filters wrap around the FFT period
    // and plant spurious symmetry peaks.
    const int pr = next_pow2(std::max(2 * rows, 8));
    const int pc = next_pow2(std::max(2 * cols, 8));
    const int off_r = (pr - rows) / 2;
    const int off_c = (pc - cols) / 2;

    std::vector<Complex> spectrum = detail::mirror_pad(img.data, rows, cols, pr, pc);
    fft2(spectrum, pr, pc);

    const LogGaborBank bank = log_gabor_bank(pr, pc, p);
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    std::vector<double> numer(n, 0.0), denom(n, 0.0);

    // Per-(scale,orientation) quadrature amplitudes, cropped to the source lattice.
    std::vector<double> even(n), odd(n);
    std::vector<Complex> response(spectrum.size());

    for (int o = 0; o < p.n_orientations; ++o) {
        for (int s = 0; s < p.n_scales; ++s) {
            const std::vector<double>& filt = bank.filter(s, o);
            for (std::size_t i = 0; i < spectrum.size(); ++i) response[i] = spectrum[i] * filt[i];
            ifft2(response, pr, pc);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) {
                    const Complex v = response[static_cast<std::size_t>(r + off_r) * pc + (c + off_c)];
                    even[static_cast<std::size_t>(r) * cols + c] = v.real();
                    odd[static_cast<std::size_t>(r) * cols + c] = v.imag();
                }
            // Noise amplitude of this filter, Rayleigh-estimated from its own
            // response: sigma = median(amplitude)/sqrt(ln 4), mean =
            // sigma*sqrt(pi/2). Gating each filter against its own floor also
            // suppresses coarse-scale sidelobes, which would otherwise tie
            // with the true ridge after normalization.
            double threshold = 0.0;
            if (p.noise_t > 0.0) {
                std::vector<double> amps(n);
                for (std::size_t i = 0; i < n; ++i) amps[i] = std::hypot(even[i], odd[i]);
                const double sigma = detail::median_of(std::move(amps)) / std::sqrt(std::log(4.0));
                threshold = p.noise_t * sigma * std::sqrt(M_PI / 2.0);
            }
            for (std::size_t i = 0; i < n; ++i) {
                numer[i] += std::max(std::abs(even[i]) - std::abs(odd[i]) - threshold, 0.0);
                denom[i] += std::hypot(even[i], odd[i]);
            }
        }
    }

    PolarImage out;
    out.geometry = img.geometry;
    out.data.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.data[i] = std::clamp(numer[i] / (denom[i] + p.epsilon), 0.0, 1.0);
    return out;
}

// ---------------------------------------------------------------------------
// Random-walk confidence map: Dirichlet problem on the 8-connected lattice,
// confidence 1 at the transducer-side row and 0 at the deepest row.
// ---------------------------------------------------------------------------
struct ConfidenceSolveInfo {
    double residual = 0.0;
    int iterations = 0;
};

namespace detail {

struct ConfidenceSystem {
    int rows = 0, cols = 0;           // full lattice
    int interior_rows = 0;            // rows 1 .. rows-2
    // Edge weights between node (r,c) and its E / S / SE / SW neighbors.
    std::vector<double> w_e, w_s, w_se, w_sw;

    std::size_t at(int r, int c) const { return static_cast<std::size_t>(r) * cols + c; }
};

inline ConfidenceSystem confidence_weights(const PolarImage& img, const ConfidenceParams& p) {
    ConfidenceSystem sys;
    sys.rows = img.geometry.n_samples;
    sys.cols = img.geometry.n_rays;
    sys.interior_rows = sys.rows - 2;
    const std::size_t n = static_cast<std::size_t>(sys.rows) * sys.cols;

    std::vector<double> g(n);
    for (int r = 0; r < sys.rows; ++r) {
        const double depth = sys.rows > 1 ? static_cast<double>(r) / (sys.rows - 1) : 0.0;
        const double atten = std::exp(-p.alpha * depth);
        for (int c = 0; c < sys.cols; ++c) g[sys.at(r, c)] = img.data[sys.at(r, c)] * atten;
    }

    const double pen_h = p.gamma;
    const double pen_d = p.gamma * std::sqrt(2.0);
    const auto weight = [&](std::size_t i, std::size_t j, double pen) {
        return std::exp(-p.beta * (std::abs(g[i] - g[j]) + pen));
    };
    sys.w_e.assign(n, 0.0);
    sys.w_s.assign(n, 0.0);
    sys.w_se.assign(n, 0.0);
    sys.w_sw.assign(n, 0.0);
    for (int r = 0; r < sys.rows; ++r)
        for (int c = 0; c < sys.cols; ++c) {
            const std::size_t i = sys.at(r, c);
            if (c + 1 < sys.cols) sys.w_e[i] = weight(i, sys.at(r, c + 1), pen_h);
            if (r + 1 < sys.rows) {
                sys.w_s[i] = weight(i, sys.at(r + 1, c), 0.0);
                if (c + 1 < sys.cols) sys.w_se[i] = weight(i, sys.at(r + 1, c + 1), pen_d);
                if (c - 1 >= 0) sys.w_sw[i] = weight(i, sys.at(r + 1, c - 1), pen_d);
            }
        }
    return sys;
}

/// Accumulates, for node (r,c), the weighted sum over its 8 neighbors of
/// values[j] (taking boundary rows from `top`/`bottom` constants) and the
/// total weight. values spans interior rows only (row 1 maps to index 0).
template <typename Fn>
inline void for_each_neighbor(const ConfidenceSystem& sys, int r, int c, Fn&& fn) {
    const std::size_t i = sys.at(r, c);
    if (c + 1 < sys.cols) fn(r, c + 1, sys.w_e[i]);
    if (c - 1 >= 0) fn(r, c - 1, sys.w_e[sys.at(r, c - 1)]);
    if (r + 1 < sys.rows) {
        fn(r + 1, c, sys.w_s[i]);
        if (c + 1 < sys.cols) fn(r + 1, c + 1, sys.w_se[i]);
        if (c - 1 >= 0) fn(r + 1, c - 1, sys.w_sw[i]);
    }
    if (r - 1 >= 0) {
        fn(r - 1, c, sys.w_s[sys.at(r - 1, c)]);
        if (c - 1 >= 0) fn(r - 1, c - 1, sys.w_se[sys.at(r - 1, c - 1)]);
        if (c + 1 < sys.cols) fn(r - 1, c + 1, sys.w_sw[sys.at(r - 1, c + 1)]);
    }
}

}  // namespace detail

/// Dense direct solve of the same Dirichlet system; the oracle the iterative
/// solver is checked against. Limited to small lattices.
inline PolarImage confidence_map_dense(const PolarImage& img, const ConfidenceParams& p) {
    img.validate();
    p.validate();
    const int rows = img.geometry.n_samples;
    const int cols = img.geometry.n_rays;
    if (rows > 64 || cols > 64) throw DomainError("dense confidence solve limited to 64x64");
    const detail::ConfidenceSystem sys = detail::confidence_weights(img, p);

    PolarImage out;
    out.geometry = img.geometry;
    out.data.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int c = 0; c < cols; ++c) out.data[sys.at(0, c)] = 1.0;
    if (rows <= 2) return out;

    const int n = (rows - 2) * cols;
    const auto idx = [cols](int r, int c) { return (r - 1) * cols + c; };
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (int r = 1; r < rows - 1; ++r)
        for (int c = 0; c < cols; ++c) {
            const int row = idx(r, c);
            detail::for_each_neighbor(sys, r, c, [&](int nr, int nc, double w) {
                A(row, row) += w;
                if (nr == 0)
                    b(row) += w;  // top boundary fixed to 1
                else if (nr == rows - 1)
                    ;             // bottom boundary fixed to 0
                else
                    A(row, idx(nr, nc)) -= w;
            });
        }
    const Eigen::VectorXd x = A.ldlt().solve(b);
    for (int r = 1; r < rows - 1; ++r)
        for (int c = 0; c < cols; ++c)
            out.data[sys.at(r, c)] = std::clamp(x(idx(r, c)), 0.0, 1.0);
    return out;
}

/// Jacobi-preconditioned conjugate gradient on the reduced interior system.
inline PolarImage confidence_map(const PolarImage& img, const ConfidenceParams& p,
                                 ConfidenceSolveInfo* info = nullptr) {
    img.validate();
    p.validate();
    for (double v : img.data)
        if (v < 0.0) throw DomainError("confidence_map: intensities must be nonnegative");
    const int rows = img.geometry.n_samples;
    const int cols = img.geometry.n_rays;
    const detail::ConfidenceSystem sys = detail::confidence_weights(img, p);

    PolarImage out;
    out.geometry = img.geometry;
    out.data.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int c = 0; c < cols; ++c) out.data[sys.at(0, c)] = 1.0;
    if (info) *info = {};
    if (rows <= 2) return out;

    const int n = (rows - 2) * cols;
    const auto idx = [cols](int r, int c) { return (r - 1) * cols + c; };
    std::vector<double> diag(n, 0.0), b(n, 0.0);
    for (int r = 1; r < rows - 1; ++r)
        for (int c = 0; c < cols; ++c) {
            const int row = idx(r, c);
            detail::for_each_neighbor(sys, r, c, [&](int nr, int, double w) {
                diag[row] += w;
                if (nr == 0) b[row] += w;
            });
        }

    const auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
        for (int r = 1; r < rows - 1; ++r)
            for (int c = 0; c < cols; ++c) {
                const int row = idx(r, c);
                double acc = diag[row] * x[row];
                detail::for_each_neighbor(sys, r, c, [&](int nr, int nc, double w) {
                    if (nr != 0 && nr != rows - 1) acc -= w * x[idx(nr, nc)];
                });
                y[row] = acc;
            }
    };
    const auto dot = [n](const std::vector<double>& a, const std::vector<double>& c) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += a[i] * c[i];
        return s;
    };

    std::vector<double> x(n, 0.0), resid(b), z(n), pvec(n), q(n);
    const double b_norm = std::sqrt(dot(b, b));
    double final_residual = 0.0;
    int iterations = 0;
    if (b_norm > 0.0) {
        for (int i = 0; i < n; ++i) z[i] = resid[i] / diag[i];
        pvec = z;
        double rz = dot(resid, z);
        bool converged = false;
        for (int it = 0; it < p.max_iters; ++it) {
            apply(pvec, q);
            const double alpha = rz / dot(pvec, q);
            for (int i = 0; i < n; ++i) {
                x[i] += alpha * pvec[i];
                resid[i] -= alpha * q[i];
            }
            iterations = it + 1;
            final_residual = std::sqrt(dot(resid, resid)) / b_norm;
            if (final_residual <= p.solver_tol) {
                converged = true;
                break;
            }
            for (int i = 0; i < n; ++i) z[i] = resid[i] / diag[i];
            const double rz_next = dot(resid, z);
            const double beta = rz_next / rz;
            rz = rz_next;
            for (int i = 0; i < n; ++i) pvec[i] = z[i] + beta * pvec[i];
        }
        if (!converged)
            throw ConvergenceError("confidence_map: CG failed to reach tolerance", final_residual);
    }
    for (int r = 1; r < rows - 1; ++r)
        for (int c = 0; c < cols; ++c)
            out.data[sys.at(r, c)] = std::clamp(x[idx(r, c)], 0.0, 1.0);
    if (info) {
        info->residual = final_residual;
        info->iterations = iterations;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shadow boundary: Sobel magnitude -> relative threshold -> Gaussian blur.
// ---------------------------------------------------------------------------
inline PolarImage shadow_boundary(const PolarImage& conf, double sobel_threshold,
                                  int blur_kernel_px) {
    conf.validate();
    if (!(sobel_threshold > 0.0 && sobel_threshold < 1.0))
        throw DomainError("shadow_boundary: sobel_threshold in (0,1)");
    if (blur_kernel_px < 1) throw DomainError("shadow_boundary: blur_kernel_px must be >= 1");
    for (double v : conf.data)
        if (v < 0.0 || v > 1.0) throw DomainError("shadow_boundary: confidence values must be in [0,1]");
    const int rows = conf.geometry.n_samples;
    const int cols = conf.geometry.n_rays;
    const auto clamp_r = [rows](int r) { return std::clamp(r, 0, rows - 1); };
    const auto clamp_c = [cols](int c) { return std::clamp(c, 0, cols - 1); };
    const auto pix = [&](int r, int c) {
        return conf.data[static_cast<std::size_t>(clamp_r(r)) * cols + clamp_c(c)];
    };

    std::vector<double> mag(conf.data.size());
    double max_mag = 0.0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double gx = (pix(r - 1, c + 1) + 2.0 * pix(r, c + 1) + pix(r + 1, c + 1)) -
                              (pix(r - 1, c - 1) + 2.0 * pix(r, c - 1) + pix(r + 1, c - 1));
            const double gy = (pix(r + 1, c - 1) + 2.0 * pix(r + 1, c) + pix(r + 1, c + 1)) -
                              (pix(r - 1, c - 1) + 2.0 * pix(r - 1, c) + pix(r - 1, c + 1));
            const double m = std::hypot(gx, gy);
            mag[static_cast<std::size_t>(r) * cols + c] = m;
            max_mag = std::max(max_mag, m);
        }

    PolarImage out;
    out.geometry = conf.geometry;
    out.data.assign(conf.data.size(), 0.0);
    if (max_mag <= 0.0) return out;

    std::vector<double> binary(conf.data.size());
    for (std::size_t i = 0; i < mag.size(); ++i)
        binary[i] = mag[i] >= sobel_threshold * max_mag ? 1.0 : 0.0;

    // Separable Gaussian, sigma = kernel/4, taps centered on the kernel span.
    const double sigma = blur_kernel_px / 4.0;
    std::vector<double> kernel(blur_kernel_px);
    double ksum = 0.0;
    for (int i = 0; i < blur_kernel_px; ++i) {
        const double t = i - (blur_kernel_px - 1) / 2.0;
        kernel[i] = std::exp(-(t * t) / (2.0 * sigma * sigma));
        ksum += kernel[i];
    }
    for (double& k : kernel) k /= ksum;
    const int shift = blur_kernel_px / 2;

    std::vector<double> tmp(conf.data.size(), 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int i = 0; i < blur_kernel_px; ++i)
                acc += kernel[i] * binary[static_cast<std::size_t>(r) * cols + clamp_c(c + i - shift)];
            tmp[static_cast<std::size_t>(r) * cols + c] = acc;
        }
    double out_max = 0.0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int i = 0; i < blur_kernel_px; ++i)
                acc += kernel[i] * tmp[static_cast<std::size_t>(clamp_r(r + i - shift)) * cols + c];
            out.data[static_cast<std::size_t>(r) * cols + c] = acc;
            out_max = std::max(out_max, acc);
        }
    if (out_max > 0.0)
        for (double& v : out.data) v = std::clamp(v / out_max, 0.0, 1.0);
    return out;
}

inline PolarImage aggregate(const PolarImage& ps, const PolarImage& shadow) {
    if (!(ps.geometry == shadow.geometry)) throw DomainError("aggregate: lattice mismatch");
    PolarImage out;
    out.geometry = ps.geometry;
    out.data.resize(ps.data.size());
    for (std::size_t i = 0; i < ps.data.size(); ++i) out.data[i] = ps.data[i] * shadow.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// Full per-frame pipeline on a scan-converted B-mode image.
// ---------------------------------------------------------------------------
inline CartesianImage feature_pipeline(const CartesianImage& bmode, const ImageGeometry& geo,
                                       const LogGaborParams& lg, const ConfidenceParams& cp,
                                       double sobel_threshold = 0.3, int blur_kernel_px = 6,
                                       ConfidenceSolveInfo* info = nullptr) {
    const PolarImage polar = cartesian_to_polar(bmode, geo);
    const PolarImage ps = phase_symmetry(polar, lg);
    const PolarImage conf = confidence_map(polar, cp, info);
    const PolarImage shadow = shadow_boundary(conf, sobel_threshold, blur_kernel_px);
    PolarImage agg = aggregate(ps, shadow);
    // Rescale to a per-frame peak of 1, mirroring the B-mode channel's
    // per-frame normalization: the raw ridge-times-shadow product shrinks
    // with noise while its spatial structure stays informative.
    double agg_max = 0.0;
    for (double v : agg.data) agg_max = std::max(agg_max, v);
    if (agg_max > 0.0)
        for (double& v : agg.data) v /= agg_max;

    CartesianImage out(bmode.width_px, bmode.height_px, bmode.pixel_size_m, bmode.origin_m);
    polar_to_cartesian_into(agg, out);
    out.mask = bmode.mask;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = out.mask[i] ? std::clamp(out.data[i], 0.0, 1.0) : 0.0;
    return out;
}

}  // namespace spinesurf
