#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "spinesurf/common.hpp"

namespace spinesurf {

using Complex = std::complex<double>;

inline int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

namespace detail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 Cooley-Tukey transform. sign = -1 forward,
/// +1 inverse (inverse includes the 1/N normalization).
inline void fft_inplace(std::vector<Complex>& a, int sign) {
    const int n = static_cast<int>(a.size());
    if (!is_pow2(n)) throw DomainError("fft length must be a power of two");
    // bit-reversal permutation
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * M_PI / len;
        const Complex wl(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            Complex w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                const Complex u = a[i + k];
                const Complex v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (sign > 0)
        for (Complex& x : a) x /= static_cast<double>(n);
}

}  // namespace detail

inline void fft(std::vector<Complex>& a) { detail::fft_inplace(a, -1); }
inline void ifft(std::vector<Complex>& a) { detail::fft_inplace(a, +1); }

/// Row-major 2-D transforms over a height x width grid (both powers of two).
inline void fft2(std::vector<Complex>& a, int height, int width) {
    if (static_cast<std::size_t>(height) * width != a.size()) throw DomainError("fft2 size mismatch");
    std::vector<Complex> line;
    line.resize(width);
    for (int r = 0; r < height; ++r) {
        std::copy(a.begin() + static_cast<std::size_t>(r) * width,
                  a.begin() + static_cast<std::size_t>(r + 1) * width, line.begin());
        detail::fft_inplace(line, -1);
        std::copy(line.begin(), line.end(), a.begin() + static_cast<std::size_t>(r) * width);
    }
    line.resize(height);
    for (int c = 0; c < width; ++c) {
        for (int r = 0; r < height; ++r) line[r] = a[static_cast<std::size_t>(r) * width + c];
        detail::fft_inplace(line, -1);
        for (int r = 0; r < height; ++r) a[static_cast<std::size_t>(r) * width + c] = line[r];
    }
}

inline void ifft2(std::vector<Complex>& a, int height, int width) {
    if (static_cast<std::size_t>(height) * width != a.size()) throw DomainError("ifft2 size mismatch");
    std::vector<Complex> line;
    line.resize(width);
    for (int r = 0; r < height; ++r) {
        std::copy(a.begin() + static_cast<std::size_t>(r) * width,
                  a.begin() + static_cast<std::size_t>(r + 1) * width, line.begin());
        detail::fft_inplace(line, +1);
        std::copy(line.begin(), line.end(), a.begin() + static_cast<std::size_t>(r) * width);
    }
    line.resize(height);
    for (int c = 0; c < width; ++c) {
        for (int r = 0; r < height; ++r) line[r] = a[static_cast<std::size_t>(r) * width + c];
        detail::fft_inplace(line, +1);
        for (int r = 0; r < height; ++r) a[static_cast<std::size_t>(r) * width + c] = line[r];
    }
}

}  // namespace spinesurf
