#pragma once

#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>
#include <functional>

namespace spinesurf {

/// Validated-input domain error. The CLI maps these to exit code 1.
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

/// Iterative solver failed to reach tolerance; carries the final residual.
class ConvergenceError : public DomainError {
public:
    ConvergenceError(const std::string& what, double residual)
        : DomainError(what), final_residual(residual) {}
    double final_residual;
};

/// Training diverged (non-finite loss); carries the epoch index.
class TrainingError : public DomainError {
public:
    TrainingError(const std::string& what, int epoch)
        : DomainError(what), epoch_index(epoch) {}
    int epoch_index;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Per-frame seed derivation: seed XOR splitmix64(frame_id).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t frame_id) {
    return seed ^ splitmix64(frame_id);
}

/// Deterministic RNG. All variate transforms are hand-rolled so that streams
/// do not depend on standard-library distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (uses two uniforms per pair).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Rayleigh variate with scale sigma: sigma * sqrt(-2 ln U), U in (0,1].
    double rayleigh(double sigma) {
        double u = 1.0 - uniform();  // (0, 1]
        return sigma * std::sqrt(-2.0 * std::log(u));
    }

    int uniform_int(int n) {  // [0, n)
        return static_cast<int>(engine_() % static_cast<std::uint64_t>(n));
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Worker-thread cap: SPINESURF_THREADS, defaulting to available parallelism.
inline int thread_cap() {
    if (const char* env = std::getenv("SPINESURF_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Chunked parallel loop over [0, n). Each index is processed by exactly one
/// worker, so writes to per-index outputs are race-free and the result is
/// independent of the thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const int workers = thread_cap();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t nthreads = std::min<std::size_t>(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    const std::size_t chunk = (n + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace spinesurf
