#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "mldebug/types.hpp"

namespace mldebug {

/// Deterministic splitmix64 stream. Streams are derived from a (seed,
/// purpose) pair so that independent draws (design, noise, bugs, ...) never
/// alias across modules. All sampling routines are implemented here rather
/// than via <random> so results are reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

    static std::uint64_t stream_id(std::string_view purpose) {
        std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
        for (char c : purpose) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    static Rng stream(std::uint64_t seed, std::string_view purpose) {
        Rng r(seed);
        r.state_ ^= stream_id(purpose);
        r.next_u64();
        return r;
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling, no modulo bias
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    int sign() { return (next_u64() & 1) ? 1 : -1; }

    /// k distinct indices from [0, n), sorted.
    IndexSet sample_without_replacement(Index n, Index k) {
        // Floyd's algorithm
        std::vector<char> chosen(static_cast<size_t>(n), 0);
        IndexSet out;
        out.reserve(static_cast<size_t>(k));
        for (Index j = n - k; j < n; ++j) {
            Index v = static_cast<Index>(below(static_cast<std::uint64_t>(j) + 1));
            if (chosen[static_cast<size_t>(v)]) v = j;
            chosen[static_cast<size_t>(v)] = 1;
            out.push_back(v);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    Matrix gaussian_matrix(Index rows, Index cols) {
        Matrix X(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) X(i, j) = normal();
        return X;
    }

    Vector gaussian_vector(Index size, double sigma = 1.0) {
        Vector v(size);
        for (Index i = 0; i < size; ++i) v[i] = sigma * normal();
        return v;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mldebug
