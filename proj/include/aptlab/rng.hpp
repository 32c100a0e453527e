#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "aptlab/tensor.hpp"

namespace aptlab {

// Deterministic RNG with hand-rolled distributions so draws are identical
// across standard libraries, not just across runs of one binary.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t raw() { return eng_(); }

    double uniform() {
        // 53-bit mantissa uniform in [0, 1)
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    int uniform_int(int n) {  // [0, n)
        return static_cast<int>(eng_() % static_cast<uint64_t>(n));
    }

    Tensor normal_tensor(int r, int c, double std = 1.0) {
        Tensor t(r, c);
        for (auto& x : t.v) x = normal() * std;
        return t;
    }

    // Derive an independent stream, e.g. for a child run.
    Rng fork() { return Rng(eng_() ^ 0x9e3779b97f4a7c15ull); }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace aptlab
