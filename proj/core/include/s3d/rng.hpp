#pragma once

#include <cstdint>
#include <string_view>

namespace s3d {

// Deterministic 64-bit generator (xoshiro256++) seeded through splitmix64.
// Every random quantity in the project is drawn from an Rng that descends,
// via derive(), from a single root seed. derive() hashes the creator's seed
// together with a stream label (FNV-1a), so streams are stable regardless of
// how much the parent has been consumed.
class Rng {
public:
    explicit Rng(uint64_t seed);

    // Child stream for an independent purpose, e.g. rng.derive("model-init").
    Rng derive(std::string_view stream) const;

    uint64_t seed() const { return seed_; }

    uint64_t next_u64();

    // Uniform on [0, 1), 53-bit resolution.
    double uniform();

    // Uniform integer in [0, n). n must be positive.
    uint64_t uniform_int(uint64_t n);

    // Standard normal via the Marsaglia polar method (sqrt/log only).
    double normal();

    // Gamma(alpha, 1) via Marsaglia-Tsang squeeze; alpha < 1 handled with the
    // Gamma(alpha+1) * U^(1/alpha) boost.
    double gamma(double alpha);

    // Beta(a, b) as X/(X+Y) with two gamma draws.
    double beta(double a, double b);

private:
    uint64_t seed_;
    uint64_t state_[4];
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

// FNV-1a over raw bytes; used for stream derivation and config digests.
uint64_t fnv1a64(const void* data, size_t len, uint64_t basis = 0xcbf29ce484222325ull);

}  // namespace s3d
