#pragma once

#include <cstdint>
#include <random>

namespace vtonlab {

// Explicitly seeded generator. Every stochastic operation takes one of these
// by reference; nothing in the library reads global random state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal();
    double uniform();  // [0, 1)
    double uniform(double lo, double hi);
    int uniform_int(int lo, int hi);  // inclusive
    bool bernoulli(double p);
    std::uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// Stateless seed derivation so that stream k of seed s never depends on how
// many draws other streams made.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace vtonlab
