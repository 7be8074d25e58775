#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>

namespace sdq {

// Counter-based generator: the i-th output is a pure function of (key, i),
// so streams can be split and replayed without shared state.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t key = 0) : key_(key) {}

    // Stream for one (seed, run, purpose) triple. Purposes are hashed, so
    // adding a new consumer never shifts an existing stream.
    static Rng stream(std::uint64_t seed, std::uint64_t run, std::string_view purpose);

    Rng split(std::string_view tag) const;
    Rng split(std::uint64_t index) const;

    std::uint64_t next_u64();
    std::uint64_t operator()() { return next_u64(); }
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    // [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    bool coin() { return (next_u64() >> 63) != 0; }
    // Standard normal via Box-Muller; always consumes two outputs.
    double normal();
    // Index drawn from a probability vector (need not be exactly normalized).
    std::size_t categorical(std::span<const double> probs);

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);
std::uint64_t hash_string(std::string_view s);

}  // namespace sdq
