#include "sdq/rng.hpp"

#include <cmath>
#include <numbers>

namespace sdq {

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

std::uint64_t hash_string(std::string_view s) {
    // FNV-1a, then finalized.
    std::uint64_t h = UINT64_C(0xcbf29ce484222325);
    for (unsigned char c : s) {
        h ^= c;
        h *= UINT64_C(0x100000001b3);
    }
    return mix64(h);
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t run, std::string_view purpose) {
    std::uint64_t k = mix64(seed + UINT64_C(0x9E3779B97F4A7C15));
    k = mix64(k ^ (run * UINT64_C(0xD1B54A32D192ED03) + 1));
    k = mix64(k ^ hash_string(purpose));
    return Rng(k);
}

Rng Rng::split(std::string_view tag) const {
    return Rng(mix64(key_ ^ hash_string(tag) ^ UINT64_C(0xA0761D6478BD642F)));
}

Rng Rng::split(std::uint64_t index) const {
    return Rng(mix64(key_ + mix64(index ^ UINT64_C(0xE7037ED1A0B428DB))));
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t c = counter_++;
    return mix64(mix64(key_ ^ (c * UINT64_C(0x9E3779B97F4A7C15))) + c);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n <= 1) return 0;
    // Rejection on the top of the range keeps the result unbiased.
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    const double u = uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        acc += probs[i];
        last_positive = i;
        if (u < acc) return i;
    }
    return last_positive;
}

}  // namespace sdq
