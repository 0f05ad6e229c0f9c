#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace elastron {

// Deterministic splittable generator. Identical seed gives an identical draw
// stream; stream(name) derives an independent sub-stream so sampling, init
// and data generation never interleave.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

    Rng stream(std::string_view name) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the name
        for (char c : name) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 0x100000001b3ULL;
        }
        return Rng(mix(state_ ^ h));
    }

    Rng stream(std::string_view name, std::uint64_t index) const {
        return stream(name).stream_index(index);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        const auto x = next_u64();
        return static_cast<int>((static_cast<unsigned __int128>(x) * static_cast<std::uint64_t>(n)) >> 64);
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(items[i], items[static_cast<std::size_t>(j)]);
        }
    }

private:
    explicit Rng(std::uint64_t raw_state, int) : state_(raw_state) {}

    Rng stream_index(std::uint64_t index) const { return Rng(mix(state_ ^ mix(index + 0x9e3779b97f4a7c15ULL)), 0); }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace elastron
