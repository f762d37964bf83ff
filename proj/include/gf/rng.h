#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace gf {

// Seeded RNG with explicit draw formulas. std::mt19937 output is pinned by
// the standard; the distribution helpers here avoid std::uniform_* whose
// algorithms are implementation-defined, so identical seeds give identical
// streams everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

    uint32_t next_u32() { return engine_(); }

    // uniform in [0, 1)
    float uniform() {
        return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f);
    }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range
    int uniform_int(int lo, int hi) {
        uint32_t span = static_cast<uint32_t>(hi - lo) + 1u;
        return lo + static_cast<int>(next_u32() % span);
    }

    // Box-Muller; draws two uniforms per pair of normals.
    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        float r = std::sqrt(-2.0f * std::log(u1));
        float a = 6.2831853071795864769f * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    float normal(float mean, float stddev) { return mean + stddev * normal(); }

private:
    std::mt19937 engine_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

// FNV-1a, used to derive per-purpose sub-seeds and to fingerprint configs.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 14695981039346656037ull) {
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t base, std::string_view purpose) {
    uint64_t h = fnv1a(purpose);
    h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

}  // namespace gf
