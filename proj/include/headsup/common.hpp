#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace headsup {

// Error with a stable machine-readable class name. The CLI prints
// "<code>: <message>" on stderr and exits 1.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(const char* code, const std::string& msg) {
    throw Error(code, msg);
}

inline void require(bool ok, const char* code, const std::string& msg) {
    if (!ok) fail(code, msg);
}

// Deterministic RNG with named substreams. Every source of randomness in a
// run derives from one root seed, so thread count and call order elsewhere
// never change a substream's sequence.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed), seed0_(seed) {}

    Rng substream(std::string_view name) const {
        // FNV-1a over the name, mixed with the original seed
        uint64_t h = 1469598103934665603ull ^ seed0_;
        for (char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ull;
        }
        return Rng(h);
    }

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    uint64_t uniform_int(uint64_t n) {
        // rejection-free modulo is fine here; n is tiny relative to 2^64
        return n ? gen_() % n : 0;
    }

    // Box-Muller, stateless (no cached second sample, so serialized engine
    // state fully determines the future sequence)
    double normal() {
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    float normalf() { return static_cast<float>(normal()); }

    std::string serialize() const {
        std::ostringstream ss;
        ss << gen_ << " " << seed0_;
        return ss.str();
    }

    static Rng deserialize(const std::string& s) {
        Rng r(0);
        std::istringstream ss(s);
        ss >> r.gen_ >> r.seed0_;
        if (!ss) fail("BadRngState", "cannot parse RNG state");
        return r;
    }

private:
    std::mt19937_64 gen_;
    uint64_t seed0_ = 0;

    friend class RngInit;
};

inline Rng make_root_rng(uint64_t seed) {
    Rng r(seed);
    return r.substream("root");
}

inline float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }
inline float logitf(float p) { return std::log(p / (1.0f - p)); }

}  // namespace headsup
