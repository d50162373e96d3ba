#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "voxdiff/volume.hpp"

namespace voxdiff {

// Deterministic Gaussian source: mt19937_64 + Box-Muller. Identical seed and
// call sequence give identical outputs on a given platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    // Derives an independent stream, e.g. per (seed, case index).
    static Rng derive(std::uint64_t seed, std::uint64_t index) {
        return Rng(splitmix64(seed ^ splitmix64(index + 0x9e3779b97f4a7c15ull)));
    }

    std::uint64_t next_u64() { return gen_(); }

    double uniform() {  // [0, 1)
        return (gen_() >> 11) * 0x1.0p-53;
    }

    // Uniform over {lo, ..., hi} inclusive.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Volume normal_volume(int channels, Dims dims) {
        Volume v(channels, dims);
        for (auto& x : v.data()) x = static_cast<float>(normal());
        return v;
    }

    template <typename T>
    void fill_normal(std::vector<T>& data, double scale = 1.0) {
        for (auto& x : data) x = static_cast<T>(scale * normal());
    }

    // Engine state + Box-Muller spare, textual (exact round trip).
    std::string serialize() const {
        std::ostringstream os;
        os << gen_ << " " << (has_spare_ ? 1 : 0) << " ";
        os.precision(17);
        os << spare_;
        return os.str();
    }

    static Rng deserialize(const std::string& text) {
        Rng rng;
        std::istringstream is(text);
        int has_spare = 0;
        is >> rng.gen_ >> has_spare >> rng.spare_;
        if (!is) throw DataError("Rng::deserialize: malformed state text");
        rng.has_spare_ = has_spare != 0;
        return rng;
    }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace voxdiff
