#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace avatar_forge {

// Seeded generator shared by every stochastic component. The full state
// (engine plus the normal distribution's cached deviate) round-trips through
// a string so checkpoints resume bit-exactly.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    // Uniform in [0, 1) from the top 53 bits of one engine draw.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }
    double normal() { return normal_(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    std::string state() const {
        std::ostringstream os;
        os << engine_ << ' ' << normal_;
        return os.str();
    }
    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_ >> normal_;
    }

   private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace avatar_forge
