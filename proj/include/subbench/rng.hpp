#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace subbench {

// Seeded pseudo-random source used by every stochastic step in the project.
//
// The bit generator is std::mt19937_64, whose output sequence is fixed by the
// C++ standard. Distributions are implemented here rather than taken from
// <random>, because std::uniform_int_distribution and friends are allowed to
// differ between standard library vendors:
//
//   uniform()   53 high bits of one draw, scaled by 2^-53      -> [0, 1)
//   below(n)    rejection sampling on the top bits             -> [0, n)
//   normal()    Box-Muller, both outputs used in order
//   shuffle()   Fisher-Yates from the back, j = below(i + 1)
//
// Child streams are derived with SplitMix64 over (seed, tag) so that
// independent pipeline stages never share a sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next() { return engine_(); }
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t below(std::uint64_t n);
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag);
    static std::uint64_t derive(std::uint64_t seed, std::string_view tag);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace subbench
