#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace umg {

// Deterministic PRNG with platform-independent output (std distributions are
// implementation-defined, so uniform/normal are generated by hand).
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n), n >= 1.
    int uniform_int(int n);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

  private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

uint64_t splitmix64(uint64_t x);
uint64_t fnv1a64(std::string_view s);

// Stage-seed derivation: every pipeline stage draws its own seed from the
// single run seed, so stages can be re-run independently yet reproducibly.
uint64_t derive_seed(uint64_t base, std::string_view tag);
uint64_t derive_seed(uint64_t base, uint64_t index);

}  // namespace umg
