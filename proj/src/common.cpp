#include "tabsynth/common.hpp"

namespace tabsynth {

Matrix standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(rows, cols);
    // Fill row by row so a batch of one equals the first row of a larger batch.
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            out(r, c) = normal(rng);
        }
    }
    return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(base);
    for (auto t : tags) {
        h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ULL));
    }
    return h;
}

std::uint64_t hash_string(const std::string& s) {
    // FNV-1a
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace tabsynth
