#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace tabsynth {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using IndexMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

/// All randomness flows through explicitly passed 64-bit Mersenne streams.
using Rng = std::mt19937_64;

/// Error raised for malformed user input (files, schemas, arguments).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Error raised when numerical work cannot proceed (non-finite loss, bad shapes).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

Matrix standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

/// Derives an independent seed from a base seed and a tag sequence (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

std::uint64_t hash_string(const std::string& s);

}  // namespace tabsynth
