#ifndef CAPFOR_TENSOR_HPP
#define CAPFOR_TENSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace capfor {

/**
 * Dense row-major tensor of 32-bit floats.
 *
 * Rank 1 tensors are treated as a single row (1 x n) by the rank-2
 * accessors. Scalars are shape {1}.
 */
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<float> values);

    static Tensor scalar(float v);
    static Tensor full(std::vector<std::size_t> shape, float v);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return values_.size(); }

    // Rank-2 view helpers. Rank-1 tensors count as one row.
    std::size_t rows() const;
    std::size_t cols() const;

    float at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    float& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

    float* data() { return values_.data(); }
    const float* data() const { return values_.data(); }
    std::vector<float>& values() { return values_; }
    const std::vector<float>& values() const { return values_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    void fill(float v);
    void zero() { fill(0.0f); }

private:
    std::vector<std::size_t> shape_;
    std::vector<float> values_;
};

/**
 * Deterministic random stream (splitmix64 core).
 *
 * Uniform/normal variates are derived by explicit bit manipulation rather
 * than std:: distributions, whose output is implementation-defined; the
 * same seed yields the same stream on every platform and standard library.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform double in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// Gaussian via Box-Muller.
    double normal(double mean, double stddev);
    /// Uniform integer in [0, n). n must be positive.
    std::size_t index(std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Combine seed components into one 64-bit stream seed (splitmix64 mixing).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

/// Fill with N(mean, stddev) draws from the given stream.
void fill_normal(Tensor& t, Rng& rng, float mean, float stddev);

}  // namespace capfor

#endif  // CAPFOR_TENSOR_HPP
