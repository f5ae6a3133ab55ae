#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bimamsleep {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. All training and test arithmetic runs in
/// double precision; single precision only appears in the on-disk epoch format.
class NdArray {
public:
    NdArray() = default;
    explicit NdArray(Shape shape, double fill = 0.0);
    NdArray(Shape shape, std::vector<double> data);

    static NdArray from(std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k)
    {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const
    {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    // Same data, new shape with identical element count.
    NdArray reshaped(Shape shape) const;
    void fill(double value);
    bool all_finite() const noexcept;

    // Swaps the last two axes of a rank-3 array: [A,B,C] -> [A,C,B].
    NdArray transposed12() const;

    bool operator==(const NdArray& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Learnable tensor with its gradient accumulator.
struct ParamTensor {
    std::string name;
    NdArray value;
    NdArray grad;

    ParamTensor() = default;
    ParamTensor(std::string name, NdArray value);

    void zero_grad() { grad.fill(0.0); }
};

double max_abs_diff(const NdArray& a, const NdArray& b);

// Elementwise accumulate: dst += src (shapes must match).
void add_inplace(NdArray& dst, const NdArray& src);

} // namespace bimamsleep
