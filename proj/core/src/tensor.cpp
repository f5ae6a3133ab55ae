#include "bimamsleep/tensor.hpp"

#include "bimamsleep/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bimamsleep {

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out << ',';
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

NdArray::NdArray(Shape shape, double fill)
    : shape_(std::move(shape))
    , data_(shape_numel(shape_), fill)
{
}

NdArray::NdArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape))
    , data_(std::move(data))
{
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("NdArray: data length " + std::to_string(data_.size())
            + " does not match shape " + shape_to_string(shape_));
    }
}

NdArray NdArray::from(std::initializer_list<double> values)
{
    return NdArray({values.size()}, std::vector<double>(values));
}

std::size_t NdArray::dim(std::size_t axis) const
{
    if (axis >= shape_.size()) {
        throw ShapeError("NdArray::dim: axis " + std::to_string(axis) + " out of range for shape "
            + shape_to_string(shape_));
    }
    return shape_[axis];
}

NdArray NdArray::reshaped(Shape shape) const
{
    return NdArray(std::move(shape), data_);
}

void NdArray::fill(double value)
{
    std::fill(data_.begin(), data_.end(), value);
}

bool NdArray::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

NdArray NdArray::transposed12() const
{
    if (rank() != 3) {
        throw ShapeError("transposed12 expects rank 3, got " + shape_to_string(shape_));
    }
    const auto a = shape_[0];
    const auto b = shape_[1];
    const auto c = shape_[2];
    NdArray out({a, c, b});
    for (std::size_t i = 0; i < a; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            for (std::size_t k = 0; k < c; ++k) {
                out.data_[(i * c + k) * b + j] = data_[(i * b + j) * c + k];
            }
        }
    }
    return out;
}

ParamTensor::ParamTensor(std::string name_, NdArray value_)
    : name(std::move(name_))
    , value(std::move(value_))
    , grad(value.shape())
{
}

double max_abs_diff(const NdArray& a, const NdArray& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: shape mismatch " + shape_to_string(a.shape()) + " vs "
            + shape_to_string(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

void add_inplace(NdArray& dst, const NdArray& src)
{
    if (dst.shape() != src.shape()) {
        throw ShapeError("add_inplace: shape mismatch " + shape_to_string(dst.shape()) + " vs "
            + shape_to_string(src.shape()));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

} // namespace bimamsleep
