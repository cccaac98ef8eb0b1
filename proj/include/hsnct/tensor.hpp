#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hsnct/errors.hpp"

namespace hsnct {

using Dims = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

inline std::string shape_string(const Dims& dims)
{
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(dims[i]);
    }
    return s + ")";
}

/// Dense row-major n-dimensional array of doubles.
///
/// A default-constructed tensor is empty (rank 0, no data); every other tensor
/// has at least one dimension and all extents positive.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Dims dims, double fill = 0.0)
        : dims_(std::move(dims)), values_(checked_size(dims_), fill) {}

    Tensor(Dims dims, std::vector<double> values) : dims_(std::move(dims)), values_(std::move(values))
    {
        if (checked_size(dims_) != values_.size())
            throw ShapeError("tensor of shape " + shape_string(dims_) + " given " +
                             std::to_string(values_.size()) + " values");
    }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    std::vector<double>& storage() noexcept { return values_; }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    template <class... I>
    double& operator()(I... idx) noexcept
    {
        return values_[offset(idx...)];
    }
    template <class... I>
    double operator()(I... idx) const noexcept
    {
        return values_[offset(idx...)];
    }

    template <class... I>
    std::size_t offset(I... idx) const noexcept
    {
        static_assert(sizeof...(I) > 0);
        std::size_t off = 0, axis = 0;
        ((off = off * dims_[axis++] + static_cast<std::size_t>(idx)), ...);
        return off;
    }

    bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }

    /// View as a matrix with `rows` leading rows; the trailing extent is inferred.
    RowMatrixMap matrix(std::size_t rows)
    {
        check_rows(rows);
        return {values_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(size() / rows)};
    }
    ConstRowMatrixMap matrix(std::size_t rows) const
    {
        check_rows(rows);
        return {values_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(size() / rows)};
    }
    /// Rank-2 view; the leading axis becomes rows.
    RowMatrixMap matrix() { return matrix(dims_.empty() ? 0 : dims_.front()); }
    ConstRowMatrixMap matrix() const { return matrix(dims_.empty() ? 0 : dims_.front()); }

    Tensor reshaped(Dims dims) const&
    {
        Tensor t = *this;
        return std::move(t).reshaped(std::move(dims));
    }
    Tensor reshaped(Dims dims) &&
    {
        if (checked_size(dims) != values_.size())
            throw ShapeError("cannot reshape " + shape_string(dims_) + " to " + shape_string(dims));
        dims_ = std::move(dims);
        return std::move(*this);
    }

    static std::size_t checked_size(const Dims& dims)
    {
        if (dims.empty()) throw ShapeError("tensor requires at least one dimension");
        std::size_t n = 1;
        for (auto d : dims) {
            if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(dims));
            n *= d;
        }
        return n;
    }

private:
    void check_rows(std::size_t rows) const
    {
        if (rows == 0 || values_.size() % rows != 0)
            throw ShapeError("cannot view " + shape_string(dims_) + " with " + std::to_string(rows) + " rows");
    }

    Dims dims_;
    std::vector<double> values_;
};

inline void require_shape(const Tensor& t, const Dims& expected, const std::string& what)
{
    if (t.dims() != expected)
        throw ShapeError(what + ": expected shape " + shape_string(expected) + ", got " + shape_string(t.dims()));
}

inline bool all_finite(std::span<const double> v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

} // namespace hsnct
