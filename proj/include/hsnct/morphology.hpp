#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hsnct/errors.hpp"

namespace hsnct {

/// Binary image of one slice, row-major, values 0/1.
struct BinarySlice {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> data;

    BinarySlice() = default;
    BinarySlice(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}
    std::uint8_t at(std::ptrdiff_t i, std::ptrdiff_t j, std::uint8_t outside) const
    {
        if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(rows) || j >= static_cast<std::ptrdiff_t>(cols)) return outside;
        return data[static_cast<std::size_t>(i) * cols + static_cast<std::size_t>(j)];
    }
};

/// Square n x n structuring element covering offsets -floor((n-1)/2) .. ceil((n-1)/2).
struct SquareElement {
    std::ptrdiff_t lo, hi;
    explicit SquareElement(std::size_t n)
    {
        if (n < 1) throw ConfigError("morphology: window must be at least 1");
        const auto m = static_cast<std::ptrdiff_t>(n) - 1;
        lo = -(m / 2);
        hi = m - m / 2;
    }
};

/// out(p) = OR_{b in B} in(p - b); pixels outside the image count as 0.
inline BinarySlice dilate(const BinarySlice& in, const SquareElement& se)
{
    BinarySlice out(in.rows, in.cols);
    for (std::size_t i = 0; i < in.rows; ++i)
        for (std::size_t j = 0; j < in.cols; ++j) {
            std::uint8_t v = 0;
            for (auto di = se.lo; di <= se.hi && !v; ++di)
                for (auto dj = se.lo; dj <= se.hi && !v; ++dj)
                    v = in.at(static_cast<std::ptrdiff_t>(i) - di, static_cast<std::ptrdiff_t>(j) - dj, 0);
            out.data[i * in.cols + j] = v;
        }
    return out;
}

/// out(p) = AND_{b in B} in(p + b); pixels outside the image count as 0.
inline BinarySlice erode(const BinarySlice& in, const SquareElement& se)
{
    BinarySlice out(in.rows, in.cols);
    for (std::size_t i = 0; i < in.rows; ++i)
        for (std::size_t j = 0; j < in.cols; ++j) {
            std::uint8_t v = 1;
            for (auto di = se.lo; di <= se.hi && v; ++di)
                for (auto dj = se.lo; dj <= se.hi && v; ++dj)
                    v = in.at(static_cast<std::ptrdiff_t>(i) + di, static_cast<std::ptrdiff_t>(j) + dj, 0);
            out.data[i * in.cols + j] = v;
        }
    return out;
}

inline BinarySlice close(const BinarySlice& in, const SquareElement& se) { return erode(dilate(in, se), se); }

} // namespace hsnct
