#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/SparseCore>
#include <fftw3.h>

#include "hsnct/core.hpp"
#include "hsnct/parallel.hpp"
#include "hsnct/tensor.hpp"

namespace hsnct {

/// Parallel-beam projector for volumes of shape (N_r, N_c, N_c) and
/// sinograms of shape (N_v, N_r, N_c).
///
/// Each detector row sees one axial slice, so a single per-slice system
/// matrix (rows: view * N_c + column, columns: i * N_c + j) is shared by all
/// slices. Line integrals use Joseph's method: the ray is stepped along the
/// axis it is most aligned with and the volume is linearly interpolated along
/// the other axis. Voxel pitch equals detector pitch (unit length) and only
/// voxels inside the inscribed circle carry weight.
class Projector {
public:
    using RowSparse = Eigen::SparseMatrix<double, Eigen::RowMajor, std::int64_t>;
    using ColSparse = Eigen::SparseMatrix<double, Eigen::ColMajor, std::int64_t>;

    explicit Projector(const ScanParams& scan) : Projector(scan.n_rows, scan.n_cols, scan.view_angles) {}

    Projector(std::size_t n_rows, std::size_t n_cols, std::vector<double> angles)
        : n_rows_(n_rows), n_cols_(n_cols), angles_(std::move(angles))
    {
        if (!n_rows_ || !n_cols_ || angles_.empty()) throw ConfigError("projector needs rows, columns and angles");
        build();
    }

    std::size_t n_rows() const noexcept { return n_rows_; }
    std::size_t n_cols() const noexcept { return n_cols_; }
    std::size_t n_views() const noexcept { return angles_.size(); }
    const std::vector<double>& angles() const noexcept { return angles_; }
    std::size_t slice_voxels() const noexcept { return n_cols_ * n_cols_; }
    std::size_t slice_measurements() const noexcept { return n_views() * n_cols_; }
    Dims volume_dims() const { return {n_rows_, n_cols_, n_cols_}; }
    Dims sinogram_dims() const { return {n_views(), n_rows_, n_cols_}; }

    /// In-plane field-of-view flags, length N_c * N_c.
    const std::vector<std::uint8_t>& fov() const noexcept { return fov_; }
    bool in_fov(std::size_t i, std::size_t j) const { return fov_[i * n_cols_ + j] != 0; }

    const RowSparse& rows() const noexcept { return by_row_; }
    const ColSparse& columns() const noexcept { return by_col_; }

    Tensor project(const Tensor& volume) const
    {
        require_shape(volume, volume_dims(), "project");
        Tensor sino(sinogram_dims());
        const std::size_t nv = n_views(), nr = n_rows_, nc = n_cols_;
        parallel_for(0, nr, [&](std::size_t r) {
            Eigen::Map<const Eigen::VectorXd> x(volume.data() + r * slice_voxels(), static_cast<Eigen::Index>(slice_voxels()));
            const Eigen::VectorXd y = by_row_ * x;
            for (std::size_t v = 0; v < nv; ++v)
                for (std::size_t c = 0; c < nc; ++c) sino(v, r, c) = y[static_cast<Eigen::Index>(v * nc + c)];
        });
        return sino;
    }

    /// Exact matrix adjoint of project().
    Tensor backproject(const Tensor& sino) const
    {
        require_shape(sino, sinogram_dims(), "backproject");
        Tensor volume(volume_dims());
        const std::size_t nv = n_views(), nr = n_rows_, nc = n_cols_;
        parallel_for(0, nr, [&](std::size_t r) {
            Eigen::VectorXd y(static_cast<Eigen::Index>(nv * nc));
            for (std::size_t v = 0; v < nv; ++v)
                for (std::size_t c = 0; c < nc; ++c) y[static_cast<Eigen::Index>(v * nc + c)] = sino(v, r, c);
            Eigen::Map<Eigen::VectorXd> x(volume.data() + r * slice_voxels(), static_cast<Eigen::Index>(slice_voxels()));
            x = by_col_.transpose() * y;
        });
        return volume;
    }

private:
    void build()
    {
        const std::size_t n = n_cols_;
        const double half = 0.5 * static_cast<double>(n - 1);
        const double radius = 0.5 * static_cast<double>(n);

        fov_.assign(n * n, 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double x = static_cast<double>(j) - half, y = half - static_cast<double>(i);
                fov_[i * n + j] = x * x + y * y <= radius * radius ? 1 : 0;
            }

        std::vector<Eigen::Triplet<double, std::int64_t>> entries;
        entries.reserve(angles_.size() * n * n * 2);
        auto add = [&](std::size_t row, std::ptrdiff_t i, std::ptrdiff_t j, double w) {
            if (w == 0.0 || i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(n) || j >= static_cast<std::ptrdiff_t>(n))
                return;
            const auto vox = static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j);
            if (fov_[vox]) entries.emplace_back(static_cast<std::int64_t>(row), static_cast<std::int64_t>(vox), w);
        };

        for (std::size_t v = 0; v < angles_.size(); ++v) {
            const double cs = std::cos(angles_[v]), sn = std::sin(angles_[v]);
            const bool step_rows = std::abs(sn) <= std::abs(cs);
            const double step_len = 1.0 / (step_rows ? std::abs(cs) : std::abs(sn));
            for (std::size_t c = 0; c < n; ++c) {
                const std::size_t row = v * n + c;
                const double t = static_cast<double>(c) - half;
                for (std::size_t s = 0; s < n; ++s) {
                    if (step_rows) {
                        const double y = half - static_cast<double>(s);
                        const double jf = (t - y * sn) / cs + half;
                        const double j0 = std::floor(jf), w = jf - j0;
                        const auto ii = static_cast<std::ptrdiff_t>(s), jj = static_cast<std::ptrdiff_t>(j0);
                        add(row, ii, jj, (1.0 - w) * step_len);
                        add(row, ii, jj + 1, w * step_len);
                    } else {
                        const double x = static_cast<double>(s) - half;
                        const double fi = half - (t - x * cs) / sn;
                        const double i0 = std::floor(fi), w = fi - i0;
                        const auto ii = static_cast<std::ptrdiff_t>(i0), jj = static_cast<std::ptrdiff_t>(s);
                        add(row, ii, jj, (1.0 - w) * step_len);
                        add(row, ii + 1, jj, w * step_len);
                    }
                }
            }
        }
        by_row_.resize(static_cast<std::int64_t>(slice_measurements()), static_cast<std::int64_t>(slice_voxels()));
        by_row_.setFromTriplets(entries.begin(), entries.end());
        by_row_.makeCompressed();
        by_col_ = by_row_;
        by_col_.makeCompressed();
    }

    std::size_t n_rows_, n_cols_;
    std::vector<double> angles_;
    std::vector<std::uint8_t> fov_;
    RowSparse by_row_;
    ColSparse by_col_;
};

namespace detail {

inline std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

inline std::size_t next_pow2(std::size_t n)
{
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// Ram-Lak filter applied through a zero-padded FFT of the discrete
/// spatial-domain kernel (unit sample spacing).
class RampFilter {
public:
    explicit RampFilter(std::size_t n) : n_(n), len_(next_pow2(2 * n))
    {
        std::lock_guard lock(fftw_planner_mutex());
        in_ = fftw_alloc_real(len_);
        out_ = fftw_alloc_complex(len_ / 2 + 1);
        forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(len_), in_, out_, FFTW_ESTIMATE);
        inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(len_), out_, in_, FFTW_ESTIMATE);

        std::fill_n(in_, len_, 0.0);
        in_[0] = 0.25;
        for (std::size_t k = 1; k <= len_ / 2; ++k) {
            if (k % 2 == 0) continue;
            const double h = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(k * k));
            in_[k] = h;
            in_[len_ - k] = h;
        }
        fftw_execute(forward_);
        response_.resize(len_ / 2 + 1);
        for (std::size_t k = 0; k < response_.size(); ++k) response_[k] = out_[k][0] / static_cast<double>(len_);
    }

    RampFilter(const RampFilter&) = delete;
    RampFilter& operator=(const RampFilter&) = delete;

    ~RampFilter()
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(inverse_);
        fftw_free(in_);
        fftw_free(out_);
    }

    /// Filters `row` (length n) in place. `in` and `out` are per-thread scratch
    /// buffers from scratch_real()/scratch_complex().
    void apply(std::span<double> row, double* in, fftw_complex* out) const
    {
        std::copy(row.begin(), row.end(), in);
        std::fill(in + n_, in + len_, 0.0);
        fftw_execute_dft_r2c(forward_, in, out);
        for (std::size_t k = 0; k < response_.size(); ++k) {
            out[k][0] *= response_[k];
            out[k][1] *= response_[k];
        }
        fftw_execute_dft_c2r(inverse_, out, in);
        std::copy(in, in + n_, row.begin());
    }

    std::size_t padded_length() const noexcept { return len_; }

private:
    std::size_t n_, len_;
    double* in_ = nullptr;
    fftw_complex* out_ = nullptr;
    fftw_plan forward_ = nullptr, inverse_ = nullptr;
    std::vector<double> response_;
};

} // namespace detail

/// Filtered backprojection: Ram-Lak filtering of every sinogram row followed
/// by pixel-driven, linearly interpolated backprojection scaled by pi / N_v.
inline Tensor fbp_reconstruct(const Tensor& sino, const Projector& projector)
{
    require_shape(sino, projector.sinogram_dims(), "fbp_reconstruct");
    const std::size_t nv = projector.n_views(), nr = projector.n_rows(), nc = projector.n_cols();
    if (nv < 2) throw ConfigError("filtered backprojection needs at least two views");

    const detail::RampFilter filter(nc);
    const double half = 0.5 * static_cast<double>(nc - 1);
    const double scale = std::numbers::pi / static_cast<double>(nv);
    std::vector<double> cs(nv), sn(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        cs[v] = std::cos(projector.angles()[v]);
        sn[v] = std::sin(projector.angles()[v]);
    }

    Tensor volume(projector.volume_dims());
    parallel_for(0, nr, [&](std::size_t r) {
        double* in = fftw_alloc_real(filter.padded_length());
        fftw_complex* out = fftw_alloc_complex(filter.padded_length() / 2 + 1);
        std::vector<double> q(nv * nc);
        for (std::size_t v = 0; v < nv; ++v) {
            for (std::size_t c = 0; c < nc; ++c) q[v * nc + c] = sino(v, r, c);
            filter.apply(std::span<double>(q.data() + v * nc, nc), in, out);
        }
        fftw_free(in);
        fftw_free(out);

        for (std::size_t i = 0; i < nc; ++i) {
            const double y = half - static_cast<double>(i);
            for (std::size_t j = 0; j < nc; ++j) {
                if (!projector.in_fov(i, j)) continue;
                const double x = static_cast<double>(j) - half;
                double acc = 0.0;
                for (std::size_t v = 0; v < nv; ++v) {
                    const double u = x * cs[v] + y * sn[v] + half;
                    const double u0 = std::floor(u);
                    const double w = u - u0;
                    const auto k = static_cast<std::ptrdiff_t>(u0);
                    const double* row = q.data() + v * nc;
                    if (k >= 0 && k < static_cast<std::ptrdiff_t>(nc)) acc += (1.0 - w) * row[k];
                    if (k + 1 >= 0 && k + 1 < static_cast<std::ptrdiff_t>(nc)) acc += w * row[k + 1];
                }
                volume(r, i, j) = scale * acc;
            }
        }
    });
    return volume;
}

} // namespace hsnct
