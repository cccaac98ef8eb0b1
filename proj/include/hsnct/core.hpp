#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "hsnct/errors.hpp"
#include "hsnct/tensor.hpp"

namespace hsnct {

/// Scan dimensions and acquisition angles.
struct ScanParams {
    std::size_t n_rows = 0;        // detector rows == axial slices
    std::size_t n_cols = 0;        // detector columns == in-plane extent
    std::size_t n_wavelengths = 0; // spectral bins
    std::size_t n_views = 0;
    std::size_t n_materials = 0;
    std::size_t n_subspace = 0;
    std::size_t morph_window = 1;
    std::vector<double> view_angles; // radians, strictly increasing in [0, pi)

    /// Uniform angles pi * v / n_views.
    static std::vector<double> uniform_angles(std::size_t n_views)
    {
        std::vector<double> a(n_views);
        for (std::size_t v = 0; v < n_views; ++v)
            a[v] = std::numbers::pi * static_cast<double>(v) / static_cast<double>(n_views);
        return a;
    }

    std::size_t n_projections() const { return n_views * n_rows * n_cols; }
    std::size_t n_voxels() const { return n_rows * n_cols * n_cols; }

    void validate() const
    {
        if (!n_rows || !n_cols || !n_wavelengths || !n_views || !n_materials || !n_subspace || !morph_window)
            throw ConfigError("scan parameters must all be positive integers");
        if (!(n_materials < n_subspace && n_subspace <= n_wavelengths))
            throw ConfigError("require n_materials < n_subspace <= n_wavelengths, got " +
                              std::to_string(n_materials) + ", " + std::to_string(n_subspace) + ", " +
                              std::to_string(n_wavelengths));
        if (view_angles.size() != n_views)
            throw ConfigError("expected " + std::to_string(n_views) + " view angles, got " +
                              std::to_string(view_angles.size()));
        for (std::size_t v = 0; v < n_views; ++v) {
            const double a = view_angles[v];
            if (!(a >= 0.0 && a < std::numbers::pi))
                throw ConfigError("view angle " + std::to_string(a) + " outside [0, pi)");
            if (v && !(a > view_angles[v - 1])) throw ConfigError("view angles must be strictly increasing");
        }
    }

    bool operator==(const ScanParams&) const = default;
};

/// Uniformly spaced wavelength bins; values are bin centres in angstrom.
struct WavelengthGrid {
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    std::size_t n_bins = 0;

    double bin_width() const { return (lambda_max - lambda_min) / static_cast<double>(n_bins); }
    double center(std::size_t k) const { return lambda_min + (static_cast<double>(k) + 0.5) * bin_width(); }

    std::vector<double> centers() const
    {
        std::vector<double> c(n_bins);
        for (std::size_t k = 0; k < n_bins; ++k) c[k] = center(k);
        return c;
    }

    /// First bin whose centre is at or beyond `lambda`.
    std::size_t first_bin_at_or_after(double lambda) const
    {
        std::size_t k = 0;
        while (k < n_bins && center(k) < lambda) ++k;
        return k;
    }

    void validate() const
    {
        if (!n_bins) throw ConfigError("wavelength grid needs at least one bin");
        if (!(lambda_min > 0.0 && lambda_max > lambda_min))
            throw ConfigError("wavelength grid requires 0 < lambda_min < lambda_max");
    }

    bool operator==(const WavelengthGrid&) const = default;
};

/// Object counts y (N_v, N_r, N_c, N_k) and open-beam counts (N_r, N_c, N_k).
struct CountData {
    Tensor object;
    Tensor open_beam;
};

/// Projections p (N_v, N_r, N_c, N_k) with a per-entry validity mask.
struct ProjectionStack {
    Tensor p;
    std::vector<std::uint8_t> valid;

    ProjectionStack() = default;
    explicit ProjectionStack(Tensor values) : p(std::move(values)), valid(p.size(), 1) {}
    ProjectionStack(Tensor values, std::vector<std::uint8_t> mask) : p(std::move(values)), valid(std::move(mask))
    {
        if (valid.size() != p.size()) throw ShapeError("validity mask does not match projection shape");
    }

    std::size_t n_views() const { return p.dim(0); }
    std::size_t n_rows() const { return p.dim(1); }
    std::size_t n_cols() const { return p.dim(2); }
    std::size_t n_wavelengths() const { return p.dim(3); }
    std::size_t n_projections() const { return n_views() * n_rows() * n_cols(); }

    std::size_t n_invalid() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 0)); }
    bool all_valid() const { return n_invalid() == 0; }

    void check() const
    {
        if (p.rank() != 4) throw ShapeError("projection stack must be rank 4 (views, rows, cols, bins)");
        if (valid.size() != p.size()) throw ShapeError("validity mask does not match projection shape");
    }
};

/// Additive log-domain bias b (N_v, N_k); alpha = exp(b).
struct OffsetCorrection {
    Tensor b;

    static OffsetCorrection from_alpha(const Tensor& alpha)
    {
        OffsetCorrection c{Tensor(alpha.dims())};
        for (std::size_t i = 0; i < alpha.size(); ++i) {
            if (!(alpha[i] > 0.0)) throw DomainError("dose factor alpha must be positive");
            c.b[i] = std::log(alpha[i]);
        }
        return c;
    }

    Tensor alpha() const
    {
        Tensor a(b.dims());
        for (std::size_t i = 0; i < b.size(); ++i) a[i] = std::exp(b[i]);
        return a;
    }

    OffsetCorrection negated() const
    {
        OffsetCorrection c{b};
        for (auto& x : c.b.values()) x = -x;
        return c;
    }
};

// CODATA 2018.
inline constexpr double planck_constant = 6.62607015e-34;   // J s
inline constexpr double neutron_mass = 1.67492749804e-27;   // kg

/// Neutron wavelength in angstrom for time of flight `delta_t` (s) over flight path `length` (m).
inline double tof_to_wavelength(double delta_t, double length)
{
    if (!(delta_t > 0.0) || !(length > 0.0))
        throw DomainError("time of flight and flight path must be positive");
    return planck_constant / neutron_mass * (delta_t / length) * 1e10;
}

/// p = -log(y / y_open) - b[v, k]. Entries with a zero count in either
/// scan are marked invalid and stored as 0.
inline ProjectionStack counts_to_projections(const CountData& counts, const OffsetCorrection* correction = nullptr)
{
    const Tensor& y = counts.object;
    const Tensor& y0 = counts.open_beam;
    if (y.rank() != 4) throw ShapeError("object counts must have shape (views, rows, cols, bins)");
    const std::size_t nv = y.dim(0), nr = y.dim(1), nc = y.dim(2), nk = y.dim(3);
    require_shape(y0, {nr, nc, nk}, "open-beam counts");
    if (correction) require_shape(correction->b, {nv, nk}, "offset correction");

    ProjectionStack out(Tensor(y.dims()));
    for (std::size_t v = 0; v < nv; ++v) {
        for (std::size_t pix = 0; pix < nr * nc * nk; ++pix) {
            const std::size_t idx = v * nr * nc * nk + pix;
            const double num = y[idx], den = y0[pix];
            if (num < 0.0 || den < 0.0) throw DataError("counts must be non-negative");
            if (num == 0.0 || den == 0.0) {
                out.valid[idx] = 0;
                continue;
            }
            double value = -std::log(num / den);
            if (correction) value -= correction->b(v, pix % nk);
            out.p[idx] = value;
        }
    }
    return out;
}

/// Subtracts b[v, k] from every valid entry of p.
inline ProjectionStack apply_offset(ProjectionStack stack, const OffsetCorrection& correction)
{
    stack.check();
    const std::size_t nv = stack.n_views(), nk = stack.n_wavelengths();
    const std::size_t per_view = stack.p.size() / nv;
    require_shape(correction.b, {nv, nk}, "offset correction");
    for (std::size_t i = 0; i < stack.p.size(); ++i)
        if (stack.valid[i]) stack.p[i] -= correction.b(i / per_view, i % nk);
    return stack;
}

/// b[v, k] = median of valid p[v, r, c, k] over pixels flagged in air_mask (N_r, N_c).
inline OffsetCorrection estimate_offset(const ProjectionStack& raw, const std::vector<std::uint8_t>& air_mask)
{
    raw.check();
    const std::size_t nv = raw.n_views(), nr = raw.n_rows(), nc = raw.n_cols(), nk = raw.n_wavelengths();
    if (air_mask.size() != nr * nc) throw ShapeError("air mask must cover the detector (rows x cols)");
    if (std::none_of(air_mask.begin(), air_mask.end(), [](auto m) { return m != 0; }))
        throw DataError("air mask selects no pixels");

    OffsetCorrection c{Tensor({nv, nk})};
    std::vector<double> samples;
    for (std::size_t v = 0; v < nv; ++v) {
        for (std::size_t k = 0; k < nk; ++k) {
            samples.clear();
            for (std::size_t pix = 0; pix < nr * nc; ++pix) {
                if (!air_mask[pix]) continue;
                const std::size_t idx = (v * nr * nc + pix) * nk + k;
                if (raw.valid[idx]) samples.push_back(raw.p[idx]);
            }
            if (samples.empty())
                throw DataError("no valid air samples for view " + std::to_string(v) + ", bin " + std::to_string(k));
            const std::size_t mid = samples.size() / 2;
            std::nth_element(samples.begin(), samples.begin() + mid, samples.end());
            double med = samples[mid];
            if (samples.size() % 2 == 0) {
                const double lower = *std::max_element(samples.begin(), samples.begin() + mid);
                med = 0.5 * (med + lower);
            }
            c.b(v, k) = med;
        }
    }
    return c;
}

/// Air mask on the detector that flags the first and last `air_rows` detector rows.
inline std::vector<std::uint8_t> edge_row_air_mask(std::size_t n_rows, std::size_t n_cols, std::size_t air_rows)
{
    std::vector<std::uint8_t> m(n_rows * n_cols, 0);
    for (std::size_t r = 0; r < n_rows; ++r)
        if (r < air_rows || r + air_rows >= n_rows)
            std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(r * n_cols), n_cols, std::uint8_t{1});
    return m;
}

} // namespace hsnct
