#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "hsnct/errors.hpp"
#include "hsnct/geometry.hpp"
#include "hsnct/parallel.hpp"
#include "hsnct/tensor.hpp"

namespace hsnct {

/// Relative pair weights before normalisation to unit sum over the ten
/// neighbours (4 nearest, 4 diagonal in-plane, 2 across slices).
struct NeighborWeights {
    double nearest = 1.0;
    double diagonal = 1.0 / std::numbers::sqrt2;
    double cross_slice = 1.0;

    bool operator==(const NeighborWeights&) const = default;

    NeighborWeights normalized() const
    {
        const double total = 4.0 * nearest + 4.0 * diagonal + 2.0 * cross_slice;
        return {nearest / total, diagonal / total, cross_slice / total};
    }
};

/// q-generalized Gaussian MRF pair potential
///   rho(d) = |d|^p / (p sigma^p) * |d / (T sigma)|^(q-p) / (1 + |d / (T sigma)|^(q-p)).
struct QggmrfPrior {
    double p = 1.2;
    double q = 2.0;
    double threshold = 1.0;
    double sigma_x = 1.0;

    double potential(double delta) const
    {
        const double a = std::abs(delta);
        if (a == 0.0) return 0.0;
        const double u = std::pow(a / (threshold * sigma_x), q - p);
        return std::pow(a, p) / (p * std::pow(sigma_x, p)) * u / (1.0 + u);
    }

    /// rho'(d) / (2 d): curvature of the symmetric quadratic surrogate that
    /// touches rho at d. Finite at d = 0.
    double surrogate_coefficient(double delta) const
    {
        const double a = std::abs(delta);
        const double k = std::pow(threshold * sigma_x, p - q);
        const double scale = k / (2.0 * p * std::pow(sigma_x, p));
        if (a == 0.0) return q == 2.0 ? scale * 2.0 : 0.0;
        const double u = k * std::pow(a, q - p);
        return scale * std::pow(a, q - 2.0) * (q + p * u) / ((1.0 + u) * (1.0 + u));
    }
};

namespace detail {

/// QggmrfPrior specialised to q = 2 with its constants hoisted; one pow per call.
class QuadraticQggmrf {
public:
    explicit QuadraticQggmrf(const QggmrfPrior& prior)
        : p_(prior.p), r_(2.0 - prior.p), k_(std::pow(prior.threshold * prior.sigma_x, prior.p - 2.0)),
          scale_(k_ / (2.0 * prior.p * std::pow(prior.sigma_x, prior.p)))
    {
    }

    double potential(double delta) const
    {
        const double a = std::abs(delta);
        if (a == 0.0) return 0.0;
        return 2.0 * scale_ * a * a / (1.0 + k_ * std::exp(r_ * std::log(a)));
    }

    double surrogate_coefficient(double delta) const
    {
        const double a = std::abs(delta);
        if (a == 0.0) return 2.0 * scale_;
        const double u = k_ * std::exp(r_ * std::log(a));
        return scale_ * (2.0 + p_ * u) / ((1.0 + u) * (1.0 + u));
    }

private:
    double p_, r_, k_, scale_;
};

} // namespace detail

struct MbirParams {
    double sigma_v = 0.0;              // projection noise standard deviation, > 0
    std::optional<double> sigma_x;     // prior scale; unset means 0.2 * mean |FBP|
    double p_exp = 1.2;
    double q_exp = 2.0;
    double threshold = 1.0;
    NeighborWeights weights{};
    bool prior_enabled = true;
    int max_iters = 20;
    double tolerance = 1e-4;           // relative cost change
    bool zero_skipping = true;
    std::uint64_t order_seed = 0x1cdu;

    bool operator==(const MbirParams&) const = default;

    void validate() const
    {
        if (!(sigma_v > 0.0) || !std::isfinite(sigma_v)) throw ConfigError("mbir: sigma_v must be positive");
        if (sigma_x && !(*sigma_x > 0.0)) throw ConfigError("mbir: sigma_x must be positive");
        if (q_exp != 2.0) throw ConfigError("mbir: q exponent is fixed at 2");
        if (!(p_exp > 1.0 && p_exp <= q_exp)) throw ConfigError("mbir: p exponent must lie in (1, 2]");
        if (!(threshold > 0.0)) throw ConfigError("mbir: threshold T must be positive");
        if (weights.nearest < 0 || weights.diagonal < 0 || weights.cross_slice < 0 ||
            weights.nearest + weights.diagonal + weights.cross_slice <= 0)
            throw ConfigError("mbir: neighbour weights must be non-negative and not all zero");
        if (max_iters < 0) throw ConfigError("mbir: max_iters must be non-negative");
        if (!(tolerance >= 0.0)) throw ConfigError("mbir: tolerance must be non-negative");
    }

    QggmrfPrior prior(double sx) const { return {p_exp, q_exp, threshold, sx}; }
};

inline double qggmrf_potential(double delta, const MbirParams& params)
{
    return params.prior(params.sigma_x.value_or(1.0)).potential(delta);
}

struct ReconResult {
    Tensor volume;                   // (N_r, N_c, N_c)
    std::vector<double> cost_trace;  // initial cost, then one entry per iteration
    int iterations = 0;
    bool converged = false;
    double sigma_x = 0.0;
    double sigma_v = 0.0;
};

/// Standard deviation of sinogram entries on air pixels of the detector
/// (air_mask has shape N_r x N_c and applies to every view).
inline double estimate_sigma_v(const Tensor& sino, std::span<const std::uint8_t> air_mask,
                               std::span<const std::uint8_t> valid = {})
{
    const std::size_t nv = sino.dim(0), pixels = sino.size() / nv;
    if (air_mask.size() != pixels) throw ShapeError("air mask must cover rows x cols");
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t pix = 0; pix < pixels; ++pix) {
            const std::size_t idx = v * pixels + pix;
            if (!air_mask[pix] || (!valid.empty() && !valid[idx])) continue;
            sum += sino[idx];
            sum2 += sino[idx] * sino[idx];
            ++n;
        }
    if (n < 2) throw DataError("too few air samples to estimate noise");
    const double mean = sum / static_cast<double>(n);
    return std::sqrt(std::max(0.0, sum2 / static_cast<double>(n) - mean * mean));
}

namespace detail {

struct Neighbor {
    int di, dj, dz;
    double weight;
};

inline std::vector<Neighbor> neighbor_stencil(const NeighborWeights& raw)
{
    const auto w = raw.normalized();
    return {{-1, 0, 0, w.nearest},  {1, 0, 0, w.nearest},   {0, -1, 0, w.nearest},  {0, 1, 0, w.nearest},
            {-1, -1, 0, w.diagonal}, {-1, 1, 0, w.diagonal}, {1, -1, 0, w.diagonal}, {1, 1, 0, w.diagonal},
            {0, 0, -1, w.cross_slice}, {0, 0, 1, w.cross_slice}};
}

/// Prior energy with each unordered neighbour pair counted once.
inline double prior_energy(const Tensor& volume, const QggmrfPrior& qg, const NeighborWeights& raw)
{
    const QuadraticQggmrf prior(qg);
    const auto w = raw.normalized();
    const auto nr = static_cast<std::ptrdiff_t>(volume.dim(0)), n = static_cast<std::ptrdiff_t>(volume.dim(1));
    const struct { int di, dj, dz; double weight; } forward[] = {
        {0, 1, 0, w.nearest}, {1, 0, 0, w.nearest}, {1, -1, 0, w.diagonal}, {1, 1, 0, w.diagonal}, {0, 0, 1, w.cross_slice}};
    double total = 0.0;
    for (std::ptrdiff_t z = 0; z < nr; ++z)
        for (std::ptrdiff_t i = 0; i < n; ++i)
            for (std::ptrdiff_t j = 0; j < n; ++j) {
                const double xs = volume(z, i, j);
                for (const auto& nb : forward) {
                    const auto zz = z + nb.dz, ii = i + nb.di, jj = j + nb.dj;
                    if (zz >= nr || ii < 0 || ii >= n || jj < 0 || jj >= n || nb.weight == 0.0) continue;
                    total += nb.weight * prior.potential(xs - volume(zz, ii, jj));
                }
            }
    return total;
}

} // namespace detail

/// Exact MBIR objective (1 / 2 sigma_v^2) ||y - A x||^2_valid + h(x).
inline double mbir_cost(const Tensor& sino, const Tensor& volume, const MbirParams& params, double sigma_x,
                        const Projector& projector, std::span<const std::uint8_t> valid = {})
{
    const Tensor ax = projector.project(volume);
    double data = 0.0;
    for (std::size_t i = 0; i < sino.size(); ++i)
        if (valid.empty() || valid[i]) data += (sino[i] - ax[i]) * (sino[i] - ax[i]);
    data /= 2.0 * params.sigma_v * params.sigma_v;
    if (!params.prior_enabled) return data;
    return data + detail::prior_energy(volume, params.prior(sigma_x), params.weights);
}

/// Iterative coordinate descent for
///   argmin_{x >= 0} (1 / 2 sigma_v^2) ||y - A x||^2 + sum_{pairs} b_sr rho(x_s - x_r).
///
/// Each voxel update minimises the exact data term plus the symmetric
/// quadratic surrogate of the prior, so the true objective never increases.
/// Even slices are swept before odd slices; slices of one parity only share
/// state through fixed neighbours, which keeps results independent of the
/// thread count.
inline ReconResult mbir_reconstruct(const Tensor& sino, const MbirParams& params, const Projector& projector,
                                    std::span<const std::uint8_t> valid = {}, const Tensor* init = nullptr)
{
    params.validate();
    require_shape(sino, projector.sinogram_dims(), "mbir_reconstruct");
    if (!valid.empty() && valid.size() != sino.size()) throw ShapeError("mbir: validity mask size mismatch");
    const bool masked = !valid.empty() && std::any_of(valid.begin(), valid.end(), [](auto m) { return m == 0; });

    const std::size_t nv = projector.n_views(), nr = projector.n_rows(), nc = projector.n_cols();
    const std::size_t meas = nv * nc, nvox = nc * nc;

    // Slice-major copies of the data and its weights; invalid entries hold 0.
    std::vector<double> y(nr * meas, 0.0);
    std::vector<std::uint8_t> w(masked ? nr * meas : 0, 1);
    Tensor filled = sino;
    for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t r = 0; r < nr; ++r)
            for (std::size_t c = 0; c < nc; ++c) {
                const std::size_t src = (v * nr + r) * nc + c, dst = r * meas + v * nc + c;
                const bool ok = valid.empty() || valid[src];
                if (ok && !std::isfinite(sino[src])) throw DataError("mbir: non-finite sinogram value");
                y[dst] = ok ? sino[src] : 0.0;
                filled[src] = y[dst];
                if (masked) w[dst] = ok ? 1 : 0;
            }

    ReconResult result;
    result.sigma_v = params.sigma_v;
    Tensor x;
    if (init) {
        require_shape(*init, projector.volume_dims(), "mbir initial volume");
        x = *init;
    } else {
        x = fbp_reconstruct(filled, projector);
    }
    double abs_sum = 0.0;
    std::size_t fov_count = 0;
    for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t vox = 0; vox < nvox; ++vox) {
            double& xv = x[r * nvox + vox];
            if (!projector.fov()[vox]) {
                xv = 0.0;
                continue;
            }
            abs_sum += std::abs(xv);
            ++fov_count;
            xv = std::max(xv, 0.0);
        }
    double sigma_x = params.sigma_x.value_or(0.2 * abs_sum / static_cast<double>(std::max<std::size_t>(1, fov_count)));
    if (!(sigma_x > 0.0)) sigma_x = 1.0;
    result.sigma_x = sigma_x;
    const detail::QuadraticQggmrf prior(params.prior(sigma_x));
    const auto stencil = detail::neighbor_stencil(params.weights);

    const auto& A = projector.columns();
    const auto* outer = A.outerIndexPtr();
    const auto* inner = A.innerIndexPtr();
    const double* values = A.valuePtr();
    const double inv_var = 1.0 / (params.sigma_v * params.sigma_v);

    // Error sinogram e = y - A x, slice-major.
    std::vector<double> e(y);
    {
        const Tensor ax = projector.project(x);
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t r = 0; r < nr; ++r)
                for (std::size_t c = 0; c < nc; ++c) {
                    const std::size_t dst = r * meas + v * nc + c;
                    e[dst] = masked && !w[dst] ? 0.0 : y[dst] - ax[(v * nr + r) * nc + c];
                }
    }

    // Column energies ||a_s||^2 (per slice when masked).
    std::vector<double> col_energy(nvox, 0.0);
    for (std::size_t vox = 0; vox < nvox; ++vox)
        for (auto k = outer[vox]; k < outer[vox + 1]; ++k) col_energy[vox] += values[k] * values[k];

    std::vector<std::size_t> order;
    for (std::size_t vox = 0; vox < nvox; ++vox)
        if (projector.fov()[vox]) order.push_back(vox);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(params.order_seed));

    auto cost = [&]() {
        double data = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i)
            if (!masked || w[i]) data += e[i] * e[i];
        data *= 0.5 * inv_var;
        return params.prior_enabled ? data + detail::prior_energy(x, params.prior(sigma_x), params.weights) : data;
    };

    const auto n = static_cast<std::ptrdiff_t>(nc), nz = static_cast<std::ptrdiff_t>(nr);
    auto sweep_slice = [&](std::size_t r, bool skip_zeros) {
        double* xs = x.data() + r * nvox;
        double* es = e.data() + r * meas;
        const std::uint8_t* ws = masked ? w.data() + r * meas : nullptr;
        for (std::size_t vox : order) {
            const auto i = static_cast<std::ptrdiff_t>(vox / nc), j = static_cast<std::ptrdiff_t>(vox % nc);
            const double cur = xs[vox];
            if (skip_zeros && cur == 0.0) {
                bool all_zero = true;
                for (int k = 0; k < 8 && all_zero; ++k) {
                    const auto ii = i + stencil[k].di, jj = j + stencil[k].dj;
                    if (ii >= 0 && ii < n && jj >= 0 && jj < n) all_zero = xs[ii * n + jj] == 0.0;
                }
                if (all_zero) continue;
            }
            double theta1 = 0.0, theta2 = 0.0;
            if (ws) {
                for (auto k = outer[vox]; k < outer[vox + 1]; ++k)
                    if (ws[inner[k]]) {
                        theta1 -= values[k] * es[inner[k]];
                        theta2 += values[k] * values[k];
                    }
            } else {
                for (auto k = outer[vox]; k < outer[vox + 1]; ++k) theta1 -= values[k] * es[inner[k]];
                theta2 = col_energy[vox];
            }
            theta1 *= inv_var;
            theta2 *= inv_var;

            double sum_b = 0.0, sum_bx = 0.0;
            if (params.prior_enabled) {
                for (const auto& nb : stencil) {
                    const auto zz = static_cast<std::ptrdiff_t>(r) + nb.dz, ii = i + nb.di, jj = j + nb.dj;
                    if (zz < 0 || zz >= nz || ii < 0 || ii >= n || jj < 0 || jj >= n || nb.weight == 0.0) continue;
                    const double xr = x[static_cast<std::size_t>(zz) * nvox + static_cast<std::size_t>(ii * n + jj)];
                    const double b = nb.weight * prior.surrogate_coefficient(cur - xr);
                    sum_b += b;
                    sum_bx += b * xr;
                }
            }
            const double denom = theta2 + 2.0 * sum_b;
            if (!(denom > 0.0)) continue;
            const double next = std::max(0.0, (theta2 * cur - theta1 + 2.0 * sum_bx) / denom);
            const double delta = next - cur;
            if (delta == 0.0) continue;
            xs[vox] = next;
            for (auto k = outer[vox]; k < outer[vox + 1]; ++k) es[inner[k]] -= values[k] * delta;
        }
    };

    double current = cost();
    result.cost_trace.push_back(current);
    for (int it = 0; it < params.max_iters; ++it) {
        const bool skip = params.zero_skipping && it > 0;
        for (std::size_t parity = 0; parity < 2; ++parity) {
            const std::size_t count = (nr + 1 - parity) / 2;
            parallel_for(0, count, [&](std::size_t s) { sweep_slice(2 * s + parity, skip); });
        }
        const double next = cost();
        result.cost_trace.push_back(next);
        ++result.iterations;
        const double change = current > 0.0 ? (current - next) / current : 0.0;
        current = next;
        if (current == 0.0 || change < params.tolerance) {
            result.converged = true;
            break;
        }
    }
    result.volume = std::move(x);
    return result;
}

} // namespace hsnct
