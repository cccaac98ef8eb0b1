#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "hsnct/core.hpp"
#include "hsnct/errors.hpp"
#include "hsnct/geometry.hpp"
#include "hsnct/mbir.hpp"
#include "hsnct/nnls.hpp"
#include "hsnct/parallel.hpp"
#include "hsnct/tensor.hpp"

namespace hsnct {

struct NmfOptions {
    int max_iters = 500;
    double tolerance = 1e-6;  // relative objective change
    int restarts = 3;
    int inner_updates = 10;    // multiplicative steps per factor between products with the data
    double view_ridge = 1e-4;  // final refit of V, relative to mean eigenvalue of D^T D; 0 disables

    bool operator==(const NmfOptions&) const = default;
};

/// p ~ V D^T with V, D >= 0.
struct SubspaceDecomposition {
    Tensor V;  // (N_p, N_s) subspace views
    Tensor D;  // (N_k, N_s) basis, each column max-normalised to 1
    double residual_fro = 0.0;
    double relative_residual = 0.0;
    std::size_t clamped_negatives = 0;
    std::size_t masked_entries = 0;
    std::vector<double> objective_trace;  // chosen restart: initial value then one per iteration
    std::vector<double> restart_residuals;
    int iterations = 0;
    std::size_t chosen_restart = 0;

    std::size_t n_subspace() const { return D.dim(1); }
};

namespace detail {

struct NmfRun {
    RowMatrix V, D;
    std::vector<double> trace;
    int iterations = 0;
};

struct MaskedEntry {
    std::size_t row, col;
};

inline double masked_model(const RowMatrix& V, const RowMatrix& D, const MaskedEntry& e)
{
    return V.row(static_cast<Eigen::Index>(e.row)).dot(D.row(static_cast<Eigen::Index>(e.col)));
}

/// Seeded start: |N(0, 1)| entries for both factors, scaled so that the sum
/// of V D^T matches the data sum.
inline NmfRun nmf_init(Eigen::Index np, Eigen::Index nk, std::size_t n_s, std::uint64_t seed, double data_sum)
{
    const auto ns = static_cast<Eigen::Index>(n_s);
    NmfRun run;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    run.V.resize(np, ns);
    for (Eigen::Index i = 0; i < np; ++i)
        for (Eigen::Index j = 0; j < ns; ++j) run.V(i, j) = std::abs(gauss(rng));
    run.D.resize(nk, ns);
    for (Eigen::Index k = 0; k < nk; ++k)
        for (Eigen::Index j = 0; j < ns; ++j) run.D(k, j) = std::abs(gauss(rng));
    const double model_sum = run.V.colwise().sum().dot(run.D.colwise().sum());
    if (model_sum > 0.0 && data_sum > 0.0) {
        const double scale = std::sqrt(data_sum / model_sum);
        run.V *= scale;
        run.D *= scale;
    }
    run.D.array() += std::numeric_limits<double>::min();
    return run;
}

/// Lee-Seung multiplicative updates on ||W o (X - V D^T)||_F^2 from `run`.
/// Masked entries are imputed with the current model at the start of each
/// iteration, which majorises the masked objective, so every recorded value
/// of the true masked objective is non-increasing.
inline NmfRun nmf_iterate(const RowMatrix& X, double x_norm2, const std::vector<MaskedEntry>& masked, NmfRun run,
                          const NmfOptions& opt)
{
    constexpr double tiny = std::numeric_limits<double>::min();
    run.trace.clear();
    run.iterations = 0;

    std::vector<double> impute(masked.size());
    auto true_objective = [&](double g) {
        double diff = 0.0;
        for (std::size_t e = 0; e < masked.size(); ++e) {
            const double d = impute[e] - masked_model(run.V, run.D, masked[e]);
            diff += d * d;
        }
        return std::max(0.0, g - diff);
    };

    for (std::size_t e = 0; e < masked.size(); ++e) impute[e] = masked_model(run.V, run.D, masked[e]);
    double imputed_norm2 = x_norm2;
    for (double m : impute) imputed_norm2 += m * m;
    {
        RowMatrix XD = X * run.D;
        for (std::size_t e = 0; e < masked.size(); ++e)
            XD.row(static_cast<Eigen::Index>(masked[e].row)) += impute[e] * run.D.row(static_cast<Eigen::Index>(masked[e].col));
        const RowMatrix gram = (run.V.transpose() * run.V).cwiseProduct(run.D.transpose() * run.D);
        run.trace.push_back(std::max(0.0, imputed_norm2 - 2.0 * run.V.cwiseProduct(XD).sum() + gram.sum()));
    }

    for (int it = 0; it < opt.max_iters; ++it) {
        for (std::size_t e = 0; e < masked.size(); ++e) impute[e] = masked_model(run.V, run.D, masked[e]);
        imputed_norm2 = x_norm2;
        for (double m : impute) imputed_norm2 += m * m;

        RowMatrix XD = X * run.D;
        for (std::size_t e = 0; e < masked.size(); ++e)
            XD.row(static_cast<Eigen::Index>(masked[e].row)) += impute[e] * run.D.row(static_cast<Eigen::Index>(masked[e].col));
        const RowMatrix DtD = run.D.transpose() * run.D;
        for (int inner = 0; inner < opt.inner_updates; ++inner) {
            const RowMatrix den_v = run.V * DtD;
            run.V.array() *= XD.array() / (den_v.array() + tiny);
        }

        RowMatrix XtV = X.transpose() * run.V;
        for (std::size_t e = 0; e < masked.size(); ++e)
            XtV.row(static_cast<Eigen::Index>(masked[e].col)) += impute[e] * run.V.row(static_cast<Eigen::Index>(masked[e].row));
        const RowMatrix VtV = run.V.transpose() * run.V;
        for (int inner = 0; inner < opt.inner_updates; ++inner) {
            const RowMatrix den_d = run.D * VtV;
            run.D.array() *= XtV.array() / (den_d.array() + tiny);
        }

        const double g = imputed_norm2 - 2.0 * run.D.cwiseProduct(XtV).sum() + VtV.cwiseProduct(run.D.transpose() * run.D).sum();
        const double f = true_objective(g);
        const double prev = run.trace.back();
        run.trace.push_back(f);
        run.iterations = it + 1;
        if (f == 0.0 || (prev > 0.0 && (prev - f) / prev < opt.tolerance)) break;
    }
    return run;
}

inline NmfRun nmf_run(const RowMatrix& X, double x_norm2, const std::vector<MaskedEntry>& masked, std::size_t n_s,
                      std::uint64_t seed, const NmfOptions& opt)
{
    return nmf_iterate(X, x_norm2, masked, nmf_init(X.rows(), X.cols(), n_s, seed, X.sum()), opt);
}

/// Residual sum of squares over valid entries, evaluated blockwise.
inline double nmf_residual2(const RowMatrix& X, const std::vector<MaskedEntry>& masked, const RowMatrix& V,
                            const RowMatrix& D)
{
    constexpr Eigen::Index block = 2048;
    double total = 0.0;
    for (Eigen::Index r0 = 0; r0 < X.rows(); r0 += block) {
        const auto rows = std::min(block, X.rows() - r0);
        total += (X.middleRows(r0, rows) - V.middleRows(r0, rows) * D.transpose()).squaredNorm();
    }
    for (const auto& e : masked) {
        const double m = masked_model(V, D, e);
        total -= m * m;  // masked X entries are stored as 0
    }
    return std::max(0.0, total);
}

/// Iterated Tikhonov refit of the rows of V against the fixed basis D:
/// z_0 = 0, z_{t+1} = argmin_{z >= 0} ||(z - v) D^T||^2 + eps ||z - z_t||^2,
/// eps = ridge * trace(D^T D) / N_s. Directions of D with eigenvalue well
/// above eps are restored to within (eps / lambda)^steps, while components
/// along near-null directions of D, which the product V D^T cannot see,
/// stay near zero.
inline void min_norm_views(RowMatrix& V, const RowMatrix& D, double ridge, int steps = 3)
{
    const Eigen::MatrixXd G = D.transpose() * D;
    const auto ns = G.rows();
    const double eps = ridge * G.trace() / static_cast<double>(ns);
    if (!(eps > 0.0)) return;
    const Eigen::MatrixXd Gr = G + eps * Eigen::MatrixXd::Identity(ns, ns);
    const auto np = static_cast<std::size_t>(V.rows());
    constexpr std::size_t chunk = 4096;
    parallel_for(0, (np + chunk - 1) / chunk, [&](std::size_t b) {
        for (std::size_t i = b * chunk; i < std::min(np, (b + 1) * chunk); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const Eigen::VectorXd target = G * V.row(r).transpose();
            Eigen::VectorXd z = Eigen::VectorXd::Zero(ns);
            for (int t = 0; t < steps; ++t) z = nnls_gram(Gr, target + eps * z);
            V.row(r) = z.transpose();
        }
    });
}

} // namespace detail

/// Non-negative factorisation of the projection matrix (N_p x N_k) into N_s
/// components. Negative valid entries are clamped to 0; invalid entries are
/// excluded from the objective.
inline SubspaceDecomposition nmf_extract(const ProjectionStack& stack, std::size_t n_s, std::uint64_t seed,
                                         const NmfOptions& opt = {})
{
    const Tensor& p = stack.p;
    if (p.rank() < 2) throw ShapeError("nmf: projections need a trailing wavelength axis");
    if (stack.valid.size() != p.size()) throw ShapeError("nmf: validity mask does not match projections");
    const std::size_t nk = p.dims().back(), np = p.size() / nk;
    if (n_s < 1 || n_s > nk) throw ConfigError("nmf: N_s must lie in [1, N_k]");
    if (opt.restarts < 1 || opt.max_iters < 0 || opt.inner_updates < 1 || !(opt.tolerance >= 0.0) || !(opt.view_ridge >= 0.0)) throw ConfigError("nmf: invalid solver options");

    SubspaceDecomposition out;
    RowMatrix X(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(nk));
    std::vector<detail::MaskedEntry> masked;
    double x_norm2 = 0.0;
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t k = 0; k < nk; ++k) {
            const std::size_t idx = i * nk + k;
            double v = 0.0;
            if (stack.valid[idx]) {
                v = p[idx];
                if (!std::isfinite(v)) throw DataError("nmf: non-finite projection value");
                if (v < 0.0) {
                    ++out.clamped_negatives;
                    v = 0.0;
                }
            } else {
                masked.push_back({i, k});
            }
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
            x_norm2 += v * v;
        }
    out.masked_entries = masked.size();
    if (x_norm2 == 0.0) throw DataError("nmf: projections are identically zero");

    std::vector<detail::NmfRun> runs(static_cast<std::size_t>(opt.restarts));
    parallel_for(0, runs.size(), [&](std::size_t r) { runs[r] = detail::nmf_run(X, x_norm2, masked, n_s, seed + r, opt); });

    std::size_t best = 0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        out.restart_residuals.push_back(std::sqrt(detail::nmf_residual2(X, masked, runs[r].V, runs[r].D)));
        if (out.restart_residuals[r] < out.restart_residuals[best]) best = r;
    }
    auto& run = runs[best];
    if (opt.view_ridge > 0.0) {
        detail::min_norm_views(run.V, run.D, opt.view_ridge);
        out.residual_fro = std::sqrt(detail::nmf_residual2(X, masked, run.V, run.D));
    } else {
        out.residual_fro = out.restart_residuals[best];
    }

    for (Eigen::Index j = 0; j < run.D.cols(); ++j) {
        const double scale = run.D.col(j).maxCoeff();
        if (scale > 0.0) {
            run.D.col(j) /= scale;
            run.V.col(j) *= scale;
        }
    }
    std::vector<std::size_t> order(n_s);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> energy(n_s);
    for (std::size_t j = 0; j < n_s; ++j) energy[j] = run.V.col(static_cast<Eigen::Index>(j)).norm();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return energy[a] > energy[b]; });

    out.V = Tensor({np, n_s});
    out.D = Tensor({nk, n_s});
    for (std::size_t j = 0; j < n_s; ++j) {
        const auto src = static_cast<Eigen::Index>(order[j]);
        for (std::size_t i = 0; i < np; ++i) out.V[i * n_s + j] = run.V(static_cast<Eigen::Index>(i), src);
        for (std::size_t k = 0; k < nk; ++k) out.D[k * n_s + j] = run.D(static_cast<Eigen::Index>(k), src);
    }
    out.relative_residual = out.residual_fro / std::sqrt(x_norm2);
    out.objective_trace = std::move(run.trace);
    out.iterations = run.iterations;
    out.chosen_restart = best;
    return out;
}

/// One axial slab of x_h = x_s D_s^T: (N_c, N_c, N_k) from x_s (N_r, N_c, N_c, N_s).
inline Tensor expand_slab(const Tensor& x_s, const Tensor& D_s, std::size_t slice)
{
    if (x_s.rank() != 4) throw ShapeError("expand_slab: x_s must be (rows, cols, cols, N_s)");
    if (D_s.rank() != 2 || D_s.dim(1) != x_s.dim(3)) throw ShapeError("expand_slab: basis does not match x_s channels");
    if (slice >= x_s.dim(0)) throw DomainError("expand_slab: slice index out of range");
    const std::size_t ns = x_s.dim(3), nk = D_s.dim(0), nvox = x_s.dim(1) * x_s.dim(2);
    Tensor slab({x_s.dim(1), x_s.dim(2), nk});
    ConstRowMatrixMap xs(x_s.data() + slice * nvox * ns, static_cast<Eigen::Index>(nvox), static_cast<Eigen::Index>(ns));
    slab.matrix(nvox).noalias() = xs * D_s.matrix().transpose();
    return slab;
}

/// x_h = x_s D_s^T for x_s of shape (..., N_s); result has shape (..., N_k).
inline Tensor expand(const Tensor& x_s, const Tensor& D_s)
{
    if (x_s.rank() < 1 || D_s.rank() != 2 || D_s.dim(1) != x_s.dims().back())
        throw ShapeError("expand: basis " + shape_string(D_s.dims()) + " does not match x_s " + shape_string(x_s.dims()));
    const std::size_t ns = D_s.dim(1), nk = D_s.dim(0), rows = x_s.size() / ns;
    Dims dims = x_s.dims();
    dims.back() = nk;
    Tensor out(dims);
    out.matrix(rows).noalias() = x_s.matrix(rows) * D_s.matrix().transpose();
    return out;
}

/// Streams x_h slab by slab to `sink(slice, slab)`.
inline void expand_streamed(const Tensor& x_s, const Tensor& D_s, const std::function<void(std::size_t, const Tensor&)>& sink)
{
    for (std::size_t r = 0; r < x_s.dim(0); ++r) sink(r, expand_slab(x_s, D_s, r));
}

inline MbirParams fhr_mbir_defaults()
{
    MbirParams p;
    p.max_iters = 6;
    return p;
}

struct FhrOptions {
    std::size_t n_subspace = 9;
    std::uint64_t nmf_seed = 0;
    NmfOptions nmf{};
    MbirParams mbir = fhr_mbir_defaults(); // sigma_v <= 0 means estimate per channel
    std::vector<std::uint8_t> air_mask; // detector rows x cols known to see only air
    double sigma_v_floor = 1e-3;        // relative to the channel's peak value
};

struct StageTimes {
    double decompose = 0.0;
    double reconstruct = 0.0;
    double expand = 0.0;
};

struct FhrResult {
    SubspaceDecomposition subspace;
    Tensor x_s;                         // (N_r, N_c, N_c, N_s)
    std::vector<ReconResult> channels;  // per-channel diagnostics; volumes moved into x_s
    std::size_t recon_count = 0;
    StageTimes times;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Sinogram of subspace channel j, (N_v, N_r, N_c), from V (N_p, N_s).
inline Tensor subspace_sinogram(const Tensor& V, std::size_t j, std::size_t n_views, std::size_t n_rows, std::size_t n_cols)
{
    const std::size_t ns = V.dim(1);
    if (j >= ns || V.dim(0) != n_views * n_rows * n_cols) throw ShapeError("subspace sinogram: shape mismatch");
    Tensor sino({n_views, n_rows, n_cols});
    for (std::size_t i = 0; i < sino.size(); ++i) sino[i] = V[i * ns + j];
    return sino;
}

inline double channel_sigma_v(const Tensor& sino, const FhrOptions& opt)
{
    if (opt.mbir.sigma_v > 0.0) return opt.mbir.sigma_v;
    if (opt.air_mask.empty()) throw ConfigError("fhr: sigma_v not set and no air mask to estimate it");
    double peak = 0.0;
    for (double v : sino.values()) peak = std::max(peak, std::abs(v));
    const double floor = peak > 0.0 ? opt.sigma_v_floor * peak : 1.0;
    return std::max(estimate_sigma_v(sino, opt.air_mask), floor);
}

/// NMF of p followed by one MBIR reconstruction per subspace channel.
inline FhrResult fhr_reconstruct(const ProjectionStack& stack, const Projector& projector, const FhrOptions& opt)
{
    stack.check();
    const std::size_t nv = stack.n_views(), nr = stack.n_rows(), nc = stack.n_cols();
    if (Dims{nv, nr, nc} != projector.sinogram_dims()) throw ShapeError("fhr: projections do not match the projector");

    FhrResult out;
    auto t0 = std::chrono::steady_clock::now();
    bool zero = true;
    for (std::size_t i = 0; i < stack.p.size() && zero; ++i) zero = !(stack.valid[i] && stack.p[i] > 0.0);
    if (zero) {
        // Nothing to factor: the zero subspace reproduces the data exactly.
        if (opt.n_subspace < 1 || opt.n_subspace > stack.n_wavelengths()) throw ConfigError("nmf: N_s must lie in [1, N_k]");
        out.subspace.V = Tensor({stack.n_projections(), opt.n_subspace});
        out.subspace.D = Tensor({stack.n_wavelengths(), opt.n_subspace});
    } else {
        out.subspace = nmf_extract(stack, opt.n_subspace, opt.nmf_seed, opt.nmf);
    }
    out.times.decompose = seconds_since(t0);

    const std::size_t ns = opt.n_subspace, nvox = nr * nc * nc;
    out.x_s = Tensor({nr, nc, nc, ns});
    t0 = std::chrono::steady_clock::now();
    for (std::size_t j = 0; j < ns; ++j) {
        const Tensor sino = subspace_sinogram(out.subspace.V, j, nv, nr, nc);
        MbirParams params = opt.mbir;
        params.sigma_v = channel_sigma_v(sino, opt);
        ReconResult rec = mbir_reconstruct(sino, params, projector);
        ++out.recon_count;
        for (std::size_t n = 0; n < nvox; ++n) out.x_s[n * ns + j] = rec.volume[n];
        rec.volume = Tensor();
        out.channels.push_back(std::move(rec));
    }
    out.times.reconstruct = seconds_since(t0);
    return out;
}

/// Materialises x_h (N_r, N_c, N_c, N_k) and records the expansion time.
inline Tensor fhr_expand(FhrResult& result)
{
    const auto t0 = std::chrono::steady_clock::now();
    Tensor xh = expand(result.x_s, result.subspace.D);
    result.times.expand = seconds_since(t0);
    return xh;
}

/// Algorithm-level FHR: fhr_reconstruct followed by expansion. With a sink
/// the slabs are streamed and nothing is materialised; otherwise x_h is
/// returned with shape (N_r, N_c, N_c, N_k).
inline Tensor fhr_pipeline(const ProjectionStack& stack, const Projector& projector, const FhrOptions& opt,
                           FhrResult& result, const std::function<void(std::size_t, const Tensor&)>& sink = {})
{
    result = fhr_reconstruct(stack, projector, opt);
    if (!sink) return fhr_expand(result);
    const auto t0 = std::chrono::steady_clock::now();
    expand_streamed(result.x_s, result.subspace.D, sink);
    result.times.expand = seconds_since(t0);
    return Tensor();
}

} // namespace hsnct
