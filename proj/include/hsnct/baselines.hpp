#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstddef>
#include <vector>

#include "hsnct/core.hpp"
#include "hsnct/decomposition.hpp"
#include "hsnct/errors.hpp"
#include "hsnct/geometry.hpp"
#include "hsnct/nnls.hpp"
#include "hsnct/parallel.hpp"
#include "hsnct/subspace.hpp"
#include "hsnct/tensor.hpp"

namespace hsnct {

struct DhrResult {
    Tensor x_h;  // (N_r, N_c, N_c, N_k)
    std::size_t recon_count = 0;
    double recon_time = 0.0;
};

/// Sinogram of wavelength bin k with invalid entries set to 0.
inline Tensor bin_sinogram(const ProjectionStack& stack, std::size_t k)
{
    const std::size_t nk = stack.n_wavelengths();
    if (k >= nk) throw DomainError("wavelength bin out of range");
    Tensor sino({stack.n_views(), stack.n_rows(), stack.n_cols()});
    for (std::size_t i = 0; i < sino.size(); ++i) sino[i] = stack.valid[i * nk + k] ? stack.p[i * nk + k] : 0.0;
    return sino;
}

/// Direct hyperspectral reconstruction: one FBP per wavelength bin.
inline DhrResult dhr(const ProjectionStack& stack, const Projector& projector)
{
    stack.check();
    if (Dims{stack.n_views(), stack.n_rows(), stack.n_cols()} != projector.sinogram_dims())
        throw ShapeError("dhr: projections do not match the projector");
    const std::size_t nk = stack.n_wavelengths(), nvox = stack.n_rows() * stack.n_cols() * stack.n_cols();
    DhrResult out;
    out.x_h = Tensor({stack.n_rows(), stack.n_cols(), stack.n_cols(), nk});
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(0, nk, [&](std::size_t k) {
        const Tensor vol = fbp_reconstruct(bin_sinogram(stack, k), projector);
        for (std::size_t v = 0; v < nvox; ++v) out.x_h[v * nk + k] = vol[v];
    });
    out.recon_time = seconds_since(t0);
    out.recon_count = nk;
    return out;
}

struct RdmdResult {
    Tensor D_m;  // (N_k, N_m) region means of the DHR volumes
    Tensor V_m;  // (N_p, N_m) material projection views
    Tensor x_m;  // (N_r, N_c, N_c, N_m)
    std::size_t recon_count = 0;  // DHR plus material reconstructions
    double recon_time = 0.0;
};

/// Per-pixel NNLS of projections against material spectra: V_m (N_p, N_m).
inline Tensor unmix_projections(const ProjectionStack& stack, const Tensor& D_m)
{
    const std::size_t nk = stack.n_wavelengths(), np = stack.p.size() / nk, nm = D_m.dim(1);
    if (D_m.rank() != 2 || D_m.dim(0) != nk) throw ShapeError("unmix: spectra must be (N_k, N_m)");
    const ConstRowMatrixMap D = D_m.matrix();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(D);
    const auto sv = svd.singularValues();
    if (nm > nk || !(sv(sv.size() - 1) > 1e-10 * sv(0)))
        throw DecompositionError("material spectra are rank deficient; check the material regions");
    const Eigen::MatrixXd G = D.transpose() * D;
    Tensor V({np, nm});
    constexpr std::size_t chunk = 4096;
    parallel_for(0, (np + chunk - 1) / chunk, [&](std::size_t b) {
        for (std::size_t i = b * chunk; i < std::min(np, (b + 1) * chunk); ++i) {
            const std::uint8_t* ok = stack.valid.data() + i * nk;
            const double* row = stack.p.data() + i * nk;
            Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nm));
            bool full = true;
            for (std::size_t k = 0; k < nk; ++k) {
                if (!ok[k]) {
                    full = false;
                    continue;
                }
                c += row[k] * D.row(static_cast<Eigen::Index>(k)).transpose();
            }
            Eigen::VectorXd z;
            if (full) {
                z = nnls_gram(G, c);
            } else {
                Eigen::MatrixXd Gi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nm), static_cast<Eigen::Index>(nm));
                for (std::size_t k = 0; k < nk; ++k)
                    if (ok[k]) Gi += D.row(static_cast<Eigen::Index>(k)).transpose() * D.row(static_cast<Eigen::Index>(k));
                const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Gi, Eigen::EigenvaluesOnly);
                if (eig.eigenvalues()(0) > 1e-12 * eig.eigenvalues().maxCoeff())
                    z = nnls_gram(Gi, c);
                else
                    z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nm));
            }
            for (std::size_t m = 0; m < nm; ++m) V[i * nm + m] = z(static_cast<Eigen::Index>(m));
        }
    });
    return V;
}

/// Reconstruction-domain material decomposition. `dhr_volumes` may be
/// supplied to reuse an existing DHR result; otherwise DHR runs here.
inline RdmdResult rdmd(const ProjectionStack& stack, const Projector& projector, const RegionSet& regions,
                       const DhrResult* dhr_volumes = nullptr)
{
    stack.check();
    const std::size_t nr = stack.n_rows(), nc = stack.n_cols(), nv = stack.n_views();
    const std::size_t nvox = nr * nc * nc;
    regions.validate(nvox, 1);
    RdmdResult out;
    DhrResult local;
    const auto t0 = std::chrono::steady_clock::now();
    if (!dhr_volumes) {
        local = dhr(stack, projector);
        dhr_volumes = &local;
    }
    out.recon_count = dhr_volumes->recon_count;

    // Region means of every wavelength bin: T computed on x_h gives D_m^T.
    const Tensor means = compute_transform(dhr_volumes->x_h, regions);
    const std::size_t nm = regions.size(), nk = stack.n_wavelengths();
    out.D_m = Tensor({nk, nm});
    for (std::size_t k = 0; k < nk; ++k)
        for (std::size_t m = 0; m < nm; ++m) out.D_m(k, m) = means(m, k);

    out.V_m = unmix_projections(stack, out.D_m);
    out.x_m = Tensor({nr, nc, nc, nm});
    for (std::size_t m = 0; m < nm; ++m) {
        Tensor sino({nv, nr, nc});
        for (std::size_t i = 0; i < sino.size(); ++i) sino[i] = out.V_m[i * nm + m];
        const Tensor vol = fbp_reconstruct(sino, projector);
        for (std::size_t v = 0; v < nvox; ++v) out.x_m[v * nm + m] = vol[v];
        ++out.recon_count;
    }
    out.recon_time = seconds_since(t0) + (dhr_volumes == &local ? 0.0 : dhr_volumes->recon_time);
    return out;
}

} // namespace hsnct
