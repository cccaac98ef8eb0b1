#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "hsnct/core.hpp"
#include "hsnct/errors.hpp"
#include "hsnct/gmm.hpp"
#include "hsnct/morphology.hpp"
#include "hsnct/nnls.hpp"
#include "hsnct/parallel.hpp"
#include "hsnct/subspace.hpp"
#include "hsnct/tensor.hpp"

namespace hsnct {

/// Inclusive axis-aligned box: in-plane row r, in-plane column c, slice s.
struct Cuboid {
    std::size_t r0 = 0, c0 = 0, s0 = 0;
    std::size_t r1 = 0, c1 = 0, s1 = 0;

    bool operator==(const Cuboid&) const = default;
};

/// One voxel index set per material, indices into a (N_r, N_c, N_c) volume.
struct RegionSet {
    enum class Source { user, clustered };

    std::vector<std::string> names;
    std::vector<std::vector<std::size_t>> voxels;
    Source source = Source::user;

    std::size_t size() const { return voxels.size(); }

    static RegionSet from_cuboids(const std::vector<std::string>& names, const std::vector<Cuboid>& boxes,
                                  std::size_t n_slices, std::size_t n_cols)
    {
        if (names.size() != boxes.size()) throw ConfigError("regions: one cuboid per material name");
        RegionSet set;
        set.names = names;
        for (const auto& b : boxes) {
            if (b.r0 > b.r1 || b.c0 > b.c1 || b.s0 > b.s1) throw ConfigError("regions: cuboid corners out of order");
            if (b.r1 >= n_cols || b.c1 >= n_cols || b.s1 >= n_slices) throw ConfigError("regions: cuboid exceeds the volume");
            std::vector<std::size_t> v;
            for (std::size_t s = b.s0; s <= b.s1; ++s)
                for (std::size_t r = b.r0; r <= b.r1; ++r)
                    for (std::size_t c = b.c0; c <= b.c1; ++c) v.push_back((s * n_cols + r) * n_cols + c);
            set.voxels.push_back(std::move(v));
        }
        return set;
    }

    /// Throws on out-of-range indices, overlap, or a region below min_size.
    void validate(std::size_t n_voxels, std::size_t min_size) const
    {
        if (voxels.empty()) throw ConfigError("regions: no materials");
        std::vector<std::uint8_t> owner(n_voxels, 0);
        for (std::size_t m = 0; m < voxels.size(); ++m) {
            const std::string name = m < names.size() ? names[m] : "material " + std::to_string(m);
            if (voxels[m].size() < std::max<std::size_t>(1, min_size))
                throw DegenerateRegionError("region '" + name + "' has " + std::to_string(voxels[m].size()) +
                                                " voxels, below the minimum of " + std::to_string(min_size),
                                            m);
            for (std::size_t v : voxels[m]) {
                if (v >= n_voxels) throw DataError("region '" + name + "' indexes outside the volume");
                if (owner[v]) throw DataError("regions overlap at voxel " + std::to_string(v));
                owner[v] = 1;
            }
        }
    }

    RegionSet permuted(const std::vector<std::size_t>& order) const
    {
        RegionSet out;
        out.source = source;
        for (std::size_t m : order) {
            out.names.push_back(m < names.size() ? names[m] : std::string());
            out.voxels.push_back(voxels.at(m));
        }
        return out;
    }
};

namespace detail {

inline std::size_t channel_count(const Tensor& x_s)
{
    if (x_s.rank() < 2) throw ShapeError("x_s needs a trailing channel axis");
    return x_s.dims().back();
}

} // namespace detail

/// T[i, j] = mean of x_s[n, j] over n in M_i.
inline Tensor compute_transform(const Tensor& x_s, const RegionSet& regions)
{
    const std::size_t ns = detail::channel_count(x_s), nvox = x_s.size() / ns;
    Tensor T({regions.size(), ns});
    for (std::size_t m = 0; m < regions.size(); ++m) {
        const auto& set = regions.voxels[m];
        if (set.empty()) throw DegenerateRegionError("region " + std::to_string(m) + " is empty", m);
        std::vector<double> acc(ns, 0.0);
        for (std::size_t v : set) {
            if (v >= nvox) throw DataError("region indexes outside x_s");
            for (std::size_t j = 0; j < ns; ++j) acc[j] += x_s[v * ns + j];
        }
        for (std::size_t j = 0; j < ns; ++j) T(m, j) = acc[j] / static_cast<double>(set.size());
    }
    return T;
}

/// Per-voxel NNLS: row n of x_m minimises ||x_s[n, .] - z T||^2 over z >= 0.
inline Tensor estimate_materials(const Tensor& x_s, const Tensor& T)
{
    const std::size_t ns = detail::channel_count(x_s), nvox = x_s.size() / ns;
    if (T.rank() != 2 || T.dim(1) != ns) throw ShapeError("estimate_materials: T must be (N_m, N_s)");
    const std::size_t nm = T.dim(0);
    const ConstRowMatrixMap Tm = T.matrix();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(Tm);
    const auto sv = svd.singularValues();
    if (nm > ns || sv.size() < static_cast<Eigen::Index>(nm) || !(sv(sv.size() - 1) > 1e-10 * sv(0)))
        throw DecompositionError("transformation matrix is rank deficient; check that the material regions are distinct");

    const Eigen::MatrixXd G = Tm * Tm.transpose();
    Dims dims = x_s.dims();
    dims.back() = nm;
    Tensor x_m(dims);
    constexpr std::size_t chunk = 4096;
    parallel_for(0, (nvox + chunk - 1) / chunk, [&](std::size_t b) {
        for (std::size_t n = b * chunk; n < std::min(nvox, (b + 1) * chunk); ++n) {
            const Eigen::Map<const Eigen::VectorXd> row(x_s.data() + n * ns, static_cast<Eigen::Index>(ns));
            const Eigen::VectorXd z = nnls_gram(G, Tm * row);
            for (std::size_t m = 0; m < nm; ++m) x_m[n * nm + m] = z(static_cast<Eigen::Index>(m));
        }
    });
    return x_m;
}

/// D_m = D_s T^T, (N_k, N_m).
inline Tensor estimate_spectra(const Tensor& D_s, const Tensor& T)
{
    if (D_s.rank() != 2 || T.rank() != 2 || D_s.dim(1) != T.dim(1))
        throw ShapeError("estimate_spectra: D_s " + shape_string(D_s.dims()) + " and T " + shape_string(T.dims()) + " disagree");
    Tensor D_m({D_s.dim(0), T.dim(0)});
    D_m.matrix().noalias() = D_s.matrix() * T.matrix().transpose();
    return D_m;
}

/// Bins k (jump between k-1 and k) of the n largest positive jumps of each
/// spectrum column, at least `separation` bins apart, in increasing order.
inline std::vector<std::vector<std::size_t>> bragg_edges(const Tensor& spectra, std::size_t n_edges, std::size_t separation = 3)
{
    if (spectra.rank() != 2) throw ShapeError("bragg_edges: spectra must be (N_k, N_m)");
    const std::size_t nk = spectra.dim(0), nm = spectra.dim(1);
    std::vector<std::vector<std::size_t>> out(nm);
    for (std::size_t m = 0; m < nm; ++m) {
        std::vector<std::pair<double, std::size_t>> jumps;
        for (std::size_t k = 1; k < nk; ++k) {
            const double d = spectra(k, m) - spectra(k - 1, m);
            if (d > 0.0) jumps.emplace_back(d, k);
        }
        std::stable_sort(jumps.begin(), jumps.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (const auto& [d, k] : jumps) {
            if (out[m].size() >= n_edges) break;
            const bool clear = std::none_of(out[m].begin(), out[m].end(), [&](std::size_t e) {
                return (e > k ? e - k : k - e) < separation;
            });
            if (clear) out[m].push_back(k);
        }
        std::sort(out[m].begin(), out[m].end());
    }
    return out;
}

struct ClusterOptions {
    GmmOptions gmm{};
    std::size_t min_region = 50;
    std::vector<std::uint8_t> support;  // in-plane (N_c x N_c) mask of voxels to cluster; empty means all
};

struct ClusterDiagnostics {
    GmmFit fit;
    std::size_t background = 0;
    std::vector<std::size_t> raw_counts;  // per material before morphology
};

/// GMM clustering of subspace voxel vectors into N_m materials plus
/// background, followed by per-slice closing and erosion with an N_q x N_q
/// square. x_s has shape (N_r, N_c, N_c, N_s).
inline RegionSet cluster_segment(const Tensor& x_s, std::size_t n_materials, std::size_t window, std::uint64_t seed,
                                 const ClusterOptions& opt = {}, ClusterDiagnostics* diag = nullptr)
{
    if (x_s.rank() != 4 || x_s.dim(1) != x_s.dim(2)) throw ShapeError("cluster_segment: x_s must be (N_r, N_c, N_c, N_s)");
    if (n_materials < 1) throw ConfigError("cluster_segment: need at least one material");
    const SquareElement se(window);
    const std::size_t nr = x_s.dim(0), nc = x_s.dim(1), ns = x_s.dim(3), plane = nc * nc;
    if (!opt.support.empty() && opt.support.size() != plane) throw ShapeError("cluster_segment: support mask must be N_c x N_c");
    if (!all_finite(x_s.values())) throw DataError("cluster_segment: non-finite subspace values");

    std::vector<std::size_t> points;
    for (std::size_t v = 0; v < nr * plane; ++v)
        if (opt.support.empty() || opt.support[v % plane]) points.push_back(v);
    RowMatrix X(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(ns));
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < ns; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x_s[points[i] * ns + j];

    GmmOptions gopt = opt.gmm;
    gopt.seed = seed;
    GmmFit fit = fit_gmm(X, n_materials + 1, gopt);
    for (std::size_t k = 0; k < fit.counts.size(); ++k)
        if (fit.counts[k] == 0)
            throw ClusteringError("gmm produced an empty cluster (" + std::to_string(k) + " of " +
                                  std::to_string(n_materials + 1) + "); try another gmm_seed or fewer materials");

    std::vector<std::size_t> order(n_materials + 1);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> norms(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) norms[k] = fit.means.row(static_cast<Eigen::Index>(k)).norm();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
    const std::size_t background = order.back();
    order.pop_back();

    std::vector<int> label(nr * plane, -1);
    for (std::size_t i = 0; i < points.size(); ++i) label[points[i]] = fit.labels[i];

    RegionSet set;
    set.source = RegionSet::Source::clustered;
    std::vector<std::vector<std::uint8_t>> masks(n_materials, std::vector<std::uint8_t>(nr * plane, 0));
    std::vector<std::size_t> raw(n_materials, 0);
    parallel_for(0, n_materials * nr, [&](std::size_t task) {
        const std::size_t m = task / nr, s = task % nr;
        BinarySlice slice(nc, nc);
        for (std::size_t p = 0; p < plane; ++p) slice.data[p] = label[s * plane + p] == static_cast<int>(order[m]);
        const BinarySlice out = erode(close(slice, se), se);
        std::copy(out.data.begin(), out.data.end(), masks[m].begin() + static_cast<std::ptrdiff_t>(s * plane));
    });
    for (std::size_t m = 0; m < n_materials; ++m)
        for (std::size_t v = 0; v < nr * plane; ++v) raw[m] += label[v] == static_cast<int>(order[m]);

    // Closing can let neighbouring materials claim the same voxel; such voxels are dropped.
    for (std::size_t v = 0; v < nr * plane; ++v) {
        int claims = 0;
        for (std::size_t m = 0; m < n_materials; ++m) claims += masks[m][v];
        if (claims > 1)
            for (std::size_t m = 0; m < n_materials; ++m) masks[m][v] = 0;
    }
    for (std::size_t m = 0; m < n_materials; ++m) {
        set.names.push_back("cluster" + std::to_string(m + 1));
        std::vector<std::size_t> vox;
        for (std::size_t v = 0; v < nr * plane; ++v)
            if (masks[m][v]) vox.push_back(v);
        set.voxels.push_back(std::move(vox));
    }
    if (diag) {
        diag->fit = std::move(fit);
        diag->background = background;
        diag->raw_counts = raw;
    }
    set.validate(nr * plane, opt.min_region);
    return set;
}

struct FmdOptions {
    FhrOptions fhr{};
    std::size_t n_materials = 3;
    std::size_t window = 4;
    std::uint64_t gmm_seed = 0;
    ClusterOptions cluster{};
    std::size_t n_edges = 3;
};

struct FmdResult {
    RegionSet regions;
    Tensor T;    // (N_m, N_s)
    Tensor x_m;  // (N_r, N_c, N_c, N_m)
    Tensor D_m;  // (N_k, N_m)
    std::vector<std::vector<std::size_t>> edges;
    bool unsupervised = false;
    std::size_t fractions_above_one = 0;
    std::size_t negative_spectrum_values = 0;
    double cluster_time = 0.0;
    double decompose_time = 0.0;
};

/// Back half of FMD on an existing subspace reconstruction.
inline FmdResult fmd_from_subspace(const Tensor& x_s, const Tensor& D_s, const FmdOptions& opt,
                                   const RegionSet* regions = nullptr)
{
    if (x_s.rank() != 4) throw ShapeError("fmd: x_s must be (N_r, N_c, N_c, N_s)");
    const std::size_t nvox = x_s.size() / x_s.dims().back();
    FmdResult out;
    auto t0 = std::chrono::steady_clock::now();
    if (regions && regions->size() > 0) {
        regions->validate(nvox, opt.cluster.min_region);
        if (regions->size() != opt.n_materials)
            throw ConfigError("fmd: " + std::to_string(regions->size()) + " regions given for " +
                              std::to_string(opt.n_materials) + " materials");
        out.regions = *regions;
    } else {
        out.unsupervised = true;
        out.regions = cluster_segment(x_s, opt.n_materials, opt.window, opt.gmm_seed, opt.cluster);
    }
    out.cluster_time = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    out.T = compute_transform(x_s, out.regions);
    out.x_m = estimate_materials(x_s, out.T);
    out.D_m = estimate_spectra(D_s, out.T);
    out.decompose_time = seconds_since(t0);
    out.edges = bragg_edges(out.D_m, opt.n_edges);
    for (double v : out.x_m.values()) out.fractions_above_one += v > 1.0;
    for (double v : out.D_m.values()) out.negative_spectrum_values += v < 0.0;
    return out;
}

/// Algorithm-level FMD: NMF, N_s MBIR reconstructions, then region
/// identification (clustering when no regions are given), transform,
/// per-voxel NNLS and spectra.
inline FmdResult fmd_pipeline(const ProjectionStack& stack, const Projector& projector, const FmdOptions& opt,
                              const RegionSet* regions, FhrResult& subspace)
{
    if (!(opt.n_materials < opt.fhr.n_subspace)) throw ConfigError("fmd: N_m must be smaller than N_s");
    subspace = fhr_reconstruct(stack, projector, opt.fhr);
    return fmd_from_subspace(subspace.x_s, subspace.subspace.D, opt, regions);
}

} // namespace hsnct
