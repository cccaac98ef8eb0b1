#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "hsnct/core.hpp"
#include "hsnct/decomposition.hpp"
#include "hsnct/errors.hpp"
#include "hsnct/geometry.hpp"
#include "hsnct/parallel.hpp"
#include "hsnct/tensor.hpp"
#include "hsnct/tensor_io.hpp"

namespace hsnct {

/// Cylinder along the slice axis; centre offset (cx, cy) from the rotation
/// axis in voxels, x to the right and y up.
struct Cylinder {
    std::size_t material = 0;
    double cx = 0.0, cy = 0.0, radius = 0.0;
    std::size_t s0 = 0, s1 = 0;  // inclusive slice range

    bool operator==(const Cylinder&) const = default;
};

struct Block {
    std::size_t material = 0;
    Cuboid box;

    bool operator==(const Block&) const = default;
};

struct Layout {
    std::vector<std::string> materials;
    std::vector<Cylinder> cylinders;
    std::vector<Block> blocks;

    bool operator==(const Layout&) const = default;

    /// Two powder cylinders (Ni, Cu) inside a hollow rectangular Al frame,
    /// leaving `air_rows` empty slices at the top and bottom.
    static Layout frame_preset(const ScanParams& scan, std::size_t air_rows)
    {
        const double n = static_cast<double>(scan.n_cols);
        const double c = 0.5 * (n - 1);
        if (scan.n_rows <= 2 * air_rows) throw ConfigError("preset: not enough slices for the air margin");
        const std::size_t s0 = air_rows, s1 = scan.n_rows - 1 - air_rows;
        auto idx = [&](double v) { return static_cast<std::size_t>(std::lround(c + v * n)); };
        // Frame bounds as fractions of the width, inside the inscribed circle.
        const std::size_t top = idx(-0.34), bottom = idx(0.34), left = idx(-0.31), right = idx(0.31);
        const std::size_t wall = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.06 * n)));
        Layout l;
        l.materials = {"Ni", "Cu", "Al"};
        l.blocks = {{2, {top, left, s0, top + wall - 1, right, s1}},
                    {2, {bottom - wall + 1, left, s0, bottom, right, s1}},
                    {2, {top + wall, left, s0, bottom - wall, left + wall - 1, s1}},
                    {2, {top + wall, right - wall + 1, s0, bottom - wall, right, s1}}};
        l.cylinders = {{0, -0.11 * n, 0.09 * n, 0.095 * n, s0, s1}, {1, 0.11 * n, -0.09 * n, 0.095 * n, s0, s1}};
        return l;
    }
};

/// One cuboid per material lying inside its first shape: an inset of the
/// first block, or the square inscribed in the first cylinder.
inline RegionSet truth_regions(const ScanParams& scan, const Layout& layout)
{
    const double c = 0.5 * static_cast<double>(scan.n_cols - 1);
    std::vector<Cuboid> boxes;
    for (std::size_t m = 0; m < layout.materials.size(); ++m) {
        auto block = std::find_if(layout.blocks.begin(), layout.blocks.end(), [&](const Block& b) { return b.material == m; });
        auto cyl = std::find_if(layout.cylinders.begin(), layout.cylinders.end(), [&](const Cylinder& y) { return y.material == m; });
        if (block != layout.blocks.end()) {
            Cuboid b = block->box;
            if (b.r1 >= b.r0 + 2) ++b.r0, --b.r1;
            if (b.c1 >= b.c0 + 2) ++b.c0, --b.c1;
            boxes.push_back(b);
        } else if (cyl != layout.cylinders.end()) {
            const double h = std::max(0.0, cyl->radius / std::numbers::sqrt2 - 0.5);
            const double ci = c - cyl->cy, cj = c + cyl->cx;
            const auto lo = [](double v) { return static_cast<std::size_t>(std::max(0.0, std::ceil(v))); };
            const auto hi = [](double v) { return static_cast<std::size_t>(std::max(0.0, std::floor(v))); };
            boxes.push_back({lo(ci - h), lo(cj - h), cyl->s0, hi(ci + h), hi(cj + h), cyl->s1});
        } else {
            throw ConfigError("layout: material '" + layout.materials[m] + "' has no shape");
        }
    }
    return RegionSet::from_cuboids(layout.materials, boxes, scan.n_rows, scan.n_cols);
}

/// Binary material occupancy x_m (N_r, N_c, N_c, N_m).
struct Phantom {
    Tensor x_m;
    std::vector<std::string> names;

    std::size_t n_materials() const { return x_m.dim(3); }

    Tensor material(std::size_t m) const
    {
        Tensor vol({x_m.dim(0), x_m.dim(1), x_m.dim(2)});
        const std::size_t nm = n_materials();
        for (std::size_t v = 0; v < vol.size(); ++v) vol[v] = x_m[v * nm + m];
        return vol;
    }

    /// Per-voxel material index, -1 for background.
    std::vector<int> labels() const
    {
        const std::size_t nm = n_materials(), nvox = x_m.size() / nm;
        std::vector<int> lab(nvox, -1);
        for (std::size_t v = 0; v < nvox; ++v)
            for (std::size_t m = 0; m < nm; ++m)
                if (x_m[v * nm + m] > 0.0) lab[v] = static_cast<int>(m);
        return lab;
    }
};

inline Phantom make_phantom(const ScanParams& scan, const Layout& layout)
{
    const std::size_t nr = scan.n_rows, nc = scan.n_cols, nm = std::max<std::size_t>(1, layout.materials.size());
    Phantom ph{Tensor({nr, nc, nc, nm}), layout.materials};
    if (ph.names.empty()) ph.names = {"none"};
    const double half = 0.5 * static_cast<double>(nc - 1), fov_r = 0.5 * static_cast<double>(nc);
    std::vector<std::int8_t> owner(nr * nc * nc, -1);
    auto claim = [&](std::size_t s, std::size_t i, std::size_t j, std::size_t m, const std::string& what) {
        const double x = static_cast<double>(j) - half, y = half - static_cast<double>(i);
        if (x * x + y * y > fov_r * fov_r) throw ConfigError("layout: " + what + " leaves the field of view");
        const std::size_t v = (s * nc + i) * nc + j;
        if (owner[v] >= 0 && static_cast<std::size_t>(owner[v]) != m)
            throw ConfigError("layout: " + what + " overlaps material '" + layout.materials[static_cast<std::size_t>(owner[v])] + "'");
        if (owner[v] >= 0) throw ConfigError("layout: " + what + " overlaps another shape");
        owner[v] = static_cast<std::int8_t>(m);
        ph.x_m[v * nm + m] = 1.0;
    };
    for (const auto& b : layout.blocks) {
        if (b.material >= layout.materials.size()) throw ConfigError("layout: block names an unknown material");
        if (b.box.r1 >= nc || b.box.c1 >= nc || b.box.s1 >= nr || b.box.r0 > b.box.r1 || b.box.c0 > b.box.c1 || b.box.s0 > b.box.s1)
            throw ConfigError("layout: block outside the volume");
        for (std::size_t s = b.box.s0; s <= b.box.s1; ++s)
            for (std::size_t i = b.box.r0; i <= b.box.r1; ++i)
                for (std::size_t j = b.box.c0; j <= b.box.c1; ++j) claim(s, i, j, b.material, "block of " + layout.materials[b.material]);
    }
    for (const auto& cyl : layout.cylinders) {
        if (cyl.material >= layout.materials.size()) throw ConfigError("layout: cylinder names an unknown material");
        if (cyl.s1 >= nr || cyl.s0 > cyl.s1 || !(cyl.radius > 0.0)) throw ConfigError("layout: invalid cylinder");
        for (std::size_t s = cyl.s0; s <= cyl.s1; ++s)
            for (std::size_t i = 0; i < nc; ++i)
                for (std::size_t j = 0; j < nc; ++j) {
                    const double x = static_cast<double>(j) - half - cyl.cx, y = half - static_cast<double>(i) - cyl.cy;
                    if (x * x + y * y <= cyl.radius * cyl.radius) claim(s, i, j, cyl.material, "cylinder of " + layout.materials[cyl.material]);
                }
    }
    return ph;
}

/// Upward step of height `jump` at the first bin centred at or beyond
/// `lambda`, relaxing as exp(-decay * (lambda_k - lambda_edge_bin)).
struct BraggEdge {
    double lambda = 0.0;
    double jump = 0.0;
    double decay = 0.0;

    bool operator==(const BraggEdge&) const = default;
};

/// mu(lambda) = a * lambda^b + edge terms, per voxel length.
struct MaterialSpectrum {
    std::string name;
    double a = 0.0, b = 0.0;
    std::vector<BraggEdge> edges;

    bool operator==(const MaterialSpectrum&) const = default;
};

using SpectraSpec = std::vector<MaterialSpectrum>;

inline SpectraSpec default_spectra()
{
    return {{"Ni", 0.030, 0.6, {{2.49, 0.020, 1.5}, {3.52, 0.030, 1.5}, {4.07, 0.040, 1.5}}},
            {"Cu", 0.012, 1.4, {{2.56, 0.015, 1.2}, {3.62, 0.025, 1.2}, {4.17, 0.030, 1.2}}},
            {"Al", 0.010, 0.2, {{2.44, 0.003, 1.0}, {2.86, 0.004, 1.0}, {4.05, 0.006, 1.0}}}};
}

/// D_m (N_k, N_m) sampled at the bin centres.
inline Tensor make_spectra(const SpectraSpec& spec, const WavelengthGrid& grid)
{
    grid.validate();
    if (spec.empty()) throw ConfigError("spectra: no materials");
    Tensor D({grid.n_bins, spec.size()});
    for (std::size_t m = 0; m < spec.size(); ++m) {
        const auto& s = spec[m];
        if (!(s.a > 0.0)) throw ConfigError("spectra: baseline coefficient of '" + s.name + "' must be positive");
        for (std::size_t k = 0; k < grid.n_bins; ++k) D(k, m) = s.a * std::pow(grid.center(k), s.b);
        for (const auto& e : s.edges) {
            if (!(e.lambda >= grid.lambda_min && e.lambda <= grid.lambda_max))
                throw ConfigError("spectra: edge of '" + s.name + "' at " + format_double(e.lambda) + " lies outside the grid");
            if (!(e.decay >= 0.0)) throw ConfigError("spectra: edge decay must be non-negative");
            const std::size_t ke = grid.first_bin_at_or_after(e.lambda);
            if (ke == 0 || ke >= grid.n_bins) throw ConfigError("spectra: edge of '" + s.name + "' has no bin on both sides");
            for (std::size_t k = ke; k < grid.n_bins; ++k)
                D(k, m) += e.jump * std::exp(-e.decay * (grid.center(k) - grid.center(ke)));
        }
        for (std::size_t k = 0; k < grid.n_bins; ++k)
            if (!(D(k, m) > 0.0)) throw ConfigError("spectra: '" + s.name + "' is not positive over the grid");
    }
    return D;
}

/// Edge bins of a spectra spec on a grid, per material in increasing order.
inline std::vector<std::vector<std::size_t>> spectra_edge_bins(const SpectraSpec& spec, const WavelengthGrid& grid)
{
    std::vector<std::vector<std::size_t>> out;
    for (const auto& s : spec) {
        out.emplace_back();
        for (const auto& e : s.edges) out.back().push_back(grid.first_bin_at_or_after(e.lambda));
        std::sort(out.back().begin(), out.back().end());
    }
    return out;
}

/// Open beam y0[r, c, k] = peak * bump(r) * bump(c) * envelope(lambda_k), with
/// bump(u) = 1 - falloff * u^2 on u in [-1, 1] and a Gaussian spectral envelope
/// normalised to 1 at its maximum over the grid.
struct DoseModel {
    double peak = 500.0;
    double falloff = 0.3;
    double spectral_center = 2.5;
    double spectral_width = 2.0;
    Tensor alpha;  // optional (N_v, N_k) dose factors; empty means none

    bool operator==(const DoseModel& o) const
    {
        return peak == o.peak && falloff == o.falloff && spectral_center == o.spectral_center &&
               spectral_width == o.spectral_width && alpha.dims() == o.alpha.dims() && std::ranges::equal(alpha.values(), o.alpha.values());
    }

    void validate() const
    {
        if (!(peak > 0.0)) throw ConfigError("dose: peak must be positive");
        if (!(falloff >= 0.0 && falloff < 1.0)) throw ConfigError("dose: falloff must lie in [0, 1)");
        if (!(spectral_width > 0.0)) throw ConfigError("dose: spectral width must be positive");
        for (double a : alpha.values())
            if (!(a > 0.0)) throw ConfigError("dose: alpha factors must be positive");
    }

    Tensor open_beam(std::size_t n_rows, std::size_t n_cols, const WavelengthGrid& grid) const
    {
        validate();
        std::vector<double> env(grid.n_bins);
        for (std::size_t k = 0; k < grid.n_bins; ++k) {
            const double t = (grid.center(k) - spectral_center) / spectral_width;
            env[k] = std::exp(-t * t);
        }
        const double top = *std::max_element(env.begin(), env.end());
        auto bump = [&](std::size_t i, std::size_t n) {
            const double u = n > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0 : 0.0;
            return 1.0 - falloff * u * u;
        };
        Tensor y0({n_rows, n_cols, grid.n_bins});
        for (std::size_t r = 0; r < n_rows; ++r)
            for (std::size_t c = 0; c < n_cols; ++c)
                for (std::size_t k = 0; k < grid.n_bins; ++k) y0(r, c, k) = peak * bump(r, n_rows) * bump(c, n_cols) * env[k] / top;
        return y0;
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Stateless uniform stream keyed by (seed, stream, entry index).
class CounterStream {
public:
    CounterStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
        : key_(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index))
    {
    }

    /// Uniform in (0, 1).
    double next()
    {
        const std::uint64_t x = splitmix64(key_ + 0x632be59bd9b4e019ull * ++counter_);
        return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Knuth's product method below 30, rounded normal approximation above.
inline double poisson_draw(double mean, CounterStream& rng)
{
    if (mean <= 0.0) return 0.0;
    if (mean < 30.0) {
        const double limit = std::exp(-mean);
        double prod = rng.next();
        double k = 0.0;
        while (prod > limit) {
            prod *= rng.next();
            k += 1.0;
        }
        return k;
    }
    for (;;) {
        const double u1 = rng.next(), u2 = rng.next();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        const double k = std::floor(mean + std::sqrt(mean) * z + 0.5);
        if (k >= 0.0) return k;
    }
}

} // namespace detail

struct SimulatedData {
    CountData counts;
    Tensor p_true;  // (N_v, N_r, N_c, N_k) = (A x_m) D_m^T
};

/// Noise-free projections (A x_m) D_m^T, (N_v, N_r, N_c, N_k).
inline Tensor mix_projections(const Phantom& phantom, const Tensor& D_m, const Projector& projector)
{
    const std::size_t nm = phantom.n_materials();
    if (D_m.rank() != 2 || D_m.dim(1) != nm) throw ShapeError("simulate: spectra do not match phantom materials");
    for (double v : D_m.values())
        if (v < 0.0) throw DomainError("simulate: negative attenuation");
    const std::size_t nk = D_m.dim(0);
    const Dims sd = projector.sinogram_dims();
    const std::size_t npix = sd[0] * sd[1] * sd[2];
    RowMatrix sinos(static_cast<Eigen::Index>(npix), static_cast<Eigen::Index>(nm));
    for (std::size_t m = 0; m < nm; ++m) {
        const Tensor s = projector.project(phantom.material(m));
        for (std::size_t i = 0; i < npix; ++i) sinos(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = s[i];
    }
    Tensor p({sd[0], sd[1], sd[2], nk});
    p.matrix(npix).noalias() = sinos * D_m.matrix().transpose();
    return p;
}

/// Counts y = y0 exp(-p_true) / alpha, optionally replaced by Poisson draws
/// keyed on (seed, entry), so results do not depend on scheduling.
inline SimulatedData simulate_counts(const Phantom& phantom, const Tensor& D_m, const DoseModel& dose,
                                     const Projector& projector, const WavelengthGrid& grid,
                                     std::optional<std::uint64_t> noise_seed = std::nullopt)
{
    if (D_m.dim(0) != grid.n_bins) throw ShapeError("simulate: spectra length does not match the wavelength grid");
    SimulatedData out;
    out.p_true = mix_projections(phantom, D_m, projector);
    const std::size_t nv = projector.n_views(), nr = projector.n_rows(), nc = projector.n_cols(), nk = grid.n_bins;
    if (!dose.alpha.empty() && dose.alpha.dims() != Dims{nv, nk}) throw ShapeError("simulate: alpha must be (N_v, N_k)");
    out.counts.open_beam = dose.open_beam(nr, nc, grid);
    const Tensor& y0 = out.counts.open_beam;
    out.counts.object = Tensor(out.p_true.dims());
    Tensor& y = out.counts.object;
    const std::size_t per_view = nr * nc * nk;
    parallel_for(0, nv, [&](std::size_t v) {
        for (std::size_t i = 0; i < per_view; ++i) {
            const std::size_t k = i % nk;
            const double a = dose.alpha.empty() ? 1.0 : dose.alpha(v, k);
            y[v * per_view + i] = y0[i] * std::exp(-out.p_true[v * per_view + i]) / a;
        }
    });
    if (noise_seed) {
        const std::uint64_t seed = *noise_seed;
        parallel_for(0, nv, [&](std::size_t v) {
            for (std::size_t i = 0; i < per_view; ++i) {
                detail::CounterStream rng(seed, 0, v * per_view + i);
                y[v * per_view + i] = detail::poisson_draw(y[v * per_view + i], rng);
            }
        });
        Tensor& ob = out.counts.open_beam;
        for (std::size_t i = 0; i < ob.size(); ++i) {
            detail::CounterStream rng(seed, 1, i);
            ob[i] = detail::poisson_draw(ob[i], rng);
        }
    }
    return out;
}

/// Desk-scale setup: geometry, grid, phantom layout, spectra and dose.
struct SimulationSetup {
    ScanParams scan;
    WavelengthGrid grid;
    Layout layout;
    SpectraSpec spectra;
    DoseModel dose;
    std::size_t air_rows = 4;

    bool operator==(const SimulationSetup&) const = default;
};

inline SimulationSetup default_desk_setup()
{
    SimulationSetup s;
    s.scan.n_rows = 64;
    s.scan.n_cols = 64;
    s.scan.n_wavelengths = 256;
    s.scan.n_views = 32;
    s.scan.n_materials = 3;
    s.scan.n_subspace = 9;
    s.scan.morph_window = 4;
    s.scan.view_angles = ScanParams::uniform_angles(32);
    s.grid = {1.5, 4.5, 256};
    s.air_rows = 4;
    s.layout = Layout::frame_preset(s.scan, s.air_rows);
    s.spectra = default_spectra();
    s.dose = DoseModel{};
    return s;
}

} // namespace hsnct
