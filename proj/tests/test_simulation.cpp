#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hsnct/simulation.hpp"
#include "test_support.hpp"

using namespace hsnct;
using Catch::Approx;

namespace {

ScanParams small_scan(std::size_t rows, std::size_t cols, std::size_t views, std::size_t bins)
{
    return {rows, cols, bins, views, 3, 5, 2, ScanParams::uniform_angles(views)};
}

double rel_diff(const Tensor& a, const Tensor& b)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / den);
}

} // namespace

TEST_CASE("phantom rasterisation", "[simulation]")
{
    const auto scan = small_scan(4, 64, 8, 16);

    SECTION("empty layout is all background")
    {
        const auto ph = make_phantom(scan, Layout{});
        for (double v : ph.x_m.values()) CHECK(v == 0.0);
        for (int l : ph.labels()) CHECK(l == -1);
    }
    SECTION("centred cylinder area")
    {
        Layout l;
        l.materials = {"A"};
        const double rho = 20.0;
        l.cylinders = {{0, 0.0, 0.0, rho, 0, 3}};
        const auto ph = make_phantom(scan, l);
        double count = 0.0;
        for (double v : ph.x_m.values()) count += v;
        CHECK(count == Approx(std::numbers::pi * rho * rho * 4.0).epsilon(0.02));
    }
    SECTION("overlapping shapes are rejected")
    {
        Layout l;
        l.materials = {"A", "B"};
        l.cylinders = {{0, -2.0, 0.0, 6.0, 0, 3}, {1, 2.0, 0.0, 6.0, 0, 3}};
        CHECK_THROWS_AS(make_phantom(scan, l), ConfigError);
    }
    SECTION("shapes must stay in the field of view")
    {
        Layout l;
        l.materials = {"A"};
        l.blocks = {{0, {0, 0, 0, 3, 3, 3}}};
        CHECK_THROWS_AS(make_phantom(scan, l), ConfigError);
    }
    SECTION("default preset has three disjoint materials")
    {
        const auto s = default_desk_setup();
        const auto ph = make_phantom(s.scan, s.layout);
        REQUIRE(ph.n_materials() == 3);
        const std::size_t nvox = ph.x_m.size() / 3;
        std::size_t counts[3] = {};
        for (std::size_t v = 0; v < nvox; ++v) {
            double sum = 0.0;
            for (std::size_t m = 0; m < 3; ++m) {
                sum += ph.x_m[v * 3 + m];
                counts[m] += ph.x_m[v * 3 + m] > 0.0;
            }
            CHECK(sum <= 1.0);
        }
        for (auto c : counts) CHECK(c > 0);
        // Empty slices at both ends leave detector rows in air.
        const auto lab = ph.labels();
        for (std::size_t v = 0; v < s.air_rows * 64 * 64; ++v) CHECK(lab[v] == -1);
    }
}

TEST_CASE("truth regions lie inside their materials", "[simulation]")
{
    const auto s = default_desk_setup();
    const auto ph = make_phantom(s.scan, s.layout);
    const auto regions = truth_regions(s.scan, s.layout);
    const auto lab = ph.labels();
    REQUIRE(regions.size() == 3);
    CHECK_NOTHROW(regions.validate(lab.size(), 50));
    for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t v : regions.voxels[m]) CHECK(lab[v] == static_cast<int>(m));
}

TEST_CASE("spectra generator", "[simulation]")
{
    const WavelengthGrid grid{1.5, 4.5, 64};

    SECTION("no edges and zero exponent is constant")
    {
        const Tensor D = make_spectra({{"flat", 0.25, 0.0, {}}}, grid);
        for (std::size_t k = 0; k < 64; ++k) CHECK(D(k, 0) == 0.25);
    }
    SECTION("an edge is a step of the configured height")
    {
        const double J = 0.0375;
        const Tensor D = make_spectra({{"step", 0.1, 0.0, {{3.0, J, 2.0}}}}, grid);
        const std::size_t ke = grid.first_bin_at_or_after(3.0);
        CHECK(std::abs(D(ke, 0) - D(ke - 1, 0) - J) <= 1e-12);
        for (std::size_t k = 1; k < 64; ++k)
            if (k != ke) CHECK(D(k, 0) <= D(k - 1, 0));
    }
    SECTION("edges outside the grid are rejected")
    {
        CHECK_THROWS_AS(make_spectra({{"bad", 0.1, 0.0, {{5.0, 0.01, 1.0}}}}, grid), ConfigError);
        CHECK_THROWS_AS(make_spectra({{"bad", 0.0, 0.0, {}}}, grid), ConfigError);
    }
    SECTION("default materials are separable")
    {
        const Tensor D = make_spectra(default_spectra(), WavelengthGrid{1.5, 4.5, 256});
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = a + 1; b < 3; ++b) {
                double ab = 0.0, aa = 0.0, bb = 0.0;
                for (std::size_t k = 0; k < 256; ++k) {
                    ab += D(k, a) * D(k, b);
                    aa += D(k, a) * D(k, a);
                    bb += D(k, b) * D(k, b);
                }
                const double angle = std::acos(ab / std::sqrt(aa * bb)) * 180.0 / std::numbers::pi;
                CHECK(angle > 5.0);
            }
    }
    SECTION("edge bins are the first bins at or after each edge")
    {
        const auto bins = spectra_edge_bins(default_spectra(), grid);
        REQUIRE(bins.size() == 3);
        CHECK(bins[0][0] == grid.first_bin_at_or_after(2.49));
    }
}

TEST_CASE("count synthesis", "[simulation]")
{
    const auto scan = small_scan(4, 24, 8, 12);
    const WavelengthGrid grid{1.5, 4.5, 12};
    const Projector A(scan.n_rows, scan.n_cols, scan.view_angles);
    Layout l;
    l.materials = {"A", "B"};
    l.cylinders = {{0, -4.0, 0.0, 3.0, 0, 3}, {1, 4.0, 1.0, 2.5, 1, 2}};
    const SpectraSpec spec{{"A", 0.05, 0.5, {{3.0, 0.02, 1.0}}}, {"B", 0.03, 1.2, {}}};
    const auto ph = make_phantom(scan, l);
    const Tensor D = make_spectra(spec, grid);

    SECTION("empty phantom passes the open beam through")
    {
        Layout empty;
        empty.materials = {"A", "B"};
        const auto sim = simulate_counts(make_phantom(scan, empty), D, DoseModel{}, A, grid);
        const std::size_t per_view = sim.counts.open_beam.size();
        for (std::size_t i = 0; i < sim.counts.object.size(); ++i) CHECK(sim.counts.object[i] == sim.counts.open_beam[i % per_view]);
    }
    SECTION("noiseless counts invert to the mixed projections")
    {
        const auto sim = simulate_counts(ph, D, DoseModel{}, A, grid);
        const auto stack = counts_to_projections(sim.counts);
        CHECK(stack.all_valid());
        const Tensor oracle = test_support::mixed_projections(A, {ph.material(0), ph.material(1)}, D);
        CHECK(rel_diff(sim.p_true, oracle) <= 1e-12);
        CHECK(rel_diff(stack.p, oracle) <= 1e-12);
    }
    SECTION("Poisson draws are seed-determined")
    {
        const auto a = simulate_counts(ph, D, DoseModel{}, A, grid, 11);
        const auto b = simulate_counts(ph, D, DoseModel{}, A, grid, 11);
        const auto c = simulate_counts(ph, D, DoseModel{}, A, grid, 12);
        CHECK(std::ranges::equal(a.counts.object.values(), b.counts.object.values()));
        CHECK(std::ranges::equal(a.counts.open_beam.values(), b.counts.open_beam.values()));
        CHECK(!std::ranges::equal(a.counts.object.values(), c.counts.object.values()));
        for (double y : a.counts.object.values()) CHECK(y == std::floor(y));
    }
    SECTION("injected dose factors are recovered from air pixels")
    {
        Layout framed;
        framed.materials = {"A"};
        framed.cylinders = {{0, 0.0, 0.0, 5.0, 1, 2}};
        const auto ph2 = make_phantom(scan, framed);
        const Tensor D1 = make_spectra({spec[0]}, grid);
        DoseModel dose;
        dose.alpha = Tensor({8, 12});
        for (std::size_t v = 0; v < 8; ++v)
            for (std::size_t k = 0; k < 12; ++k) dose.alpha(v, k) = v == 3 ? 1.1 : 1.0 + 0.01 * static_cast<double>(k % 3);
        const auto clean = counts_to_projections(simulate_counts(ph2, D1, DoseModel{}, A, grid).counts);
        const auto raw = counts_to_projections(simulate_counts(ph2, D1, dose, A, grid).counts);
        const auto b = estimate_offset(raw, edge_row_air_mask(4, 24, 1));
        for (std::size_t k = 0; k < 12; ++k) CHECK(std::abs(b.b(3, k) - std::log(1.1)) <= 1e-12);
        for (std::size_t i = 0; i < b.b.size(); ++i) CHECK(std::abs(b.b[i] - std::log(dose.alpha[i])) <= 1e-12);
        const auto corrected = apply_offset(raw, b);
        double worst = 0.0;
        for (std::size_t i = 0; i < clean.p.size(); ++i) worst = std::max(worst, std::abs(corrected.p[i] - clean.p[i]));
        CHECK(worst <= 1e-10);
    }
}

TEST_CASE("Poisson sampler matches its mean", "[simulation]")
{
    for (double mean : {4.0, 25.0, 180.0}) {
        const int n = 10000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            detail::CounterStream rng(99, 0, static_cast<std::uint64_t>(i));
            const double k = detail::poisson_draw(mean, rng);
            sum += k;
            sum2 += k * k;
        }
        const double m = sum / n, var = sum2 / n - m * m;
        CHECK(std::abs(m - mean) <= 3.0 * std::sqrt(mean) / 100.0);
        CHECK(var == Approx(mean).epsilon(0.1));
    }
}

TEST_CASE("desk configuration", "[simulation]")
{
    const auto s = default_desk_setup();
    CHECK_NOTHROW(s.scan.validate());
    CHECK(s.scan.n_rows == 64);
    CHECK(s.scan.n_cols == 64);
    CHECK(s.scan.n_wavelengths == 256);
    CHECK(s.scan.n_views == 32);
    CHECK(s.scan.n_materials == 3);
    CHECK(s.scan.n_subspace == 9);
    CHECK(s.scan.morph_window == 4);
    CHECK(s.grid.lambda_min == 1.5);
    CHECK(s.grid.lambda_max == 4.5);
    CHECK(s.dose.peak == 500.0);
}
