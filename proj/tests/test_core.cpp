#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "hsnct/core.hpp"
#include "test_support.hpp"

using namespace hsnct;
using Catch::Approx;

TEST_CASE("tof_to_wavelength", "[core]")
{
    SECTION("non-positive inputs are rejected")
    {
        CHECK_THROWS_AS(tof_to_wavelength(0.0, 10.0), DomainError);
        CHECK_THROWS_AS(tof_to_wavelength(1e-3, 0.0), DomainError);
        CHECK_THROWS_AS(tof_to_wavelength(-1e-3, 10.0), DomainError);
    }
    SECTION("linear in time of flight")
    {
        CHECK(tof_to_wavelength(2e-3, 10.0) == Approx(2.0 * tof_to_wavelength(1e-3, 10.0)).epsilon(1e-15));
        CHECK(tof_to_wavelength(1.5e-3, 10.0) > tof_to_wavelength(1.4e-3, 10.0));
    }
    SECTION("1 ms over 10 m")
    {
        // h / m_n = 6.62607015e-34 / 1.67492749804e-27 m^2/s, times 1e-4 s/m, in angstrom.
        CHECK(tof_to_wavelength(1e-3, 10.0) == Approx(0.39560340120714643).epsilon(1e-14));
    }
}

TEST_CASE("scan parameter validation", "[core]")
{
    ScanParams s{64, 64, 256, 32, 3, 9, 4, ScanParams::uniform_angles(32)};
    CHECK_NOTHROW(s.validate());
    s.n_subspace = 3;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.n_subspace = 257;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.n_subspace = 9;
    s.view_angles[3] = s.view_angles[2];
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.view_angles = ScanParams::uniform_angles(31);
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("wavelength grid", "[core]")
{
    WavelengthGrid g{1.5, 4.5, 256};
    CHECK_NOTHROW(g.validate());
    const auto c = g.centers();
    REQUIRE(c.size() == 256);
    for (std::size_t k = 1; k < c.size(); ++k) CHECK(c[k] > c[k - 1]);
    CHECK(c.front() == Approx(1.5 + 0.5 * 3.0 / 256));
    CHECK(g.first_bin_at_or_after(1.0) == 0);
    CHECK(g.first_bin_at_or_after(5.0) == 256);
}

namespace {

CountData make_counts(std::size_t nv, std::size_t nr, std::size_t nc, std::size_t nk, std::uint64_t seed)
{
    CountData d{test_support::random_tensor({nv, nr, nc, nk}, seed, 5.0, 400.0),
                test_support::random_tensor({nr, nc, nk}, seed + 1, 100.0, 500.0)};
    return d;
}

} // namespace

TEST_CASE("counts_to_projections", "[core]")
{
    SECTION("identical scans project to zero")
    {
        CountData d = make_counts(2, 3, 4, 5, 1);
        for (std::size_t v = 0; v < 2; ++v)
            for (std::size_t i = 0; i < d.open_beam.size(); ++i) d.object[v * d.open_beam.size() + i] = d.open_beam[i];
        const auto p = counts_to_projections(d);
        for (double x : p.p.values()) CHECK(x == 0.0);
        CHECK(p.all_valid());
    }
    SECTION("y = y0 exp(-2) gives 2")
    {
        CountData d = make_counts(2, 3, 4, 5, 2);
        for (std::size_t v = 0; v < 2; ++v)
            for (std::size_t i = 0; i < d.open_beam.size(); ++i)
                d.object[v * d.open_beam.size() + i] = d.open_beam[i] * std::exp(-2.0);
        const auto p = counts_to_projections(d);
        for (double x : p.p.values()) CHECK(x == Approx(2.0).epsilon(1e-14));
    }
    SECTION("matches an elementwise scalar loop with offsets")
    {
        const std::size_t nv = 3, nr = 2, nc = 4, nk = 6;
        CountData d = make_counts(nv, nr, nc, nk, 3);
        OffsetCorrection corr{test_support::random_tensor({nv, nk}, 4, -0.1, 0.1)};
        const auto p = counts_to_projections(d, &corr);
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t r = 0; r < nr; ++r)
                for (std::size_t c = 0; c < nc; ++c)
                    for (std::size_t k = 0; k < nk; ++k) {
                        const double expected = -std::log(d.object(v, r, c, k) / d.open_beam(r, c, k)) - corr.b(v, k);
                        CHECK(p.p(v, r, c, k) == Approx(expected).epsilon(1e-15).margin(1e-15));
                    }
    }
    SECTION("zero counts are masked, not infinite")
    {
        CountData d = make_counts(1, 2, 2, 3, 5);
        d.object(0, 1, 1, 2) = 0.0;
        d.open_beam(0, 0, 1) = 0.0;
        const auto p = counts_to_projections(d);
        CHECK(p.n_invalid() == 2);
        CHECK(p.valid[p.p.offset(0, 1, 1, 2)] == 0);
        CHECK(p.valid[p.p.offset(0, 0, 0, 1)] == 0);
        CHECK(all_finite(p.p.values()));
    }
    SECTION("shape mismatch is a structural error")
    {
        CountData d = make_counts(1, 2, 2, 3, 6);
        d.open_beam = Tensor({2, 2, 4});
        CHECK_THROWS_AS(counts_to_projections(d), ShapeError);
        d.open_beam = Tensor({2, 2, 3}, 1.0);
        OffsetCorrection bad{Tensor({2, 3})};
        CHECK_THROWS_AS(counts_to_projections(d, &bad), ShapeError);
    }
}

TEST_CASE("offset correction", "[core]")
{
    const std::size_t nv = 4, nr = 6, nc = 5, nk = 7;
    // Projections that vanish on the first and last detector rows (air).
    Tensor p_true({nv, nr, nc, nk});
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t r = 1; r + 1 < nr; ++r)
            for (std::size_t c = 0; c < nc; ++c)
                for (std::size_t k = 0; k < nk; ++k) p_true(v, r, c, k) = u(rng);
    const Tensor y0 = test_support::random_tensor({nr, nc, nk}, 12, 200.0, 500.0);
    const auto air = edge_row_air_mask(nr, nc, 1);

    auto counts_with_alpha = [&](const Tensor& alpha) {
        // Dose mismatch model: alpha * y = y0 exp(-p).
        CountData d{Tensor({nv, nr, nc, nk}), y0};
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t r = 0; r < nr; ++r)
                for (std::size_t c = 0; c < nc; ++c)
                    for (std::size_t k = 0; k < nk; ++k)
                        d.object(v, r, c, k) = y0(r, c, k) * std::exp(-p_true(v, r, c, k)) / alpha(v, k);
        return d;
    };

    SECTION("unbiased noiseless data gives b = 0")
    {
        const auto raw = counts_to_projections(counts_with_alpha(Tensor({nv, nk}, 1.0)));
        const auto b = estimate_offset(raw, air);
        for (double x : b.b.values()) CHECK(std::abs(x) < 1e-13);
    }
    SECTION("unbiased noisy air stays within 3 sigma / sqrt(n)")
    {
        ProjectionStack noisy(Tensor({nv, nr, nc, nk}));
        std::normal_distribution<double> g(0.0, 0.05);
        for (auto& x : noisy.p.values()) x = g(rng);
        const auto b = estimate_offset(noisy, air);
        // Median of n normals has standard error ~1.2533 sigma / sqrt(n).
        const double n = 2.0 * nc;
        for (double x : b.b.values()) CHECK(std::abs(x) < 3.0 * 1.2533 * 0.05 / std::sqrt(n) * 1.5);
    }
    SECTION("uniform alpha = 1.1 on one view is recovered as log(1.1)")
    {
        Tensor alpha({nv, nk}, 1.0);
        for (std::size_t k = 0; k < nk; ++k) alpha(2, k) = 1.1;
        const auto raw = counts_to_projections(counts_with_alpha(alpha));
        const auto b = estimate_offset(raw, air);
        for (std::size_t k = 0; k < nk; ++k) {
            CHECK(std::abs(b.b(2, k) - std::log(1.1)) < 1e-12);
            CHECK(std::abs(b.b(0, k)) < 1e-12);
        }
    }
    SECTION("random injected b* is recovered and corrected projections match")
    {
        const Tensor b_star = test_support::random_tensor({nv, nk}, 13, -0.2, 0.2);
        const auto raw = counts_to_projections(counts_with_alpha(OffsetCorrection{b_star}.alpha()));
        const auto est = estimate_offset(raw, air);
        CHECK(test_support::max_abs_diff(est.b, b_star) < 1e-12);
        const auto corrected = counts_to_projections(counts_with_alpha(OffsetCorrection{b_star}.alpha()), &est);
        CHECK(test_support::max_abs_diff(corrected.p, p_true) < 1e-10);
    }
    SECTION("applying b then -b is the identity")
    {
        const auto raw = counts_to_projections(counts_with_alpha(Tensor({nv, nk}, 1.0)));
        OffsetCorrection c{test_support::random_tensor({nv, nk}, 14, -0.5, 0.5)};
        const auto back = apply_offset(apply_offset(raw, c), c.negated());
        CHECK(test_support::max_abs_diff(back.p, raw.p) < 1e-15);
    }
    SECTION("empty air mask is rejected")
    {
        const auto raw = counts_to_projections(counts_with_alpha(Tensor({nv, nk}, 1.0)));
        CHECK_THROWS_AS(estimate_offset(raw, std::vector<std::uint8_t>(nr * nc, 0)), DataError);
    }
    SECTION("masked air entries are skipped")
    {
        auto raw = counts_to_projections(counts_with_alpha(Tensor({nv, nk}, 1.0)));
        raw.valid[raw.p.offset(0, 0, 0, 0)] = 0;
        raw.p(0, 0, 0, 0) = std::numeric_limits<double>::quiet_NaN();
        const auto b = estimate_offset(raw, air);
        CHECK(all_finite(b.b.values()));
        CHECK(std::abs(b.b(0, 0)) < 1e-13);
    }
}
