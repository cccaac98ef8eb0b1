#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "hsnct/mbir.hpp"
#include "test_support.hpp"

using namespace hsnct;
using Catch::Approx;

namespace {

MbirParams base_params(double sigma_v)
{
    MbirParams p;
    p.sigma_v = sigma_v;
    return p;
}

} // namespace

TEST_CASE("qggmrf potential", "[mbir]")
{
    QggmrfPrior prior{1.2, 2.0, 1.0, 0.3};
    CHECK(prior.potential(0.0) == 0.0);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double d = g(rng);
        CHECK(prior.potential(-d) == prior.potential(d));
        CHECK(prior.potential(d) >= 0.0);
        CHECK(prior.potential(1.1 * d) >= prior.potential(d));
    }
    SECTION("generalized Gaussian tail for |d| >> T sigma")
    {
        for (double d : {1e3, 1e4, -1e5}) {
            const double gg = std::pow(std::abs(d), prior.p) / (prior.p * std::pow(prior.sigma_x, prior.p));
            CHECK(std::abs(prior.potential(d) / gg - 1.0) < 0.01);
        }
    }
    SECTION("quadratic near zero")
    {
        const double d = 1e-6;
        CHECK(prior.potential(2 * d) / prior.potential(d) == Approx(4.0).epsilon(1e-4));
    }
    SECTION("surrogate coefficient matches a finite-difference derivative")
    {
        for (double d : {-2.0, -0.1, 0.05, 0.3, 4.0}) {
            const double h = 1e-6;
            const double deriv = (prior.potential(d + h) - prior.potential(d - h)) / (2 * h);
            CHECK(prior.surrogate_coefficient(d) == Approx(deriv / (2 * d)).epsilon(1e-5));
        }
        const double tiny = 1e-7;
        CHECK(prior.surrogate_coefficient(0.0) == Approx(prior.surrogate_coefficient(tiny)).epsilon(1e-5));
    }
    SECTION("surrogate majorises the potential")
    {
        for (double d0 : {-1.0, 0.2, 0.7, 3.0})
            for (double d = -5; d <= 5; d += 0.01) {
                const double bound = prior.potential(d0) + prior.surrogate_coefficient(d0) * (d * d - d0 * d0);
                CHECK(bound >= prior.potential(d) - 1e-12);
            }
    }
}

TEST_CASE("parameter validation", "[mbir]")
{
    Projector A(1, 8, ScanParams::uniform_angles(4));
    const Tensor sino(A.sinogram_dims());
    CHECK_THROWS_AS(mbir_reconstruct(sino, base_params(0.0), A), ConfigError);
    CHECK_THROWS_AS(mbir_reconstruct(sino, base_params(-1.0), A), ConfigError);
    auto p = base_params(1.0);
    p.p_exp = 1.0;
    CHECK_THROWS_AS(mbir_reconstruct(sino, p, A), ConfigError);
    p = base_params(1.0);
    p.q_exp = 1.8;
    CHECK_THROWS_AS(mbir_reconstruct(sino, p, A), ConfigError);
    Tensor bad = sino;
    bad[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(mbir_reconstruct(bad, base_params(1.0), A), DataError);
}

TEST_CASE("zero sinogram reconstructs to zero", "[mbir]")
{
    Projector A(3, 16, ScanParams::uniform_angles(8));
    const auto res = mbir_reconstruct(Tensor(A.sinogram_dims()), base_params(0.1), A);
    for (double x : res.volume.values()) CHECK(x == 0.0);
    CHECK(res.converged);
}

TEST_CASE("noiseless disk phantom", "[mbir]")
{
    const std::size_t n = 64;
    Projector A(1, n, ScanParams::uniform_angles(32));
    const Tensor phantom = test_support::disk_volume(1, n, 20.0, 0.02);
    const Tensor sino = A.project(phantom);
    auto params = base_params(0.002);
    params.max_iters = 60;
    const auto res = mbir_reconstruct(sino, params, A);
    const double err = test_support::relative_diff(res.volume, phantom);
    INFO("NRMSE " << err << " after " << res.iterations << " iterations");
    CHECK(err < 0.05);
}

TEST_CASE("cost descent on random problems", "[mbir]")
{
    for (int trial = 0; trial < 20; ++trial) {
        std::mt19937_64 rng(500 + trial);
        const std::size_t nr = 1 + trial % 3;
        Projector A(nr, 16, ScanParams::uniform_angles(6 + trial % 5));
        Tensor sino = test_support::random_tensor(A.sinogram_dims(), 900 + trial, -0.5, 3.0);
        auto params = base_params(0.05 + 0.5 * std::uniform_real_distribution<double>(0, 1)(rng));
        params.p_exp = 1.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng);
        params.sigma_x = 0.05 + std::uniform_real_distribution<double>(0, 1)(rng);
        params.threshold = 0.5 + std::uniform_real_distribution<double>(0, 1)(rng);
        params.tolerance = 0.0;
        params.zero_skipping = trial % 2 == 0;

        const QggmrfPrior prior = params.prior(*params.sigma_x);
        double previous = std::numeric_limits<double>::infinity();
        Tensor x = fbp_reconstruct(sino, A);
        for (auto& v : x.values()) v = std::max(v, 0.0);
        for (int it = 0; it < 8; ++it) {
            params.max_iters = 1;
            const auto res = mbir_reconstruct(sino, params, A, {}, &x);
            x = res.volume;
            const double c = test_support::reference_cost(sino, x, params.sigma_v, prior, params.weights, A);
            CHECK(c <= previous + 1e-9);
            CHECK(c == Approx(res.cost_trace.back()).epsilon(1e-9));
            CHECK(*std::min_element(x.values().begin(), x.values().end()) >= 0.0);
            previous = c;
        }

        params.max_iters = 10;
        const auto full = mbir_reconstruct(sino, params, A);
        for (std::size_t k = 1; k < full.cost_trace.size(); ++k) CHECK(full.cost_trace[k] <= full.cost_trace[k - 1] + 1e-9);
    }
}

TEST_CASE("objective homogeneity", "[mbir]")
{
    Projector A(2, 24, ScanParams::uniform_angles(12));
    const Tensor phantom = test_support::disk_volume(2, 24, 7.0, 1.0);
    Tensor sino = A.project(phantom);
    Tensor noise = test_support::random_tensor(A.sinogram_dims(), 4, -0.2, 0.2);
    for (std::size_t i = 0; i < sino.size(); ++i) sino[i] += noise[i];
    Tensor sino2 = sino;
    for (auto& v : sino2.values()) v *= 2.0;

    auto params = base_params(0.1);
    params.sigma_x = 0.3;
    params.max_iters = 10;
    params.tolerance = 0.0;
    auto params2 = params;
    params2.sigma_v = 0.2;
    params2.sigma_x = 0.6;
    const auto a = mbir_reconstruct(sino, params, A);
    const auto b = mbir_reconstruct(sino2, params2, A);
    Tensor twice = a.volume;
    for (auto& v : twice.values()) v *= 2.0;
    CHECK(test_support::relative_diff(b.volume, twice) < 1e-6);
}

TEST_CASE("prior disabled matches a CG least-squares oracle", "[mbir]")
{
    const std::size_t n = 32;
    Projector A(1, n, ScanParams::uniform_angles(48));
    Tensor phantom(A.volume_dims());
    const double half = 0.5 * (n - 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (A.in_fov(i, j))
                phantom(0, i, j) = 1.0 + 0.5 * std::sin(0.3 * (j - half)) * std::cos(0.2 * (half - i));
    const Tensor sino = A.project(phantom);
    const Tensor oracle = test_support::cgls(A, sino, 3000);

    auto params = base_params(1.0);
    params.prior_enabled = false;
    params.max_iters = 20000;
    params.tolerance = 0.0;
    const auto res = mbir_reconstruct(sino, params, A);
    INFO("iterations " << res.iterations << " icd " << test_support::relative_diff(res.volume, phantom) << " cg " << test_support::relative_diff(oracle, phantom));
    CHECK(test_support::relative_diff(res.volume, oracle) < 1e-4);
}

TEST_CASE("masked entries never reach the solution", "[mbir]")
{
    Projector A(2, 16, ScanParams::uniform_angles(8));
    const Tensor sino = A.project(test_support::disk_volume(2, 16, 5.0, 1.0));
    std::vector<std::uint8_t> valid(sino.size(), 1);
    for (std::size_t i = 0; i < valid.size(); i += 7) valid[i] = 0;
    auto params = base_params(0.05);
    params.max_iters = 5;
    params.sigma_x = 0.5;

    Tensor poisoned = sino, other = sino;
    for (std::size_t i = 0; i < valid.size(); ++i)
        if (!valid[i]) {
            poisoned[i] = std::numeric_limits<double>::quiet_NaN();
            other[i] = 1e300;
        }
    const auto a = mbir_reconstruct(poisoned, params, A, valid);
    const auto b = mbir_reconstruct(other, params, A, valid);
    CHECK(all_finite(a.volume.values()));
    CHECK(test_support::max_abs_diff(a.volume, b.volume) == 0.0);
}

TEST_CASE("results do not depend on the thread count", "[mbir]")
{
    Projector A(5, 16, ScanParams::uniform_angles(8));
    const Tensor sino = test_support::random_tensor(A.sinogram_dims(), 8, 0.0, 2.0);
    auto params = base_params(0.2);
    params.max_iters = 4;
    set_thread_count(1);
    const auto a = mbir_reconstruct(sino, params, A);
    set_thread_count(4);
    const auto b = mbir_reconstruct(sino, params, A);
    set_thread_count(0);
    CHECK(test_support::max_abs_diff(a.volume, b.volume) == 0.0);
}

TEST_CASE("sigma_v estimate from air pixels", "[mbir]")
{
    Tensor sino({40, 10, 20});
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 0.03);
    for (auto& v : sino.values()) v = g(rng);
    std::vector<std::uint8_t> air(200, 0);
    for (std::size_t c = 0; c < 20; ++c) air[c] = air[180 + c] = 1;
    CHECK(estimate_sigma_v(sino, air) == Approx(0.03).epsilon(0.05));
}
