// Acceptance run: one PASS/FAIL line per criterion, desk-scale where stated.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "hsnct/baselines.hpp"
#include "hsnct/config.hpp"
#include "hsnct/metrics.hpp"
#include "hsnct/nnls.hpp"
#include "hsnct/parallel.hpp"
#include "hsnct/simulation.hpp"
#include "hsnct/tensor_io.hpp"
#include "test_support.hpp"

using namespace hsnct;

namespace {

namespace tol {
constexpr double identity_rel = 1e-12;
constexpr double identity_seconds = 60.0;
constexpr double adjoint_rel = 1e-10;
constexpr int adjoint_trials = 100;
constexpr int descent_problems = 20;
constexpr double descent_slack = 1e-9;  // relative to the cost
constexpr double cg_rel = 1e-4;
constexpr double nmf_rel = 1e-3;
constexpr double snr_gap_db = 10.0;
constexpr double fhr_dhr_seconds = 15 * 60.0;
constexpr double label_accuracy = 0.99;
constexpr double spectrum_nrmse = 0.02;
constexpr double material_gap_db = 10.0;
constexpr std::size_t edge_bins = 1;
constexpr double spectra_identity = 1e-8;
constexpr int nnls_voxels = 200;
constexpr double nnls_grid_step = 1e-3;
constexpr double kkt = 1e-8;
constexpr double offset_b = 1e-12;
constexpr double offset_p = 1e-10;
}  // namespace tol

int failures = 0;

void verdict(int id, const char* name, bool pass, const std::string& detail)
{
    std::printf("C%-2d %s  %s: %s\n", id, pass ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    failures += !pass;
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

using Clock = std::chrono::steady_clock;

// Scene shared by the desk-scale criteria.
struct Desk {
    SimulationSetup s = default_desk_setup();
    Projector A{s.scan.n_rows, s.scan.n_cols, s.scan.view_angles};
    Phantom ph = make_phantom(s.scan, s.layout);
    Tensor D = make_spectra(s.spectra, s.grid);
    std::vector<int> labels = ph.labels();
    std::vector<std::uint8_t> fov = A.fov();
    RegionSet regions = truth_regions(s.scan, s.layout);
    std::vector<std::vector<std::size_t>> true_edges = spectra_edge_bins(s.spectra, s.grid);
    RunConfig cfg{};

    std::vector<std::size_t> match(const Tensor& x_m) const
    {
        const std::size_t nm = x_m.dim(3);
        return best_permutation(nm, [&](std::size_t t, std::size_t e) {
            double sc = 0.0;
            for (std::size_t v = 0; v < labels.size(); ++v)
                if (labels[v] == static_cast<int>(t)) sc += x_m[v * nm + e];
            return sc;
        });
    }

    double mean_material_snr(const Tensor& x_m) const
    {
        const auto db = snr_materials(x_m, labels, match(x_m), fov);
        double m = 0.0;
        for (double d : db) m += d / static_cast<double>(db.size());
        return m;
    }

    std::size_t worst_edge_error(const Tensor& D_m, const std::vector<std::size_t>& perm) const
    {
        const auto est = bragg_edges(D_m, true_edges[0].size());
        std::size_t worst = 0;
        for (std::size_t m = 0; m < true_edges.size(); ++m)
            for (std::size_t i = 0; i < true_edges[m].size(); ++i) {
                const std::size_t e = i < est[perm[m]].size() ? est[perm[m]][i] : 0, t = true_edges[m][i];
                worst = std::max(worst, e > t ? e - t : t - e);
            }
        return worst;
    }
};

void c1_identity(const Desk& d)
{
    const auto t0 = Clock::now();
    const auto sim = simulate_counts(d.ph, d.D, d.s.dose, d.A, d.s.grid, std::nullopt);
    const ProjectionStack p = counts_to_projections(sim.counts);
    const double secs = seconds_since(t0);
    const Tensor oracle = test_support::mixed_projections(d.A, {d.ph.material(0), d.ph.material(1), d.ph.material(2)}, d.D);
    const double rel = test_support::relative_diff(p.p, oracle);
    verdict(1, "noiseless identity", p.all_valid() && rel <= tol::identity_rel && secs <= tol::identity_seconds,
            fmt("relative error %.2e (<= %.0e), %.1f s (<= %.0f s)", rel, tol::identity_rel, secs, tol::identity_seconds));
}

void c2_adjoint()
{
    const Projector A(1, 32, ScanParams::uniform_angles(8));
    double worst = 0.0;
    for (int t = 0; t < tol::adjoint_trials; ++t) {
        const Tensor x = test_support::random_tensor(A.volume_dims(), 100 + t);
        const Tensor y = test_support::random_tensor(A.sinogram_dims(), 5000 + t);
        const double lhs = dot(A.project(x).values(), y.values()), rhs = dot(x.values(), A.backproject(y).values());
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
    }
    verdict(2, "projector adjoint", worst <= tol::adjoint_rel, fmt("worst relative mismatch %.2e over %d trials (<= %.0e)", worst, tol::adjoint_trials, tol::adjoint_rel));
}

void c3_mbir()
{
    int increases = 0, steps = 0;
    for (int trial = 0; trial < tol::descent_problems; ++trial) {
        std::mt19937_64 rng(700 + trial);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const Projector A(1 + trial % 3, 16, ScanParams::uniform_angles(6 + trial % 5));
        const Tensor sino = test_support::random_tensor(A.sinogram_dims(), 1900 + trial, -0.5, 3.0);
        MbirParams p;
        p.sigma_v = 0.05 + 0.5 * u(rng);
        p.p_exp = 1.05 + 0.9 * u(rng);
        p.sigma_x = 0.05 + u(rng);
        p.threshold = 0.5 + u(rng);
        p.tolerance = 0.0;
        p.max_iters = 1;
        p.zero_skipping = trial % 2 == 0;
        Tensor x(A.volume_dims());
        double previous = test_support::reference_cost(sino, x, p.sigma_v, p.prior(*p.sigma_x), p.weights, A);
        for (int it = 0; it < 8; ++it) {
            x = mbir_reconstruct(sino, p, A, {}, &x).volume;
            const double c = test_support::reference_cost(sino, x, p.sigma_v, p.prior(*p.sigma_x), p.weights, A);
            increases += c > previous + tol::descent_slack * std::abs(previous);
            ++steps;
            previous = c;
        }
    }

    const std::size_t n = 32;
    const Projector A(1, n, ScanParams::uniform_angles(48));
    Tensor phantom(A.volume_dims());
    const double half = 0.5 * (n - 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (A.in_fov(i, j)) phantom(0, i, j) = 1.0 + 0.5 * std::sin(0.3 * (j - half)) * std::cos(0.2 * (half - i));
    const Tensor sino = A.project(phantom);
    MbirParams p;
    p.sigma_v = 1.0;
    p.prior_enabled = false;
    p.max_iters = 20000;
    p.tolerance = 0.0;
    const double rel = test_support::relative_diff(mbir_reconstruct(sino, p, A).volume, test_support::cgls(A, sino, 3000));
    verdict(3, "MBIR descent and least-squares oracle", increases == 0 && rel <= tol::cg_rel,
            fmt("%d increases in %d exact-objective steps over %d problems; prior-free vs CG %.2e (<= %.0e)", increases, steps,
                tol::descent_problems, rel, tol::cg_rel));
}

// Noiseless NMF recovery and semi-supervised FMD accuracy share one pipeline run.
struct NoiselessFmd {
    double nmf_rel = 0.0;
    double accuracy = 0.0;
    std::vector<double> nrmse;
};

NoiselessFmd run_noiseless(const Desk& d)
{
    const auto sim = simulate_counts(d.ph, d.D, d.s.dose, d.A, d.s.grid, std::nullopt);
    FhrResult fr;
    const FmdResult f = fmd_pipeline(counts_to_projections(sim.counts), d.A, fmd_options(d.cfg, d.A), &d.regions, fr);
    NoiselessFmd r;
    r.nmf_rel = fr.subspace.relative_residual;
    const auto perm = d.match(f.x_m);
    r.accuracy = label_accuracy(f.x_m, d.labels, interior_mask(d.labels, d.s.scan.n_rows, d.s.scan.n_cols), perm);
    for (std::size_t m = 0; m < d.D.dim(1); ++m) r.nrmse.push_back(nrmse(column(f.D_m, perm[m]), column(d.D, m)));
    return r;
}

struct PoissonRun {
    double fhr_snr = 0.0, dhr_snr = 0.0, seconds = 0.0;
    std::size_t fhr_count = 0, dhr_count = 0;
    double fhr_recon_time = 0.0, dhr_recon_time = 0.0;
    double semi_snr = 0.0, unsup_snr = 0.0, rdmd_snr = 0.0;
    std::size_t semi_edges = 0, unsup_edges = 0;
};

PoissonRun run_poisson(const Desk& d)
{
    PoissonRun r;
    const auto t0 = Clock::now();
    const auto sim = simulate_counts(d.ph, d.D, d.s.dose, d.A, d.s.grid, d.cfg.noise_seed);
    const ProjectionStack p = counts_to_projections(sim.counts);
    FhrResult fr;
    const FmdOptions opt = fmd_options(d.cfg, d.A);
    const Tensor x_h = fhr_pipeline(p, d.A, opt.fhr, fr);
    const DhrResult dh = dhr(p, d.A);
    r.seconds = seconds_since(t0);

    std::vector<std::uint8_t> support(d.labels.size());
    for (std::size_t v = 0; v < support.size(); ++v) support[v] = d.labels[v] >= 0;
    const MaskPair masks = support_masks(support, d.s.scan.n_rows, d.s.scan.n_cols, d.fov);
    r.fhr_snr = snr_recon(x_h, masks).db;
    r.dhr_snr = snr_recon(dh.x_h, masks).db;
    r.fhr_count = fr.recon_count;
    r.dhr_count = dh.recon_count;
    r.fhr_recon_time = fr.times.reconstruct;
    r.dhr_recon_time = dh.recon_time;

    const FmdResult semi = fmd_from_subspace(fr.x_s, fr.subspace.D, opt, &d.regions);
    const FmdResult unsup = fmd_from_subspace(fr.x_s, fr.subspace.D, opt, nullptr);
    const RdmdResult rd = rdmd(p, d.A, d.regions, &dh);
    r.semi_snr = d.mean_material_snr(semi.x_m);
    r.unsup_snr = d.mean_material_snr(unsup.x_m);
    r.rdmd_snr = d.mean_material_snr(rd.x_m);
    r.semi_edges = d.worst_edge_error(semi.D_m, d.match(semi.x_m));
    r.unsup_edges = d.worst_edge_error(unsup.D_m, d.match(unsup.x_m));
    return r;
}

void c8_spectra_identity(const Desk& d)
{
    const std::size_t nm = 3, ns = 9, nk = d.s.grid.n_bins;
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor T({nm, ns}), D_s({nk, ns});
    for (auto& v : T.values()) v = u(rng);
    for (std::size_t m = 0; m < nm; ++m) T(m, m) += 1.0;
    for (auto& v : D_s.values()) v = u(rng);
    const Tensor& x_m = d.ph.x_m;
    const std::size_t nvox = x_m.size() / nm;
    Tensor x_s({d.s.scan.n_rows, d.s.scan.n_cols, d.s.scan.n_cols, ns});
    for (std::size_t v = 0; v < nvox; ++v)
        for (std::size_t j = 0; j < ns; ++j)
            for (std::size_t m = 0; m < nm; ++m) x_s[v * ns + j] += x_m[v * nm + m] * T(m, j);
    Tensor generating({nk, nm});
    for (std::size_t k = 0; k < nk; ++k)
        for (std::size_t m = 0; m < nm; ++m)
            for (std::size_t j = 0; j < ns; ++j) generating(k, m) += D_s(k, j) * T(m, j);
    const Tensor T_est = compute_transform(x_s, d.regions);
    const double err = test_support::max_abs_diff(estimate_spectra(D_s, T_est), generating);
    verdict(8, "subspace-to-material spectra identity", err <= tol::spectra_identity, fmt("max abs error %.2e (<= %.0e)", err, tol::spectra_identity));
}

void c9_nnls()
{
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t ns = 5, nvox = tol::nnls_voxels;
    Tensor T({3, ns});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < ns; ++j) T(i, j) = 0.2 * u(rng) + (i == j ? 1.0 : 0.0) + (j == i + 3 ? 0.5 : 0.0);
    Tensor x_s({nvox, ns});
    for (std::size_t n = 0; n < nvox; ++n) {
        double z[3];
        for (double& v : z) v = -0.5 + 2.0 * u(rng);
        for (std::size_t j = 0; j < ns; ++j) {
            x_s(n, j) = 0.05 * (u(rng) - 0.5);
            for (std::size_t i = 0; i < 3; ++i) x_s(n, j) += z[i] * T(i, j);
        }
    }
    const Tensor x_m = estimate_materials(x_s, T);
    const Eigen::MatrixXd A = T.matrix().transpose();
    const double lmax = (A.transpose() * A).eigenvalues().real().maxCoeff();
    const double resolution = 0.5 * lmax * 3.0 * std::pow(0.5 * tol::nnls_grid_step, 2);
    int worse = 0, far = 0;
    double kkt = 0.0;
    for (std::size_t n = 0; n < nvox; ++n) {
        const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(x_s.data() + n * ns, static_cast<Eigen::Index>(ns));
        const Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXd>(x_m.data() + n * 3, 3);
        const Eigen::Vector3d zg = test_support::grid_nnls(A, b);
        const double f = (b - A * z).squaredNorm(), fg = (b - A * zg).squaredNorm();
        worse += f > fg + 1e-12 || fg - f > resolution + 1e-12;
        far += (z - zg).cwiseAbs().maxCoeff() > 2.0 * tol::nnls_grid_step;
        const Eigen::VectorXd g = A.transpose() * (A * z - b);
        for (int i = 0; i < 3; ++i) kkt = std::max(kkt, z(i) == 0.0 ? std::max(0.0, -g(i)) : std::abs(g(i)));
        kkt = std::max(kkt, std::max(0.0, -z.minCoeff()));
    }
    verdict(9, "per-voxel NNLS against grid search", worse == 0 && far == 0 && kkt <= tol::kkt,
            fmt("%d objective mismatches, %d solutions off the %.0e grid, max KKT residual %.2e (<= %.0e) over %d voxels", worse, far,
                tol::nnls_grid_step, kkt, tol::kkt, tol::nnls_voxels));
}

void c10_offset(const Desk& d)
{
    const std::size_t nv = d.s.scan.n_views, nk = d.s.grid.n_bins;
    DoseModel dose = d.s.dose;
    dose.alpha = Tensor({nv, nk});
    for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t k = 0; k < nk; ++k) dose.alpha(v, k) = v == 5 ? 1.1 : 1.0;
    const ProjectionStack clean = counts_to_projections(simulate_counts(d.ph, d.D, d.s.dose, d.A, d.s.grid, std::nullopt).counts);
    const ProjectionStack raw = counts_to_projections(simulate_counts(d.ph, d.D, dose, d.A, d.s.grid, std::nullopt).counts);
    const OffsetCorrection b = estimate_offset(raw, edge_row_air_mask(d.s.scan.n_rows, d.s.scan.n_cols, d.s.air_rows));
    double b_err = 0.0;
    for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t k = 0; k < nk; ++k) b_err = std::max(b_err, std::abs(b.b(v, k) - std::log(dose.alpha(v, k))));
    const double p_err = test_support::max_abs_diff(apply_offset(raw, b).p, clean.p);
    verdict(10, "offset-correction round trip", b_err <= tol::offset_b && p_err <= tol::offset_p,
            fmt("b vs log(1.1) max error %.2e (<= %.0e); corrected projections max error %.2e (<= %.0e)", b_err, tol::offset_b, p_err,
                tol::offset_p));
}

std::vector<std::uint8_t> seeded_run()
{
    const RunConfig c = parse_config_text(R"([scan]
n_rows = 12
n_cols = 40
n_views = 16
n_subspace = 5
morph_window = 2
air_rows = 2
[grid]
lambda_min = 1.5
lambda_max = 4.5
n_bins = 64
[regions]
source = truth
[nmf]
max_iters = 150
[cluster]
min_region = 20
)");
    const auto& s = c.setup;
    const Projector A(s.scan.n_rows, s.scan.n_cols, s.scan.view_angles);
    const auto sim = simulate_counts(make_phantom(s.scan, s.layout), make_spectra(s.spectra, s.grid), s.dose, A, s.grid, c.noise_seed);
    const ProjectionStack p = counts_to_projections(sim.counts);
    const auto regions = config_regions(c);
    FhrResult fr;
    const FmdOptions opt = fmd_options(c, A);
    const FmdResult semi = fmd_pipeline(p, A, opt, &*regions, fr);
    const FmdResult unsup = fmd_from_subspace(fr.x_s, fr.subspace.D, opt, nullptr);
    const DhrResult dh = dhr(p, A);
    const RdmdResult rd = rdmd(p, A, *regions, &dh);
    std::vector<std::uint8_t> bytes;
    for (const Tensor* t : std::initializer_list<const Tensor*>{&sim.counts.object, &sim.counts.open_beam, &fr.subspace.V, &fr.subspace.D, &fr.x_s, &semi.T, &semi.x_m,
                            &semi.D_m, &unsup.x_m, &unsup.D_m, &dh.x_h, &rd.x_m, &rd.D_m}) {
        const auto e = encode_tensor(*t);
        bytes.insert(bytes.end(), e.begin(), e.end());
    }
    return bytes;
}

void c11_determinism()
{
    set_thread_count(1);
    const auto a = seeded_run();
    const auto b = seeded_run();
    set_thread_count(0);
    verdict(11, "single-threaded determinism", a == b, fmt("%zu output bytes from two seeded runs %s", a.size(), a == b ? "identical" : "differ"));
}

} // namespace

int main()
{
    const auto start = Clock::now();
    const Desk d;
    c1_identity(d);
    c2_adjoint();
    c3_mbir();

    const NoiselessFmd clean = run_noiseless(d);
    verdict(4, "NMF recovery", clean.nmf_rel < tol::nmf_rel, fmt("relative residual %.2e (< %.0e), N_s = 9", clean.nmf_rel, tol::nmf_rel));

    const PoissonRun pr = run_poisson(d);
    verdict(5, "FHR vs DHR SNR gap", pr.fhr_snr - pr.dhr_snr >= tol::snr_gap_db && pr.seconds <= tol::fhr_dhr_seconds,
            fmt("FHR %.2f dB, DHR %.2f dB, gap %.2f dB (>= %.0f); %.0f s (<= %.0f s)", pr.fhr_snr, pr.dhr_snr, pr.fhr_snr - pr.dhr_snr,
                tol::snr_gap_db, pr.seconds, tol::fhr_dhr_seconds));
    verdict(6, "reconstruction count and time", pr.fhr_count == 9 && pr.dhr_count == 256 && pr.fhr_recon_time < pr.dhr_recon_time,
            fmt("FHR %zu reconstructions in %.2f s, DHR %zu in %.2f s", pr.fhr_count, pr.fhr_recon_time, pr.dhr_count, pr.dhr_recon_time));

    double worst_nrmse = 0.0;
    for (double e : clean.nrmse) worst_nrmse = std::max(worst_nrmse, e);
    const bool c7 = clean.accuracy >= tol::label_accuracy && worst_nrmse < tol::spectrum_nrmse &&
                    pr.semi_snr - pr.rdmd_snr >= tol::material_gap_db && pr.unsup_snr - pr.rdmd_snr >= tol::material_gap_db &&
                    pr.semi_edges <= tol::edge_bins && pr.unsup_edges <= tol::edge_bins;
    verdict(7, "FMD accuracy", c7,
            fmt("noiseless labels %.4f (>= %.2f), worst spectrum NRMSE %.4f (< %.2f); Poisson material SNR semi %.2f / unsup %.2f vs "
                "RDMD %.2f dB (gap >= %.0f); edge error semi %zu / unsup %zu bins (<= %zu)",
                clean.accuracy, tol::label_accuracy, worst_nrmse, tol::spectrum_nrmse, pr.semi_snr, pr.unsup_snr, pr.rdmd_snr,
                tol::material_gap_db, pr.semi_edges, pr.unsup_edges, tol::edge_bins));

    c8_spectra_identity(d);
    c9_nnls();
    c10_offset(d);
    c11_determinism();

    std::printf("%d of 11 criteria failed; %.0f s total\n", failures, seconds_since(start));
    return failures == 0 ? 0 : 1;
}
