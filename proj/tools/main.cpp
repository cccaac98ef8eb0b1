// hsnct: command-line front end for simulation, reconstruction and decomposition.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hsnct/baselines.hpp"
#include "hsnct/config.hpp"
#include "hsnct/export.hpp"
#include "hsnct/metrics.hpp"
#include "hsnct/parallel.hpp"
#include "hsnct/simulation.hpp"
#include "hsnct/subspace.hpp"
#include "hsnct/tensor_io.hpp"

#ifndef HSNCT_VERSION
#define HSNCT_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace hsnct;

namespace {

struct Common {
    std::string config;
    std::string out = ".";
    unsigned threads = 0;
    std::optional<std::uint64_t> seed;
};

struct Run {
    std::string command;
    RunConfig cfg;
    fs::path out, input;
    RunReport report;
    unsigned threads = 0;

    Projector projector() const { return Projector(cfg.setup.scan.n_rows, cfg.setup.scan.n_cols, cfg.setup.scan.view_angles); }

    fs::path in(const std::string& name) const { return input / name; }

    void write(const std::string& name, const Tensor& t) const { write_tensor(out / name, t); }

    void finish() const
    {
        {
            std::ofstream os(out / ("report_" + command + ".csv"), std::ios::trunc);
            os << report.csv();
        }
        {
            std::ofstream os(out / ("report_" + command + ".txt"), std::ios::trunc);
            os << report.table();
        }
        std::ofstream os(out / ("provenance_" + command + ".txt"), std::ios::trunc);
        if (!os) throw DataError("cannot write provenance in " + out.string());
        os << "[provenance]\ncommand = " << command << "\nversion = " << HSNCT_VERSION << "\nconfig_hash = " << config_hash(cfg)
           << "\nthreads = " << thread_count() << "\n\n"
           << to_text(cfg);
        std::cout << report.table();
    }
};

Run open_run(const std::string& command, const Common& c)
{
    Run r;
    r.command = command;
    r.cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed) {
        if (r.cfg.noise_seed) r.cfg.noise_seed = *c.seed;
        r.cfg.nmf_seed = *c.seed;
        r.cfg.gmm_seed = *c.seed;
    }
    set_thread_count(c.threads);
    r.out = c.out;
    fs::create_directories(r.out);
    r.input = r.cfg.input.empty() ? r.out : fs::path(r.cfg.input);
    r.report.add("run", "command", command);
    r.report.add("run", "config_hash", config_hash(r.cfg));
    return r;
}

ProjectionStack load_projections(Run& r)
{
    CountData counts{read_tensor(r.in("y.hst")), read_tensor(r.in("y0.hst"))};
    const auto& s = r.cfg.setup.scan;
    require_shape(counts.object, {s.n_views, s.n_rows, s.n_cols, s.n_wavelengths}, "object counts " + r.in("y.hst").string());
    ProjectionStack p = counts_to_projections(counts);
    r.report.add_count("data", "invalid_entries", p.n_invalid());
    if (r.cfg.offset_correction) {
        p = apply_offset(std::move(p), estimate_offset(p, edge_row_air_mask(s.n_rows, s.n_cols, r.cfg.setup.air_rows)));
        r.report.add("data", "offset_correction", "air");
    }
    return p;
}

void write_slabs(const Run& r, const fs::path& dir, const Tensor& x_s, const Tensor& D_s)
{
    fs::create_directories(dir);
    expand_streamed(x_s, D_s, [&](std::size_t slice, const Tensor& slab) {
        char name[32];
        std::snprintf(name, sizeof name, "slice_%04zu.hst", slice);
        write_tensor(dir / name, slab);
    });
    (void)r;
}

void cmd_simulate(Run& r)
{
    const auto& s = r.cfg.setup;
    const Projector A = r.projector();
    const Phantom ph = make_phantom(s.scan, s.layout);
    const Tensor D = make_spectra(s.spectra, s.grid);
    const auto t0 = std::chrono::steady_clock::now();
    const auto sim = simulate_counts(ph, D, s.dose, A, s.grid, r.cfg.noise_seed);
    r.report.add("simulate", "seconds", seconds_since(t0));
    r.report.add("simulate", "noise_seed", r.cfg.noise_seed ? std::to_string(*r.cfg.noise_seed) : "none");
    r.write("y.hst", sim.counts.object);
    r.write("y0.hst", sim.counts.open_beam);
    r.write("p_true.hst", sim.p_true);
    r.write("x_m_true.hst", ph.x_m);
    r.write("D_m_true.hst", D);
    write_spectra_csv(r.out / "D_m_true.csv", s.grid, D, s.layout.materials);
    Manifest m{s.scan, s.grid, {{"air_rows", std::to_string(s.air_rows)}}};
    write_manifest(r.out / "manifest.txt", m);
}

void cmd_fhr(Run& r)
{
    const ProjectionStack p = load_projections(r);
    const Projector A = r.projector();
    FhrResult fr = fhr_reconstruct(p, A, fhr_options(r.cfg));
    r.write("V_s.hst", fr.subspace.V);
    r.write("D_s.hst", fr.subspace.D);
    r.write("x_s.hst", fr.x_s);
    const auto t0 = std::chrono::steady_clock::now();
    write_slabs(r, r.out / "x_h", fr.x_s, fr.subspace.D);
    fr.times.expand = seconds_since(t0);
    r.report.add_count("fhr", "reconstructions", fr.recon_count);
    r.report.add("fhr", "nmf_relative_residual", fr.subspace.relative_residual);
    r.report.add_count("fhr", "nmf_clamped_negatives", fr.subspace.clamped_negatives);
    r.report.add("fhr", "decompose_seconds", fr.times.decompose);
    r.report.add("fhr", "reconstruct_seconds", fr.times.reconstruct);
    r.report.add("fhr", "expand_seconds", fr.times.expand);
}

void report_fmd(Run& r, const FmdResult& f)
{
    r.report.add("fmd", "mode", f.unsupervised ? "unsupervised" : "semi-supervised");
    r.report.add_count("fmd", "fractions_above_one", f.fractions_above_one);
    r.report.add_count("fmd", "negative_spectrum_values", f.negative_spectrum_values);
    r.report.add("fmd", "cluster_seconds", f.cluster_time);
    r.report.add("fmd", "decompose_seconds", f.decompose_time);
    const auto& grid = r.cfg.setup.grid;
    for (std::size_t m = 0; m < f.edges.size(); ++m) {
        std::string edges;
        for (std::size_t k : f.edges[m]) edges += (edges.empty() ? "" : " ") + format_double(grid.center(k));
        r.report.add("fmd", f.regions.names.size() > m && !f.regions.names[m].empty() ? "edges_" + f.regions.names[m] : "edges_" + std::to_string(m), edges);
    }
}

void cmd_fmd(Run& r)
{
    const ProjectionStack p = load_projections(r);
    const Projector A = r.projector();
    const auto regions = config_regions(r.cfg);
    FhrResult fr;
    const FmdResult f = fmd_pipeline(p, A, fmd_options(r.cfg, A), regions ? &*regions : nullptr, fr);
    r.write("V_s.hst", fr.subspace.V);
    r.write("D_s.hst", fr.subspace.D);
    r.write("x_s.hst", fr.x_s);
    r.write("T.hst", f.T);
    r.write("x_m.hst", f.x_m);
    r.write("D_m.hst", f.D_m);
    std::vector<std::string> names = f.regions.names;
    if (f.unsupervised) {
        names.clear();
        for (std::size_t m = 0; m < f.D_m.dim(1); ++m) names.push_back("cluster" + std::to_string(m));
    }
    write_spectra_csv(r.out / "D_m.csv", r.cfg.setup.grid, f.D_m, names);
    r.report.add_count("fhr", "reconstructions", fr.recon_count);
    r.report.add("fhr", "nmf_relative_residual", fr.subspace.relative_residual);
    r.report.add("fhr", "decompose_seconds", fr.times.decompose);
    r.report.add("fhr", "reconstruct_seconds", fr.times.reconstruct);
    report_fmd(r, f);
}

void cmd_dhr(Run& r)
{
    const ProjectionStack p = load_projections(r);
    const DhrResult d = dhr(p, r.projector());
    const std::size_t nr = d.x_h.dim(0), nc = d.x_h.dim(1), nk = d.x_h.dim(3);
    fs::create_directories(r.out / "x_h_dhr");
    for (std::size_t s = 0; s < nr; ++s) {
        Tensor slab({nc, nc, nk});
        std::copy_n(d.x_h.data() + s * nc * nc * nk, slab.size(), slab.data());
        char name[32];
        std::snprintf(name, sizeof name, "slice_%04zu.hst", s);
        write_tensor(r.out / "x_h_dhr" / name, slab);
    }
    r.report.add_count("dhr", "reconstructions", d.recon_count);
    r.report.add("dhr", "reconstruct_seconds", d.recon_time);
}

void cmd_rdmd(Run& r)
{
    const auto regions = config_regions(r.cfg);
    if (!regions) throw ConfigError("rdmd needs material regions: add a [regions] section");
    const ProjectionStack p = load_projections(r);
    const RdmdResult d = rdmd(p, r.projector(), *regions);
    r.write("x_m_rdmd.hst", d.x_m);
    r.write("D_m_rdmd.hst", d.D_m);
    r.write("V_m_rdmd.hst", d.V_m);
    write_spectra_csv(r.out / "D_m_rdmd.csv", r.cfg.setup.grid, d.D_m, regions->names);
    r.report.add_count("rdmd", "reconstructions", d.recon_count);
    r.report.add("rdmd", "reconstruct_seconds", d.recon_time);
}

Tensor read_slabs(const fs::path& dir, std::size_t n_rows)
{
    Tensor vol;
    for (std::size_t s = 0; s < n_rows; ++s) {
        char name[32];
        std::snprintf(name, sizeof name, "slice_%04zu.hst", s);
        const Tensor slab = read_tensor(dir / name);
        if (vol.empty()) vol = Tensor({n_rows, slab.dim(0), slab.dim(1), slab.dim(2)});
        if (slab.size() * n_rows != vol.size()) throw ShapeError("slab " + (dir / name).string() + " has the wrong shape");
        std::copy_n(slab.data(), slab.size(), vol.data() + s * slab.size());
    }
    return vol;
}

void cmd_metrics(Run& r)
{
    const auto& s = r.cfg.setup;
    const Tensor truth = read_tensor(r.in("x_m_true.hst"));
    const Tensor D_true = read_tensor(r.in("D_m_true.hst"));
    const std::size_t nm = truth.dim(3);
    std::vector<int> labels(truth.size() / nm, -1);
    std::vector<std::uint8_t> support(labels.size());
    for (std::size_t v = 0; v < labels.size(); ++v)
        for (std::size_t m = 0; m < nm; ++m)
            if (truth[v * nm + m] > 0.0) labels[v] = static_cast<int>(m), support[v] = 1;
    const Projector A = r.projector();
    const MaskPair masks = support_masks(support, s.scan.n_rows, s.scan.n_cols, A.fov());
    const auto true_edges = spectra_edge_bins(s.spectra, s.grid);

    for (const auto& [dir, tag] : {std::pair<std::string, std::string>{"x_h", "fhr"}, {"x_h_dhr", "dhr"}}) {
        if (!fs::exists(r.out / dir)) continue;
        try {
            const SnrResult snr = snr_recon(read_slabs(r.out / dir, s.scan.n_rows), masks);
            r.report.add(tag, "snr_db", snr.db);
            r.report.add_count(tag, "snr_excluded_bins", snr.excluded_bins);
        } catch (const DomainError& e) {
            r.report.add(tag, "snr_db", std::string("unavailable: ") + e.what());
        }
    }
    const auto inner = interior_mask(labels, s.scan.n_rows, s.scan.n_cols);
    for (const auto& [stem, tag] : {std::pair<std::string, std::string>{"", "fmd"}, {"_rdmd", "rdmd"}}) {
        const fs::path xp = r.out / ("x_m" + stem + ".hst"), dp = r.out / ("D_m" + stem + ".hst");
        if (!fs::exists(xp) || !fs::exists(dp)) continue;
        const Tensor x_m = read_tensor(xp), D_m = read_tensor(dp);
        if (x_m.dim(3) != nm || D_m.dim(1) != nm) throw ShapeError(xp.string() + ": material count differs from the truth");
        const auto perm = best_permutation(nm, [&](std::size_t t, std::size_t e) {
            double sc = 0.0;
            for (std::size_t v = 0; v < labels.size(); ++v)
                if (labels[v] == static_cast<int>(t)) sc += x_m[v * nm + e];
            return sc;
        });
        r.report.add(tag, "label_accuracy", label_accuracy(x_m, labels, inner, perm));
        std::vector<double> snr(nm, std::numeric_limits<double>::quiet_NaN());
        try {
            snr = snr_materials(x_m, labels, perm, A.fov());
        } catch (const DomainError& e) {
            r.report.add(tag, "snr_db", std::string("unavailable: ") + e.what());
        }
        const auto spectra_snr = snr_spectra(D_m);
        const auto edges = bragg_edges(D_m, true_edges.empty() ? 3 : true_edges[0].size());
        double mean = 0.0;
        for (std::size_t m = 0; m < nm; ++m) {
            const std::string name = s.layout.materials[m];
            mean += snr[m] / static_cast<double>(nm);
            r.report.add(tag, "snr_db_" + name, snr[m]);
            r.report.add(tag, "spectrum_snr_db_" + name, spectra_snr[perm[m]]);
            r.report.add(tag, "spectrum_nrmse_" + name, nrmse(column(D_m, perm[m]), column(D_true, m)));
            std::size_t worst = 0;
            const auto& est = edges[perm[m]];
            for (std::size_t i = 0; i < true_edges[m].size(); ++i) {
                const std::size_t e = i < est.size() ? est[i] : 0;
                worst = std::max(worst, e > true_edges[m][i] ? e - true_edges[m][i] : true_edges[m][i] - e);
            }
            r.report.add_count(tag, "edge_error_bins_" + name, worst);
        }
        r.report.add(tag, "snr_db_mean", mean);
    }
}

struct ExportArgs {
    std::string volume, spectra;
    std::size_t slice = 0;
    std::vector<std::size_t> channels;
};

void cmd_export(Run& r, const ExportArgs& a)
{
    if (a.volume.empty() && a.spectra.empty()) throw ConfigError("export: give --volume and/or --spectra");
    if (!a.volume.empty()) {
        const Tensor vol = read_tensor(a.volume);
        std::vector<std::size_t> ch = a.channels;
        if (ch.empty()) ch.push_back(0);
        const auto images = export_slices(vol, a.slice, ch, r.out, fs::path(a.volume).stem().string());
        for (const auto& img : images) r.report.add("export", img.image.filename().string(), format_double(img.lo) + " .. " + format_double(img.hi));
    }
    if (!a.spectra.empty()) {
        const Tensor D = read_tensor(a.spectra);
        const fs::path csv = r.out / (fs::path(a.spectra).stem().string() + ".csv");
        write_spectra_csv(csv, r.cfg.setup.grid, D, {});
        r.report.add("export", "spectra_csv", csv.string());
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Hyperspectral neutron CT: simulation, FHR/FMD reconstruction, baselines and metrics"};
    app.set_version_flag("--version", HSNCT_VERSION);
    app.require_subcommand(1, 1);

    Common common;
    ExportArgs ex;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"simulate", "Simulate counts y, y0 and ground truth"},
        {"fhr", "Fast hyperspectral reconstruction (NMF, N_s MBIR reconstructions, expansion)"},
        {"fmd", "Fast material decomposition; unsupervised when the config has no [regions]"},
        {"dhr", "Direct hyperspectral reconstruction (one FBP per wavelength bin)"},
        {"rdmd", "Reconstruction-domain material decomposition (needs [regions])"},
        {"metrics", "Score results in --out against simulated ground truth"},
        {"export", "Write PGM slices of a volume and CSV spectra"}};
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", common.config, "Run configuration file (defaults: built-in desk setup)");
        sub->add_option("--out", common.out, "Output directory")->capture_default_str();
        sub->add_option("--threads", common.threads, "Thread cap; 1 gives bit-exact reruns (0: all cores)");
        sub->add_option("--seed", common.seed, "Override every named seed");
        if (name == "export") {
            sub->add_option("--volume", ex.volume, "HST1 volume (rows, cols, cols, channels) or slab");
            sub->add_option("--slice", ex.slice, "Axial slice index");
            sub->add_option("--channels", ex.channels, "Channel or bin indices")->delimiter(',');
            sub->add_option("--spectra", ex.spectra, "HST1 spectra (N_k, columns) to write as CSV");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_code(ErrorKind::config);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        Run run = open_run(command, common);
        if (command == "simulate") cmd_simulate(run);
        else if (command == "fhr") cmd_fhr(run);
        else if (command == "fmd") cmd_fmd(run);
        else if (command == "dhr") cmd_dhr(run);
        else if (command == "rdmd") cmd_rdmd(run);
        else if (command == "metrics") cmd_metrics(run);
        else cmd_export(run, ex);
        run.finish();
    } catch (const Error& e) {
        std::cerr << "hsnct " << command << ": " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "hsnct " << command << ": " << e.what() << "\n";
        return exit_code(ErrorKind::data);
    }
    return 0;
}
