#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hsnct/decomposition.hpp"
#include "hsnct/errors.hpp"
#include "hsnct/simulation.hpp"
#include "hsnct/subspace.hpp"
#include "hsnct/tensor_io.hpp"

namespace hsnct {

/// Everything a run needs. Defaults reproduce the desk-scale setup.
struct RunConfig {
    SimulationSetup setup = default_desk_setup();
    std::vector<std::pair<std::size_t, double>> view_dose;  // (view, alpha) applied to every bin of that view
    NmfOptions nmf{};
    MbirParams mbir = fhr_mbir_defaults();
    double sigma_v_floor = FhrOptions{}.sigma_v_floor;
    GmmOptions gmm{};
    std::size_t min_region = ClusterOptions{}.min_region;
    std::size_t n_edges = FmdOptions{}.n_edges;
    std::optional<std::uint64_t> noise_seed = 7;  // nullopt: noiseless counts
    std::uint64_t nmf_seed = 0;
    std::uint64_t gmm_seed = 0;
    bool offset_correction = false;  // estimate b from the air rows before reconstructing
    bool truth_regions = false;      // regions from the simulated layout
    std::vector<std::pair<std::string, Cuboid>> regions;
    std::string input;               // directory with simulated or measured counts; empty: the output directory

    bool operator==(const RunConfig&) const = default;

    bool has_regions() const { return truth_regions || !regions.empty(); }
};

namespace detail {

struct ConfigLine {
    std::string key, value;
    std::size_t line = 0;
    bool used = false;
};

struct ConfigSection {
    std::string name, arg;
    std::size_t line = 0;
    std::vector<ConfigLine> entries;
    std::vector<ConfigLine> bare;  // lines without '='
};

inline std::string config_where(const std::string& origin, std::size_t line)
{
    return origin + ":" + std::to_string(line) + ": ";
}

class SectionReader {
public:
    SectionReader(ConfigSection& s, const std::string& origin) : s_(s), origin_(origin) {}

    const ConfigLine* one(const std::string& key)
    {
        const ConfigLine* hit = nullptr;
        for (auto& e : s_.entries) {
            if (e.key != key) continue;
            if (hit) throw ConfigError(config_where(origin_, e.line) + "duplicate key '" + key + "' in [" + s_.name + "]");
            e.used = true;
            hit = &e;
        }
        return hit;
    }

    std::vector<const ConfigLine*> all(const std::string& key)
    {
        std::vector<const ConfigLine*> out;
        for (auto& e : s_.entries)
            if (e.key == key) {
                e.used = true;
                out.push_back(&e);
            }
        return out;
    }

    template <class T>
    void number(const std::string& key, T& target)
    {
        if (const auto* e = one(key)) target = parse<T>(*e);
    }

    void flag(const std::string& key, bool& target)
    {
        if (const auto* e = one(key)) {
            if (e->value == "on" || e->value == "true") target = true;
            else if (e->value == "off" || e->value == "false") target = false;
            else throw ConfigError(config_where(origin_, e->line) + key + " must be on or off");
        }
    }

    template <class T>
    T parse(const ConfigLine& e) const
    {
        return parse_as<T>(e.value, e);
    }

    template <class T>
    T parse_as(const std::string& text, const ConfigLine& e) const
    {
        T v{};
        const char* end = text.data() + text.size();
        const auto [ptr, ec] = std::from_chars(text.data(), end, v);
        if (ec != std::errc() || ptr != end || text.empty())
            throw ConfigError(config_where(origin_, e.line) + "cannot read '" + text + "' for " + e.key);
        return v;
    }

    void finish() const
    {
        for (const auto& e : s_.entries)
            if (!e.used) throw ConfigError(config_where(origin_, e.line) + "unknown key '" + e.key + "' in [" + s_.name + "]");
        if (!s_.bare.empty()) throw ConfigError(config_where(origin_, s_.bare.front().line) + "expected key = value");
    }

    const std::string& origin() const { return origin_; }

private:
    ConfigSection& s_;
    const std::string& origin_;
};

inline std::vector<std::string> split_list(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::vector<std::string> split_words(const std::string& s)
{
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

inline std::size_t material_index(const std::vector<std::string>& names, const std::string& name, const std::string& where)
{
    for (std::size_t m = 0; m < names.size(); ++m)
        if (names[m] == name) return m;
    throw ConfigError(where + "unknown material '" + name + "'");
}

// "material NAME: cuboid (r0,c0,s0)-(r1,c1,s1)"
inline std::pair<std::string, Cuboid> parse_region_line(const ConfigLine& e, const SectionReader& r)
{
    const std::string where = config_where(r.origin(), e.line);
    const std::string& t = e.value;
    const auto colon = t.find(':');
    if (t.rfind("material ", 0) != 0 || colon == std::string::npos) throw ConfigError(where + "expected 'material NAME: cuboid (r0,c0,s0)-(r1,c1,s1)'");
    const std::string name = trim(t.substr(9, colon - 9));
    std::string rest = trim(t.substr(colon + 1));
    if (name.empty() || rest.rfind("cuboid", 0) != 0) throw ConfigError(where + "expected 'material NAME: cuboid (r0,c0,s0)-(r1,c1,s1)'");
    rest = trim(rest.substr(6));
    std::size_t v[6];
    std::size_t n = 0;
    std::string digits;
    for (char ch : rest + " ") {
        if (ch >= '0' && ch <= '9') {
            digits += ch;
            continue;
        }
        if (!digits.empty()) {
            if (n == 6) throw ConfigError(where + "cuboid needs exactly six corner indices");
            v[n++] = r.parse_as<std::size_t>(digits, e);
            digits.clear();
        }
        if (std::string("(),- \t").find(ch) == std::string::npos) throw ConfigError(where + "unexpected '" + std::string(1, ch) + "' in cuboid");
    }
    if (n != 6) throw ConfigError(where + "cuboid needs exactly six corner indices");
    return {name, Cuboid{v[0], v[1], v[2], v[3], v[4], v[5]}};
}

inline std::string join_doubles(const std::vector<double>& v, const std::string& sep)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + format_double(v[i]);
    return out;
}

} // namespace detail

/// Builds the per-view alpha tensor (N_v, N_k) from `view_dose`.
inline Tensor view_dose_alpha(const RunConfig& c)
{
    if (c.view_dose.empty()) return {};
    Tensor a({c.setup.scan.n_views, c.setup.grid.n_bins});
    for (auto& v : a.values()) v = 1.0;
    for (const auto& [view, factor] : c.view_dose) {
        if (view >= c.setup.scan.n_views) throw ConfigError("dose: view " + std::to_string(view) + " out of range");
        if (!(factor > 0.0)) throw ConfigError("dose: alpha factors must be positive");
        for (std::size_t k = 0; k < c.setup.grid.n_bins; ++k) a(view, k) = factor;
    }
    return a;
}

/// Material regions named by the config, in layout material order.
inline std::optional<RegionSet> config_regions(const RunConfig& c)
{
    const auto& scan = c.setup.scan;
    if (c.truth_regions) return truth_regions(scan, c.setup.layout);
    if (c.regions.empty()) return std::nullopt;
    const auto& names = c.setup.layout.materials;
    std::vector<Cuboid> boxes(names.size());
    std::vector<std::uint8_t> seen(names.size(), 0);
    for (const auto& [name, box] : c.regions) {
        const std::size_t m = detail::material_index(names, name, "regions: ");
        if (seen[m]) throw ConfigError("regions: material '" + name + "' given twice");
        seen[m] = 1;
        boxes[m] = box;
    }
    for (std::size_t m = 0; m < names.size(); ++m)
        if (!seen[m]) throw ConfigError("regions: no cuboid for material '" + names[m] + "'");
    auto set = RegionSet::from_cuboids(names, boxes, scan.n_rows, scan.n_cols);
    return set;
}

inline FhrOptions fhr_options(const RunConfig& c)
{
    FhrOptions o;
    o.n_subspace = c.setup.scan.n_subspace;
    o.nmf_seed = c.nmf_seed;
    o.nmf = c.nmf;
    o.mbir = c.mbir;
    o.air_mask = edge_row_air_mask(c.setup.scan.n_rows, c.setup.scan.n_cols, c.setup.air_rows);
    o.sigma_v_floor = c.sigma_v_floor;
    return o;
}

inline FmdOptions fmd_options(const RunConfig& c, const Projector& projector)
{
    FmdOptions o;
    o.fhr = fhr_options(c);
    o.n_materials = c.setup.scan.n_materials;
    o.window = c.setup.scan.morph_window;
    o.gmm_seed = c.gmm_seed;
    o.cluster.gmm = c.gmm;
    o.cluster.min_region = c.min_region;
    o.cluster.support = projector.fov();
    o.n_edges = c.n_edges;
    return o;
}

/// Checks every invariant that can be checked before compute.
inline void validate_config(const RunConfig& c)
{
    const auto& s = c.setup;
    s.grid.validate();
    s.scan.validate();
    if (s.scan.n_wavelengths != s.grid.n_bins) throw ConfigError("scan: N_k differs from the wavelength grid");
    if (s.scan.n_materials != s.layout.materials.size()) throw ConfigError("scan: N_m differs from the material list");
    if (2 * s.air_rows >= s.scan.n_rows) throw ConfigError("scan: air_rows leaves no sample slices");
    s.dose.validate();
    if (s.spectra.size() != s.layout.materials.size()) throw ConfigError("spectra: one spectrum per material");
    make_spectra(s.spectra, s.grid);
    make_phantom(s.scan, s.layout);
    if (c.nmf.restarts < 1 || c.nmf.max_iters < 0 || c.nmf.inner_updates < 1 || !(c.nmf.tolerance >= 0.0) || !(c.nmf.view_ridge >= 0.0))
        throw ConfigError("nmf: invalid solver options");
    MbirParams m = c.mbir;
    if (m.sigma_v < 0.0) throw ConfigError("mbir: sigma_v must be positive or auto");
    if (m.sigma_v == 0.0) m.sigma_v = 1.0;
    m.validate();
    if (!(c.sigma_v_floor >= 0.0)) throw ConfigError("mbir: sigma_v_floor must be non-negative");
    if (c.gmm.restarts < 1 || c.gmm.max_iters < 1 || !(c.gmm.ridge >= 0.0) || !(c.gmm.tolerance >= 0.0))
        throw ConfigError("cluster: invalid EM options");
    if (c.n_edges < 1) throw ConfigError("fmd: n_edges must be at least 1");
    view_dose_alpha(c);
    if (auto r = config_regions(c)) r->validate(s.scan.n_rows * s.scan.n_cols * s.scan.n_cols, c.min_region);
}

/// Parses the sectioned `key = value` format; see README for the keys.
/// A [provenance] section is informational and skipped.
inline RunConfig parse_config(std::istream& in, const std::string& origin = "config")
{
    using detail::config_where;
    std::vector<detail::ConfigSection> sections;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(config_where(origin, lineno) + "unterminated section header");
            const auto words = detail::split_words(line.substr(1, line.size() - 2));
            if (words.empty() || words.size() > 2) throw ConfigError(config_where(origin, lineno) + "bad section header");
            sections.push_back({words[0], words.size() > 1 ? words[1] : "", lineno, {}, {}});
            continue;
        }
        if (sections.empty()) throw ConfigError(config_where(origin, lineno) + "entry before any section");
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            sections.back().bare.push_back({"", line, lineno});
        else
            sections.back().entries.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
    }

    static const std::set<std::string> known = {"scan", "grid", "dose", "layout", "spectrum", "regions", "nmf",
                                                "mbir", "cluster", "fmd", "seeds", "data", "provenance"};
    std::map<std::string, detail::ConfigSection*> single;
    std::vector<detail::ConfigSection*> spectra;
    for (auto& s : sections) {
        if (!known.count(s.name)) throw ConfigError(config_where(origin, s.line) + "unknown section [" + s.name + "]");
        if (s.name == "spectrum") {
            if (s.arg.empty()) throw ConfigError(config_where(origin, s.line) + "[spectrum NAME] needs a material name");
            spectra.push_back(&s);
            continue;
        }
        if (!s.arg.empty()) throw ConfigError(config_where(origin, s.line) + "[" + s.name + "] takes no argument");
        if (single.count(s.name)) throw ConfigError(config_where(origin, s.line) + "duplicate section [" + s.name + "]");
        single[s.name] = &s;
    }
    auto section = [&](const std::string& name) { return single.count(name) ? single[name] : nullptr; };

    RunConfig c;
    auto& setup = c.setup;
    auto& scan = setup.scan;

    if (auto* s = section("scan")) {
        detail::SectionReader r(*s, origin);
        r.number("n_rows", scan.n_rows);
        r.number("n_cols", scan.n_cols);
        r.number("n_views", scan.n_views);
        r.number("n_subspace", scan.n_subspace);
        r.number("morph_window", scan.morph_window);
        r.number("air_rows", setup.air_rows);
        scan.view_angles = ScanParams::uniform_angles(scan.n_views);
        if (const auto* e = r.one("view_angles"); e && e->value != "uniform") {
            scan.view_angles.clear();
            for (const auto& item : detail::split_list(e->value, ',')) scan.view_angles.push_back(r.parse_as<double>(item, *e));
            if (scan.view_angles.size() != scan.n_views) throw ConfigError(config_where(origin, e->line) + "view_angles must list n_views angles");
        }
        r.finish();
    }
    if (auto* s = section("grid")) {
        detail::SectionReader r(*s, origin);
        r.number("lambda_min", setup.grid.lambda_min);
        r.number("lambda_max", setup.grid.lambda_max);
        r.number("n_bins", setup.grid.n_bins);
        r.finish();
    }
    scan.n_wavelengths = setup.grid.n_bins;
    if (auto* s = section("dose")) {
        detail::SectionReader r(*s, origin);
        r.number("peak", setup.dose.peak);
        r.number("falloff", setup.dose.falloff);
        r.number("spectral_center", setup.dose.spectral_center);
        r.number("spectral_width", setup.dose.spectral_width);
        if (const auto* e = r.one("view_alpha"); e && e->value != "none") {
            for (const auto& item : detail::split_list(e->value, ',')) {
                const auto colon = item.find(':');
                if (colon == std::string::npos) throw ConfigError(config_where(origin, e->line) + "view_alpha entries are VIEW:FACTOR");
                c.view_dose.emplace_back(r.parse_as<std::size_t>(trim(item.substr(0, colon)), *e),
                                         r.parse_as<double>(trim(item.substr(colon + 1)), *e));
            }
        }
        r.finish();
    }

    bool preset = true;
    if (auto* s = section("layout")) {
        detail::SectionReader r(*s, origin);
        const auto* p = r.one("preset");
        const auto* names = r.one("materials");
        const auto cylinders = r.all("cylinder");
        const auto blocks = r.all("block");
        r.finish();
        if (p && (names || !cylinders.empty() || !blocks.empty()))
            throw ConfigError(config_where(origin, p->line) + "preset excludes explicit materials and shapes");
        if (p && p->value != "frame") throw ConfigError(config_where(origin, p->line) + "unknown preset '" + p->value + "'");
        if (!p) {
            preset = false;
            Layout l;
            if (names) l.materials = detail::split_list(names->value, ',');
            for (const auto* e : cylinders) {
                const auto w = detail::split_words(e->value);
                if (w.size() != 6) throw ConfigError(config_where(origin, e->line) + "cylinder = MATERIAL cx cy radius s0 s1");
                l.cylinders.push_back({detail::material_index(l.materials, w[0], config_where(origin, e->line)), r.parse_as<double>(w[1], *e),
                                       r.parse_as<double>(w[2], *e), r.parse_as<double>(w[3], *e), r.parse_as<std::size_t>(w[4], *e),
                                       r.parse_as<std::size_t>(w[5], *e)});
            }
            for (const auto* e : blocks) {
                const auto w = detail::split_words(e->value);
                if (w.size() != 7) throw ConfigError(config_where(origin, e->line) + "block = MATERIAL r0 c0 s0 r1 c1 s1");
                std::size_t v[6];
                for (int i = 0; i < 6; ++i) v[i] = r.parse_as<std::size_t>(w[static_cast<std::size_t>(i) + 1], *e);
                l.blocks.push_back({detail::material_index(l.materials, w[0], config_where(origin, e->line)), {v[0], v[1], v[2], v[3], v[4], v[5]}});
            }
            setup.layout = l;
        }
    }
    if (preset) setup.layout = Layout::frame_preset(scan, setup.air_rows);
    scan.n_materials = setup.layout.materials.size();

    if (!spectra.empty() || !preset) {
        // Materials without a [spectrum NAME] section take the built-in spectrum of that name.
        const auto defaults = default_spectra();
        setup.spectra.assign(setup.layout.materials.size(), {});
        std::vector<std::uint8_t> seen(setup.spectra.size(), 0);
        for (auto* s : spectra) {
            const std::size_t m = detail::material_index(setup.layout.materials, s->arg, config_where(origin, s->line));
            if (seen[m]) throw ConfigError(config_where(origin, s->line) + "duplicate spectrum for '" + s->arg + "'");
            seen[m] = 1;
            detail::SectionReader r(*s, origin);
            MaterialSpectrum& ms = setup.spectra[m];
            ms.name = s->arg;
            r.number("a", ms.a);
            r.number("b", ms.b);
            if (const auto* e = r.one("edges"); e && e->value != "none") {
                for (const auto& item : detail::split_list(e->value, ';')) {
                    const auto w = detail::split_words(item);
                    if (w.size() != 3) throw ConfigError(config_where(origin, e->line) + "edges are 'lambda jump decay' triples separated by ';'");
                    ms.edges.push_back({r.parse_as<double>(w[0], *e), r.parse_as<double>(w[1], *e), r.parse_as<double>(w[2], *e)});
                }
            }
            r.finish();
        }
        for (std::size_t m = 0; m < seen.size(); ++m) {
            if (seen[m]) continue;
            const std::string& name = setup.layout.materials[m];
            auto it = std::find_if(defaults.begin(), defaults.end(), [&](const MaterialSpectrum& d) { return d.name == name; });
            if (it == defaults.end()) throw ConfigError(origin + ": no [spectrum " + name + "] section and no built-in spectrum");
            setup.spectra[m] = *it;
        }
    }

    if (auto* s = section("regions")) {
        detail::SectionReader r(*s, origin);
        if (const auto* e = r.one("source")) {
            if (e->value != "truth") throw ConfigError(config_where(origin, e->line) + "source must be 'truth' (or give material cuboids)");
            c.truth_regions = true;
        }
        for (auto& b : s->bare) {
            c.regions.push_back(detail::parse_region_line(b, r));
            detail::material_index(setup.layout.materials, c.regions.back().first, config_where(origin, b.line));
        }
        s->bare.clear();
        if (c.truth_regions && !c.regions.empty()) throw ConfigError(config_where(origin, s->line) + "source = truth excludes explicit cuboids");
        r.finish();
    }
    if (auto* s = section("nmf")) {
        detail::SectionReader r(*s, origin);
        r.number("max_iters", c.nmf.max_iters);
        r.number("tolerance", c.nmf.tolerance);
        r.number("restarts", c.nmf.restarts);
        r.number("inner_updates", c.nmf.inner_updates);
        r.number("view_ridge", c.nmf.view_ridge);
        r.finish();
    }
    if (auto* s = section("mbir")) {
        detail::SectionReader r(*s, origin);
        r.number("max_iters", c.mbir.max_iters);
        r.number("tolerance", c.mbir.tolerance);
        r.number("p", c.mbir.p_exp);
        r.number("threshold", c.mbir.threshold);
        if (const auto* e = r.one("sigma_x")) c.mbir.sigma_x = e->value == "auto" ? std::nullopt : std::optional<double>(r.parse<double>(*e));
        if (const auto* e = r.one("sigma_v")) c.mbir.sigma_v = e->value == "auto" ? 0.0 : r.parse<double>(*e);
        r.number("sigma_v_floor", c.sigma_v_floor);
        r.flag("prior", c.mbir.prior_enabled);
        r.flag("zero_skipping", c.mbir.zero_skipping);
        if (const auto* e = r.one("neighbour_weights")) {
            const auto w = detail::split_words(e->value);
            if (w.size() != 3) throw ConfigError(config_where(origin, e->line) + "neighbour_weights = nearest diagonal cross_slice");
            c.mbir.weights = {r.parse_as<double>(w[0], *e), r.parse_as<double>(w[1], *e), r.parse_as<double>(w[2], *e)};
        }
        r.finish();
    }
    if (auto* s = section("cluster")) {
        detail::SectionReader r(*s, origin);
        r.number("ridge", c.gmm.ridge);
        r.number("restarts", c.gmm.restarts);
        r.number("max_iters", c.gmm.max_iters);
        r.number("tolerance", c.gmm.tolerance);
        r.number("min_region", c.min_region);
        r.finish();
    }
    if (auto* s = section("fmd")) {
        detail::SectionReader r(*s, origin);
        r.number("n_edges", c.n_edges);
        r.finish();
    }
    if (auto* s = section("seeds")) {
        detail::SectionReader r(*s, origin);
        if (const auto* e = r.one("noise")) c.noise_seed = e->value == "none" ? std::nullopt : std::optional<std::uint64_t>(r.parse<std::uint64_t>(*e));
        r.number("nmf", c.nmf_seed);
        r.number("gmm", c.gmm_seed);
        r.finish();
    }
    if (auto* s = section("data")) {
        detail::SectionReader r(*s, origin);
        if (const auto* e = r.one("offset")) {
            if (e->value != "air" && e->value != "none") throw ConfigError(config_where(origin, e->line) + "offset must be air or none");
            c.offset_correction = e->value == "air";
        }
        if (const auto* e = r.one("input")) c.input = e->value;
        r.finish();
    }
    setup.dose.alpha = view_dose_alpha(c);
    validate_config(c);
    return c;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "config")
{
    std::istringstream is(text);
    return parse_config(is, origin);
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config " + path.string());
    return parse_config(is, path.string());
}

/// Canonical text form; parse_config(to_text(c)) == c.
inline std::string to_text(const RunConfig& c)
{
    const auto& s = c.setup;
    std::ostringstream o;
    const bool uniform = s.scan.view_angles == ScanParams::uniform_angles(s.scan.n_views);
    o << "[scan]\nn_rows = " << s.scan.n_rows << "\nn_cols = " << s.scan.n_cols << "\nn_views = " << s.scan.n_views
      << "\nn_subspace = " << s.scan.n_subspace << "\nmorph_window = " << s.scan.morph_window << "\nair_rows = " << s.air_rows
      << "\nview_angles = " << (uniform ? std::string("uniform") : detail::join_doubles(s.scan.view_angles, ", ")) << "\n";
    o << "\n[grid]\nlambda_min = " << format_double(s.grid.lambda_min) << "\nlambda_max = " << format_double(s.grid.lambda_max)
      << "\nn_bins = " << s.grid.n_bins << "\n";
    o << "\n[dose]\npeak = " << format_double(s.dose.peak) << "\nfalloff = " << format_double(s.dose.falloff)
      << "\nspectral_center = " << format_double(s.dose.spectral_center) << "\nspectral_width = " << format_double(s.dose.spectral_width)
      << "\nview_alpha = ";
    if (c.view_dose.empty()) o << "none";
    for (std::size_t i = 0; i < c.view_dose.size(); ++i) o << (i ? ", " : "") << c.view_dose[i].first << ":" << format_double(c.view_dose[i].second);
    o << "\n\n[layout]\nmaterials = ";
    for (std::size_t m = 0; m < s.layout.materials.size(); ++m) o << (m ? ", " : "") << s.layout.materials[m];
    o << "\n";
    for (const auto& y : s.layout.cylinders)
        o << "cylinder = " << s.layout.materials[y.material] << " " << format_double(y.cx) << " " << format_double(y.cy) << " "
          << format_double(y.radius) << " " << y.s0 << " " << y.s1 << "\n";
    for (const auto& b : s.layout.blocks)
        o << "block = " << s.layout.materials[b.material] << " " << b.box.r0 << " " << b.box.c0 << " " << b.box.s0 << " " << b.box.r1
          << " " << b.box.c1 << " " << b.box.s1 << "\n";
    for (const auto& ms : s.spectra) {
        o << "\n[spectrum " << ms.name << "]\na = " << format_double(ms.a) << "\nb = " << format_double(ms.b) << "\nedges = ";
        if (ms.edges.empty()) o << "none";
        for (std::size_t i = 0; i < ms.edges.size(); ++i)
            o << (i ? "; " : "") << format_double(ms.edges[i].lambda) << " " << format_double(ms.edges[i].jump) << " "
              << format_double(ms.edges[i].decay);
        o << "\n";
    }
    if (c.has_regions()) {
        o << "\n[regions]\n";
        if (c.truth_regions) o << "source = truth\n";
        for (const auto& [name, b] : c.regions)
            o << "material " << name << ": cuboid (" << b.r0 << "," << b.c0 << "," << b.s0 << ")-(" << b.r1 << "," << b.c1 << "," << b.s1 << ")\n";
    }
    o << "\n[nmf]\nmax_iters = " << c.nmf.max_iters << "\ntolerance = " << format_double(c.nmf.tolerance) << "\nrestarts = " << c.nmf.restarts
      << "\ninner_updates = " << c.nmf.inner_updates << "\nview_ridge = " << format_double(c.nmf.view_ridge) << "\n";
    const auto& m = c.mbir;
    o << "\n[mbir]\nmax_iters = " << m.max_iters << "\ntolerance = " << format_double(m.tolerance) << "\np = " << format_double(m.p_exp)
      << "\nthreshold = " << format_double(m.threshold) << "\nsigma_x = " << (m.sigma_x ? format_double(*m.sigma_x) : std::string("auto"))
      << "\nsigma_v = " << (m.sigma_v > 0.0 ? format_double(m.sigma_v) : std::string("auto")) << "\nsigma_v_floor = " << format_double(c.sigma_v_floor)
      << "\nprior = " << (m.prior_enabled ? "on" : "off") << "\nzero_skipping = " << (m.zero_skipping ? "on" : "off")
      << "\nneighbour_weights = " << format_double(m.weights.nearest) << " " << format_double(m.weights.diagonal) << " "
      << format_double(m.weights.cross_slice) << "\n";
    o << "\n[cluster]\nridge = " << format_double(c.gmm.ridge) << "\nrestarts = " << c.gmm.restarts << "\nmax_iters = " << c.gmm.max_iters
      << "\ntolerance = " << format_double(c.gmm.tolerance) << "\nmin_region = " << c.min_region << "\n";
    o << "\n[fmd]\nn_edges = " << c.n_edges << "\n";
    o << "\n[seeds]\nnoise = " << (c.noise_seed ? std::to_string(*c.noise_seed) : std::string("none")) << "\nnmf = " << c.nmf_seed
      << "\ngmm = " << c.gmm_seed << "\n";
    o << "\n[data]\noffset = " << (c.offset_correction ? "air" : "none") << "\n";
    if (!c.input.empty()) o << "input = " << c.input << "\n";
    return o.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view text)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string config_hash(const RunConfig& c)
{
    std::ostringstream o;
    o << std::hex;
    o.width(16);
    o.fill('0');
    o << fnv1a64(to_text(c));
    return o.str();
}

} // namespace hsnct
