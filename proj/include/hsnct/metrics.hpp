#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hsnct/errors.hpp"
#include "hsnct/tensor.hpp"
#include "hsnct/tensor_io.hpp"

namespace hsnct {

inline constexpr double snr_cap_db = 120.0;

/// Signal and background voxel masks over a (N_r, N_c, N_c) grid.
struct MaskPair {
    std::vector<std::uint8_t> signal;
    std::vector<std::uint8_t> background;

    void validate(std::size_t n_voxels) const
    {
        if (signal.size() != n_voxels || background.size() != n_voxels) throw ShapeError("masks do not match the volume");
        std::size_t ns = 0, nb = 0;
        for (std::size_t v = 0; v < n_voxels; ++v) {
            if (signal[v] && background[v]) throw DataError("signal and background masks overlap");
            ns += signal[v] != 0;
            nb += background[v] != 0;
        }
        if (!ns || !nb) throw DomainError("signal and background masks must be non-empty");
    }
};

/// Dilation by a (2 radius + 1)^3 cube, clipped at the volume boundary.
inline std::vector<std::uint8_t> dilate_volume(const std::vector<std::uint8_t>& mask, std::size_t nr, std::size_t nc,
                                               std::size_t radius)
{
    // Separable: the cube is a product of three 1-D windows.
    std::vector<std::uint8_t> cur = mask, next(mask.size());
    const auto r = static_cast<std::ptrdiff_t>(radius);
    const std::ptrdiff_t ext[3] = {static_cast<std::ptrdiff_t>(nr), static_cast<std::ptrdiff_t>(nc), static_cast<std::ptrdiff_t>(nc)};
    const std::ptrdiff_t stride[3] = {ext[1] * ext[2], ext[2], 1};
    for (int axis = 0; axis < 3; ++axis) {
        for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(mask.size()); ++v) {
            const std::ptrdiff_t pos = (v / stride[axis]) % ext[axis];
            std::uint8_t hit = 0;
            for (std::ptrdiff_t d = -r; d <= r && !hit; ++d)
                if (pos + d >= 0 && pos + d < ext[axis]) hit = cur[static_cast<std::size_t>(v + d * stride[axis])];
            next[static_cast<std::size_t>(v)] = hit;
        }
        std::swap(cur, next);
    }
    return cur;
}

/// Signal: support dilated by `signal_dilation`. Background: voxels inside
/// the field of view (in-plane mask) outside the `background_dilation` dilation.
inline MaskPair support_masks(const std::vector<std::uint8_t>& support, std::size_t nr, std::size_t nc,
                              const std::vector<std::uint8_t>& fov, std::size_t signal_dilation = 2,
                              std::size_t background_dilation = 6)
{
    if (support.size() != nr * nc * nc || fov.size() != nc * nc) throw ShapeError("support masks: shape mismatch");
    MaskPair m;
    m.signal = dilate_volume(support, nr, nc, signal_dilation);
    const auto wide = dilate_volume(support, nr, nc, background_dilation);
    m.background.assign(support.size(), 0);
    for (std::size_t v = 0; v < support.size(); ++v) m.background[v] = !wide[v] && fov[v % (nc * nc)];
    for (std::size_t v = 0; v < support.size(); ++v) m.signal[v] = m.signal[v] && fov[v % (nc * nc)];
    return m;
}

/// Masks for one material of a labelled phantom (-1 background): signal is
/// that material dilated by `signal_dilation` minus other materials, background
/// is as in support_masks for the whole sample.
inline MaskPair material_masks(const std::vector<int>& labels, int material, std::size_t nr, std::size_t nc,
                               const std::vector<std::uint8_t>& fov, std::size_t signal_dilation = 2,
                               std::size_t background_dilation = 6)
{
    std::vector<std::uint8_t> support(labels.size()), own(labels.size());
    for (std::size_t v = 0; v < labels.size(); ++v) {
        support[v] = labels[v] >= 0;
        own[v] = labels[v] == material;
    }
    MaskPair m = support_masks(support, nr, nc, fov, signal_dilation, background_dilation);
    const auto grown = dilate_volume(own, nr, nc, signal_dilation);
    for (std::size_t v = 0; v < labels.size(); ++v)
        m.signal[v] = grown[v] && fov[v % (nc * nc)] && (labels[v] < 0 || labels[v] == material);
    return m;
}

struct SnrResult {
    double db = 0.0;                 // mean over included bins
    std::vector<double> per_bin;     // NaN where excluded
    std::size_t excluded_bins = 0;   // zero background deviation
};

/// Per channel: 20 log10(|mean over signal| / std over background), then
/// averaged in dB over channels. Volume is (..., N_k) channel-last.
inline SnrResult snr_recon(const Tensor& volume, const MaskPair& masks)
{
    const std::size_t nk = volume.dims().back(), nvox = volume.size() / nk;
    masks.validate(nvox);
    std::vector<double> s_sum(nk, 0.0), b_sum(nk, 0.0), b_sum2(nk, 0.0);
    std::size_t ns = 0, nb = 0;
    for (std::size_t v = 0; v < nvox; ++v) {
        const double* row = volume.data() + v * nk;
        if (masks.signal[v]) {
            ++ns;
            for (std::size_t k = 0; k < nk; ++k) s_sum[k] += row[k];
        } else if (masks.background[v]) {
            ++nb;
            for (std::size_t k = 0; k < nk; ++k) b_sum[k] += row[k];
        }
    }
    for (std::size_t v = 0; v < nvox; ++v)
        if (masks.background[v]) {
            const double* row = volume.data() + v * nk;
            for (std::size_t k = 0; k < nk; ++k) {
                const double d = row[k] - b_sum[k] / static_cast<double>(nb);
                b_sum2[k] += d * d;
            }
        }
    SnrResult out;
    out.per_bin.assign(nk, std::numeric_limits<double>::quiet_NaN());
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < nk; ++k) {
        const double sd = std::sqrt(b_sum2[k] / static_cast<double>(nb));
        const double mean = std::abs(s_sum[k] / static_cast<double>(ns));
        if (!(sd > 0.0)) {
            ++out.excluded_bins;
            continue;
        }
        const double db = mean > 0.0 ? std::min(snr_cap_db, 20.0 * std::log10(mean / sd)) : -snr_cap_db;
        out.per_bin[k] = db;
        total += db;
        ++used;
    }
    out.db = used ? total / static_cast<double>(used) : snr_cap_db;
    return out;
}

/// Material-reconstruction SNR: snr_recon of column perm[m] of x_m
/// (N_r, N_c, N_c, N_m) against material_masks(m), per true material.
inline std::vector<double> snr_materials(const Tensor& x_m, const std::vector<int>& labels, const std::vector<std::size_t>& perm,
                                         const std::vector<std::uint8_t>& fov)
{
    if (x_m.rank() != 4 || labels.size() != x_m.size() / x_m.dim(3)) throw ShapeError("snr_materials: shape mismatch");
    const std::size_t nr = x_m.dim(0), nc = x_m.dim(1), nm = x_m.dim(3), nvox = labels.size();
    if (perm.size() != nm) throw ShapeError("snr_materials: permutation length");
    std::vector<double> out;
    for (std::size_t m = 0; m < nm; ++m) {
        Tensor ch({nr, nc, nc, 1});
        for (std::size_t v = 0; v < nvox; ++v) ch[v] = x_m[v * nm + perm[m]];
        out.push_back(snr_recon(ch, material_masks(labels, static_cast<int>(m), nr, nc, fov)).db);
    }
    return out;
}

/// Moving median with a window of w bins, truncated at the ends.
inline std::vector<double> moving_median(const std::vector<double>& x, std::size_t w)
{
    std::vector<double> out(x.size());
    const std::size_t h = w / 2;
    std::vector<double> buf;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t lo = i >= h ? i - h : 0, hi = std::min(x.size(), i + (w - h));
        buf.assign(x.begin() + static_cast<std::ptrdiff_t>(lo), x.begin() + static_cast<std::ptrdiff_t>(hi));
        const auto mid = buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2);
        std::nth_element(buf.begin(), mid, buf.end());
        double m = *mid;
        if (buf.size() % 2 == 0) m = 0.5 * (m + *std::max_element(buf.begin(), mid));
        out[i] = m;
    }
    return out;
}

inline double median_of(std::vector<double> v)
{
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
    return m;
}

/// Bins k where the step s[k] - s[k-1] stands out from the typical step by
/// more than `threshold` robust deviations (edge candidates).
inline std::vector<std::size_t> detect_jumps(const std::vector<double>& s, double threshold = 5.0)
{
    std::vector<std::size_t> out;
    if (s.size() < 3) return out;
    std::vector<double> d(s.size() - 1);
    for (std::size_t k = 1; k < s.size(); ++k) d[k - 1] = s[k] - s[k - 1];
    const double med = median_of(d);
    std::vector<double> dev(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) dev[i] = std::abs(d[i] - med);
    const double mad = 1.4826 * median_of(dev);
    double scale = 0.0;
    for (double v : s) scale = std::max(scale, std::abs(v));
    const double floor = 1e-9 * scale;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (std::abs(d[i] - med) > threshold * mad + floor) out.push_back(i + 1);
    return out;
}

struct SpectrumSnr {
    double db = 0.0;
    std::size_t guarded_bins = 0;
};

/// 20 log10(mean / std of residual against a moving median), ignoring bins
/// within `guard` of a detected jump. Capped at snr_cap_db.
inline SpectrumSnr snr_spectrum(const std::vector<double>& s, std::size_t window = 9, std::size_t guard = 2)
{
    if (window < 3 || s.size() <= window) throw ConfigError("snr_spectra: window must be >= 3 and smaller than N_k");
    const auto smooth = moving_median(s, window);
    std::vector<std::uint8_t> skip(s.size(), 0);
    for (std::size_t k : detect_jumps(s))
        for (std::size_t j = (k > guard ? k - guard : 0); j <= std::min(s.size() - 1, k + guard - 1); ++j) skip[j] = 1;
    double sum = 0.0, rsum = 0.0, rsum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        sum += s[k];
        if (skip[k]) continue;
        const double r = s[k] - smooth[k];
        rsum += r;
        rsum2 += r * r;
        ++n;
    }
    SpectrumSnr out;
    out.guarded_bins = s.size() - n;
    const double mean = std::abs(sum / static_cast<double>(s.size()));
    if (n < 2) {
        out.db = snr_cap_db;
        return out;
    }
    const double rm = rsum / static_cast<double>(n);
    const double sd = std::sqrt(std::max(0.0, rsum2 / static_cast<double>(n) - rm * rm));
    out.db = sd > 0.0 ? std::min(snr_cap_db, 20.0 * std::log10(mean / sd)) : snr_cap_db;
    if (mean == 0.0) out.db = -snr_cap_db;
    return out;
}

/// Per-material spectrum SNR for D_m (N_k, N_m).
inline std::vector<double> snr_spectra(const Tensor& D_m, std::size_t window = 9, std::size_t guard = 2)
{
    if (D_m.rank() != 2) throw ShapeError("snr_spectra: spectra must be (N_k, N_m)");
    std::vector<double> out;
    for (std::size_t m = 0; m < D_m.dim(1); ++m) {
        std::vector<double> s(D_m.dim(0));
        for (std::size_t k = 0; k < s.size(); ++k) s[k] = D_m(k, m);
        out.push_back(snr_spectrum(s, window, guard).db);
    }
    return out;
}

/// ||a - b|| / ||b||.
inline double nrmse(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw ShapeError("nrmse: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    if (den == 0.0) throw DomainError("nrmse: reference has zero norm");
    return std::sqrt(num / den);
}

inline double nrmse(const Tensor& a, const Tensor& b)
{
    if (a.dims() != b.dims()) throw ShapeError("nrmse: shapes " + shape_string(a.dims()) + " and " + shape_string(b.dims()));
    return nrmse(std::span<const double>(a.values()), std::span<const double>(b.values()));
}

/// Column m of a (N_k, N_m) matrix.
inline std::vector<double> column(const Tensor& t, std::size_t m)
{
    std::vector<double> c(t.dim(0));
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = t(k, m);
    return c;
}

/// Material voxels whose 3 x 3 in-plane neighbourhood shares their label.
inline std::vector<std::uint8_t> interior_mask(const std::vector<int>& labels, std::size_t nr, std::size_t nc)
{
    std::vector<std::uint8_t> out(labels.size(), 0);
    for (std::size_t s = 0; s < nr; ++s)
        for (std::size_t i = 0; i < nc; ++i)
            for (std::size_t j = 0; j < nc; ++j) {
                const std::size_t v = (s * nc + i) * nc + j;
                if (labels[v] < 0) continue;
                bool ok = i > 0 && j > 0 && i + 1 < nc && j + 1 < nc;
                for (int di = -1; di <= 1 && ok; ++di)
                    for (int dj = -1; dj <= 1 && ok; ++dj)
                        ok = labels[(s * nc + i + static_cast<std::size_t>(di + 1) - 1) * nc + j + static_cast<std::size_t>(dj + 1) - 1] == labels[v];
                out[v] = ok;
            }
    return out;
}

/// Fraction of voxels in `where` whose argmax column of x_m (N_x, N_m)
/// equals perm[truth]. perm maps true material -> estimated column.
inline double label_accuracy(const Tensor& x_m, const std::vector<int>& truth, const std::vector<std::uint8_t>& where,
                             const std::vector<std::size_t>& perm = {})
{
    const std::size_t nm = x_m.dims().back(), nvox = x_m.size() / nm;
    if (truth.size() != nvox || where.size() != nvox) throw ShapeError("label_accuracy: shape mismatch");
    std::size_t good = 0, total = 0;
    for (std::size_t v = 0; v < nvox; ++v) {
        if (!where[v] || truth[v] < 0) continue;
        ++total;
        const double* row = x_m.data() + v * nm;
        const auto best = static_cast<std::size_t>(std::max_element(row, row + nm) - row);
        const auto t = static_cast<std::size_t>(truth[v]);
        good += best == (perm.empty() ? t : perm.at(t));
    }
    if (!total) throw DomainError("label_accuracy: no voxels to score");
    return static_cast<double>(good) / static_cast<double>(total);
}

/// Assignment true material -> estimated index maximising total score,
/// by exhaustive search (N_m is small). score(t, e) is larger-is-better.
template <class Score>
std::vector<std::size_t> best_permutation(std::size_t n, Score score)
{
    std::vector<std::size_t> perm(n), best;
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best_total = -std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t t = 0; t < n; ++t) total += score(t, perm[t]);
        if (total > best_total) {
            best_total = total;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

/// Flat report rows (section, key, value) with CSV and aligned-table output.
class RunReport {
public:
    struct Row {
        std::string section, key, value;
    };

    void add(const std::string& section, const std::string& key, const std::string& value) { rows_.push_back({section, key, value}); }
    void add(const std::string& section, const std::string& key, double value) { add(section, key, format_double(value)); }
    void add_count(const std::string& section, const std::string& key, std::size_t value) { add(section, key, std::to_string(value)); }

    const std::vector<Row>& rows() const { return rows_; }

    std::string csv() const
    {
        std::ostringstream out;
        out << "section,key,value\n";
        for (const auto& r : rows_) out << quote(r.section) << ',' << quote(r.key) << ',' << quote(r.value) << '\n';
        return out.str();
    }

    std::string table() const
    {
        std::size_t w0 = 7, w1 = 3;
        for (const auto& r : rows_) {
            w0 = std::max(w0, r.section.size());
            w1 = std::max(w1, r.key.size());
        }
        std::ostringstream out;
        auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
        out << pad("section", w0) << "  " << pad("key", w1) << "  value\n";
        out << std::string(w0, '-') << "  " << std::string(w1, '-') << "  -----\n";
        for (const auto& r : rows_) out << pad(r.section, w0) << "  " << pad(r.key, w1) << "  " << r.value << '\n';
        return out.str();
    }

private:
    static std::string quote(const std::string& s)
    {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    }

    std::vector<Row> rows_;
};

} // namespace hsnct
