#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hsnct/core.hpp"
#include "hsnct/errors.hpp"
#include "hsnct/tensor.hpp"
#include "hsnct/tensor_io.hpp"

namespace hsnct {

struct ExportedImage {
    std::filesystem::path image, sidecar;
    double lo = 0.0, hi = 0.0;
};

/// 16-bit binary PGM (P5, big-endian samples), values mapped linearly from
/// [lo, hi] to [0, 65535]. A constant image maps to 0.
inline void write_pgm16(const std::filesystem::path& path, const std::vector<double>& pixels, std::size_t width, std::size_t height,
                        double lo, double hi)
{
    if (pixels.size() != width * height) throw ShapeError("pgm: pixel count does not match the image size");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << "P5\n" << width << " " << height << "\n65535\n";
    const double span = hi - lo;
    for (double v : pixels) {
        const double t = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
        const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
        const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
        os.write(bytes, 2);
    }
    if (!os) throw DataError("failed writing " + path.string());
}

/// Writes slice `slice` of the requested channels of a channel-last volume
/// (N_r, N_c, N_c, C), or of a slab (N_c, N_c, C) when slice is 0, as
/// `<stem>_s<slice>_c<channel>.pgm` with a `.txt` sidecar holding min and max.
inline std::vector<ExportedImage> export_slices(const Tensor& volume, std::size_t slice, const std::vector<std::size_t>& channels,
                                                const std::filesystem::path& dir, const std::string& stem)
{
    Tensor vol = volume;
    if (vol.rank() == 3) vol = Tensor({1, volume.dim(0), volume.dim(1), volume.dim(2)}, std::vector<double>(volume.values().begin(), volume.values().end()));
    if (vol.rank() != 4) throw ShapeError("export: volume must be (rows, cols, cols, channels) or a slab (cols, cols, channels)");
    const std::size_t nr = vol.dim(0), h = vol.dim(1), w = vol.dim(2), nch = vol.dim(3);
    if (slice >= nr) throw ConfigError("export: slice " + std::to_string(slice) + " out of range (" + std::to_string(nr) + " slices)");
    std::filesystem::create_directories(dir);
    std::vector<ExportedImage> out;
    for (std::size_t c : channels) {
        if (c >= nch) throw ConfigError("export: channel " + std::to_string(c) + " out of range (" + std::to_string(nch) + " channels)");
        std::vector<double> px(h * w);
        for (std::size_t i = 0; i < h * w; ++i) px[i] = vol[(slice * h * w + i) * nch + c];
        const auto [mn, mx] = std::minmax_element(px.begin(), px.end());
        ExportedImage img;
        img.lo = *mn;
        img.hi = *mx;
        const std::string base = stem + "_s" + std::to_string(slice) + "_c" + std::to_string(c);
        img.image = dir / (base + ".pgm");
        img.sidecar = dir / (base + ".txt");
        write_pgm16(img.image, px, w, h, img.lo, img.hi);
        std::ofstream side(img.sidecar, std::ios::trunc);
        if (!side) throw DataError("cannot open " + img.sidecar.string() + " for writing");
        side << "slice = " << slice << "\nchannel = " << c << "\nmin = " << format_double(img.lo) << "\nmax = " << format_double(img.hi)
             << "\n";
        out.push_back(img);
    }
    return out;
}

/// CSV with a wavelength column followed by one column per spectrum.
inline void write_spectra_csv(const std::filesystem::path& path, const WavelengthGrid& grid, const Tensor& spectra,
                              const std::vector<std::string>& names)
{
    if (spectra.rank() != 2 || spectra.dim(0) != grid.n_bins) throw ShapeError("spectra csv: spectra must be (N_k, columns)");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << "wavelength";
    for (std::size_t m = 0; m < spectra.dim(1); ++m) os << "," << (m < names.size() ? names[m] : "c" + std::to_string(m));
    os << "\n";
    for (std::size_t k = 0; k < grid.n_bins; ++k) {
        os << format_double(grid.center(k));
        for (std::size_t m = 0; m < spectra.dim(1); ++m) os << "," << format_double(spectra(k, m));
        os << "\n";
    }
}

} // namespace hsnct
