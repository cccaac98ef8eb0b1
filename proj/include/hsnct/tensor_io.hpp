#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hsnct/core.hpp"
#include "hsnct/errors.hpp"
#include "hsnct/tensor.hpp"

// HST1 layout, all little-endian:
//   8 bytes  magic "HSTENS1\0"
//   u32      ndim
//   u64[n]   dims
//   u8       dtype (0 = f32, 1 = f64)
//   payload  row-major values

namespace hsnct {

static_assert(std::endian::native == std::endian::little, "HST1 I/O assumes a little-endian host");

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

inline constexpr char hst1_magic[8] = {'H', 'S', 'T', 'E', 'N', 'S', '1', '\0'};

inline std::vector<std::uint8_t> encode_tensor(const Tensor& t, Dtype dtype = Dtype::f64)
{
    if (t.rank() == 0) throw ShapeError("cannot serialise a tensor without dimensions");
    Tensor::checked_size(t.dims());

    std::vector<std::uint8_t> out;
    const std::size_t elem = dtype == Dtype::f64 ? 8 : 4;
    out.reserve(8 + 4 + 8 * t.rank() + 1 + elem * t.size());
    auto put = [&out](const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    };
    put(hst1_magic, 8);
    const auto ndim = static_cast<std::uint32_t>(t.rank());
    put(&ndim, 4);
    for (auto d : t.dims()) {
        const auto d64 = static_cast<std::uint64_t>(d);
        put(&d64, 8);
    }
    const auto code = static_cast<std::uint8_t>(dtype);
    put(&code, 1);
    if (dtype == Dtype::f64) {
        put(t.data(), 8 * t.size());
    } else {
        for (double v : t.values()) {
            const auto f = static_cast<float>(v);
            put(&f, 4);
        }
    }
    return out;
}

inline Tensor decode_tensor(const std::uint8_t* bytes, std::size_t n)
{
    std::size_t pos = 0;
    auto need = [&](std::size_t k, const char* what) {
        if (n - pos < k) throw FormatError(std::string("truncated HST1 data while reading ") + what, pos);
    };
    need(8, "magic");
    if (std::memcmp(bytes, hst1_magic, 8) != 0) {
        std::size_t bad = 0;
        while (bytes[bad] == static_cast<std::uint8_t>(hst1_magic[bad])) ++bad;
        throw FormatError("bad HST1 magic", bad);
    }
    pos = 8;
    need(4, "rank");
    std::uint32_t ndim = 0;
    std::memcpy(&ndim, bytes + pos, 4);
    if (ndim == 0 || ndim > 16) throw FormatError("invalid HST1 rank " + std::to_string(ndim), pos);
    pos += 4;
    Dims dims(ndim);
    std::size_t count = 1;
    for (auto& d : dims) {
        need(8, "dimensions");
        std::uint64_t d64 = 0;
        std::memcpy(&d64, bytes + pos, 8);
        if (d64 == 0 || d64 > (std::uint64_t{1} << 40)) throw FormatError("invalid HST1 extent " + std::to_string(d64), pos);
        d = static_cast<std::size_t>(d64);
        if (count > (std::size_t{1} << 40) / d) throw FormatError("HST1 tensor too large", pos);
        count *= d;
        pos += 8;
    }
    need(1, "dtype");
    const std::uint8_t code = bytes[pos];
    if (code > 1) throw FormatError("unknown HST1 dtype code " + std::to_string(code), pos);
    ++pos;
    const std::size_t elem = code == 1 ? 8 : 4;
    need(elem * count, "payload");
    if (n - pos != elem * count) throw FormatError("trailing bytes after HST1 payload", pos + elem * count);

    std::vector<double> values(count);
    if (code == 1) {
        std::memcpy(values.data(), bytes + pos, 8 * count);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            float f = 0;
            std::memcpy(&f, bytes + pos + 4 * i, 4);
            values[i] = f;
        }
    }
    return Tensor(std::move(dims), std::move(values));
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t, Dtype dtype = Dtype::f64)
{
    const auto bytes = encode_tensor(t, dtype);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("failed writing " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return decode_tensor(bytes.data(), bytes.size());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

/// Sidecar text manifest: `key = value` lines.
struct Manifest {
    ScanParams scan;
    WavelengthGrid grid;
    std::map<std::string, std::string> extra;
};

inline std::string format_double(double v)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << "n_rows = " << m.scan.n_rows << "\n"
       << "n_cols = " << m.scan.n_cols << "\n"
       << "n_wavelengths = " << m.scan.n_wavelengths << "\n"
       << "n_views = " << m.scan.n_views << "\n"
       << "n_materials = " << m.scan.n_materials << "\n"
       << "n_subspace = " << m.scan.n_subspace << "\n"
       << "morph_window = " << m.scan.morph_window << "\n"
       << "view_angles = ";
    for (std::size_t v = 0; v < m.scan.view_angles.size(); ++v)
        os << (v ? "," : "") << format_double(m.scan.view_angles[v]);
    os << "\n"
       << "lambda_min = " << format_double(m.grid.lambda_min) << "\n"
       << "lambda_max = " << format_double(m.grid.lambda_max) << "\n"
       << "n_bins = " << m.grid.n_bins << "\n";
    for (const auto& [k, v] : m.extra) os << k << " = " << v << "\n";
}

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline Manifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    auto to_size = [&](const std::string& v) {
        try {
            return static_cast<std::size_t>(std::stoull(v));
        } catch (...) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected an integer");
        }
    };
    auto to_double = [&](const std::string& v) {
        try {
            return std::stod(v);
        } catch (...) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected a number");
        }
    };
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing '='");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key == "n_rows") m.scan.n_rows = to_size(value);
        else if (key == "n_cols") m.scan.n_cols = to_size(value);
        else if (key == "n_wavelengths") m.scan.n_wavelengths = to_size(value);
        else if (key == "n_views") m.scan.n_views = to_size(value);
        else if (key == "n_materials") m.scan.n_materials = to_size(value);
        else if (key == "n_subspace") m.scan.n_subspace = to_size(value);
        else if (key == "morph_window") m.scan.morph_window = to_size(value);
        else if (key == "lambda_min") m.grid.lambda_min = to_double(value);
        else if (key == "lambda_max") m.grid.lambda_max = to_double(value);
        else if (key == "n_bins") m.grid.n_bins = to_size(value);
        else if (key == "view_angles") {
            m.scan.view_angles.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!trim(item).empty()) m.scan.view_angles.push_back(to_double(trim(item)));
        } else {
            m.extra[key] = value;
        }
    }
    return m;
}

} // namespace hsnct
