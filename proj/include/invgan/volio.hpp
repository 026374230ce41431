#pragma once

// IVL1 / IVF1 binary volumes and fields, landmark CSV, intensity normalization.
//
// IVL1 layout (all little-endian):
//   0..3    "IVL1"
//   4..15   uint32 nx, ny, nz
//   16..27  float32 sx, sy, sz
//   28..    float32 voxels, x fastest
// IVF1 uses the same header with magic "IVF1"; payload is the ux grid, then
// uy, then uz.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "invgan/error.hpp"
#include "invgan/volume.hpp"

namespace invgan {

constexpr std::size_t kHeaderBytes = 28;

struct ReadOptions {
    // Reject NaN / Inf payload values.
    bool strict = false;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v)
{
    for (int b = 0; b < 4; ++b)
        out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xffu));
}

inline void put_f32(std::vector<unsigned char>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::vector<unsigned char> slurp(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw FormatError("short write to " + path.string());
}

inline void encode_header(std::vector<unsigned char>& out, const char* magic, Dims d, Spacing s)
{
    out.insert(out.end(), magic, magic + 4);
    put_u32(out, static_cast<std::uint32_t>(d.nx));
    put_u32(out, static_cast<std::uint32_t>(d.ny));
    put_u32(out, static_cast<std::uint32_t>(d.nz));
    put_f32(out, s.sx);
    put_f32(out, s.sy);
    put_f32(out, s.sz);
}

struct Header {
    Dims dims;
    Spacing spacing;
};

inline Header decode_header(const std::vector<unsigned char>& bytes, const char* magic, std::size_t channels)
{
    if (bytes.size() < 4)
        throw FormatError("file shorter than magic", static_cast<std::int64_t>(bytes.size()));
    if (std::memcmp(bytes.data(), magic, 4) != 0)
        throw FormatError(std::string("bad magic, expected ") + magic, 0);
    if (bytes.size() < kHeaderBytes)
        throw FormatError("truncated header", static_cast<std::int64_t>(bytes.size()));

    Header h;
    const std::uint32_t nx = get_u32(&bytes[4]), ny = get_u32(&bytes[8]), nz = get_u32(&bytes[12]);
    if (nx == 0 || ny == 0 || nz == 0 || nx > 0x7fffffffu || ny > 0x7fffffffu || nz > 0x7fffffffu)
        throw FormatError("invalid dims", 4);
    h.dims = {static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)};
    h.spacing = {get_f32(&bytes[16]), get_f32(&bytes[20]), get_f32(&bytes[24])};
    if (!(h.spacing.sx > 0) || !(h.spacing.sy > 0) || !(h.spacing.sz > 0))
        throw FormatError("spacing must be positive", 16);

    const std::uint64_t expected = static_cast<std::uint64_t>(h.dims.count()) * channels * 4u;
    const std::uint64_t payload = bytes.size() - kHeaderBytes;
    if (payload != expected)
        throw FormatError("payload is " + std::to_string(payload) + " bytes, dims need " + std::to_string(expected),
                          static_cast<std::int64_t>(kHeaderBytes + std::min(payload, expected)));
    return h;
}

inline void decode_payload(const std::vector<unsigned char>& bytes, std::size_t first, std::vector<float>& out,
                           bool strict)
{
    for (std::size_t n = 0; n < out.size(); ++n) {
        const std::size_t at = kHeaderBytes + 4 * (first + n);
        out[n] = get_f32(&bytes[at]);
        if (strict && !std::isfinite(out[n]))
            throw FormatError("non-finite value", static_cast<std::int64_t>(at));
    }
}

inline std::string_view trim(std::string_view s)
{
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos)
        return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::optional<double> parse_double(std::string_view s)
{
    s = trim(s);
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        return std::nullopt;
    return v;
}

} // namespace detail

inline std::vector<unsigned char> encode_volume(const Volume& v)
{
    std::vector<unsigned char> out;
    out.reserve(kHeaderBytes + 4 * v.voxels.size());
    detail::encode_header(out, "IVL1", v.dims, v.spacing);
    for (float x : v.voxels)
        detail::put_f32(out, x);
    return out;
}

inline Volume decode_volume(const std::vector<unsigned char>& bytes, ReadOptions opt = {})
{
    const auto h = detail::decode_header(bytes, "IVL1", 1);
    Volume v(h.dims, h.spacing);
    detail::decode_payload(bytes, 0, v.voxels, opt.strict);
    return v;
}

inline void write_volume(const Volume& v, const std::filesystem::path& path) { detail::spit(path, encode_volume(v)); }

inline Volume read_volume(const std::filesystem::path& path, ReadOptions opt = {})
{
    return decode_volume(detail::slurp(path), opt);
}

inline std::vector<unsigned char> encode_field(const DisplacementField& f)
{
    std::vector<unsigned char> out;
    out.reserve(kHeaderBytes + 12 * f.dims.count());
    detail::encode_header(out, "IVF1", f.dims, f.spacing);
    for (const auto& c : f.u)
        for (float x : c)
            detail::put_f32(out, x);
    return out;
}

inline DisplacementField decode_field(const std::vector<unsigned char>& bytes, ReadOptions opt = {})
{
    const auto h = detail::decode_header(bytes, "IVF1", 3);
    DisplacementField f(h.dims, h.spacing);
    for (std::size_t c = 0; c < 3; ++c)
        detail::decode_payload(bytes, c * h.dims.count(), f.u[c], opt.strict);
    return f;
}

inline void write_field(const DisplacementField& f, const std::filesystem::path& path)
{
    detail::spit(path, encode_field(f));
}

inline DisplacementField read_field(const std::filesystem::path& path, ReadOptions opt = {})
{
    return decode_field(detail::slurp(path), opt);
}

/// Parses `name,x,y,z` lines. Blank lines and lines starting with '#' are
/// skipped. When `bounds` is given, every coordinate must lie in
/// [0, n-1] on its axis.
inline LandmarkSet parse_landmarks(std::string_view text, std::optional<Dims> bounds = std::nullopt)
{
    LandmarkSet set;
    std::set<std::string, std::less<>> seen;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto eol = text.find('\n', pos);
        const auto raw = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;

        const auto line = detail::trim(raw);
        if (line.empty() || line.front() == '#')
            continue;

        std::vector<std::string_view> cols;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            cols.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (comma == std::string_view::npos)
                break;
            start = comma + 1;
        }
        if (cols.size() != 4)
            throw ParseError("expected 4 columns name,x,y,z, got " + std::to_string(cols.size()), line_no);

        Landmark lm;
        lm.name = std::string(detail::trim(cols[0]));
        if (lm.name.empty())
            throw ParseError("empty landmark name", line_no);
        double* coords[3] = {&lm.x, &lm.y, &lm.z};
        for (int a = 0; a < 3; ++a) {
            auto v = detail::parse_double(cols[a + 1]);
            if (!v || !std::isfinite(*v))
                throw ParseError("non-numeric coordinate '" + std::string(detail::trim(cols[a + 1])) + "'", line_no);
            *coords[a] = *v;
        }
        if (bounds) {
            for (int a = 0; a < 3; ++a)
                if (*coords[a] < 0 || *coords[a] > (*bounds)[a] - 1)
                    throw ParseError("landmark '" + lm.name + "' outside volume " + bounds->str(), line_no);
        }
        if (!seen.insert(lm.name).second)
            throw ParseError("duplicate landmark name '" + lm.name + "'", line_no);
        set.points.push_back(std::move(lm));
    }
    return set;
}

inline LandmarkSet read_landmarks(const std::filesystem::path& path, std::optional<Dims> bounds = std::nullopt,
                                  Spacing spacing = {})
{
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    auto set = parse_landmarks(ss.str(), bounds);
    set.spacing = spacing;
    return set;
}

inline std::string format_landmarks(const LandmarkSet& set)
{
    std::ostringstream out;
    out.precision(17);
    out << "# name,x,y,z (voxels)\n";
    for (const auto& p : set.points)
        out << p.name << ',' << p.x << ',' << p.y << ',' << p.z << '\n';
    return out.str();
}

inline void write_landmarks(const LandmarkSet& set, const std::filesystem::path& path)
{
    const auto text = format_landmarks(set);
    detail::spit(path, std::vector<unsigned char>(text.begin(), text.end()));
}

/// (v - min) / (max - min) voxelwise; a constant volume maps to all zeros.
inline Volume normalize_intensity(const Volume& in)
{
    Volume out = in;
    if (in.voxels.empty())
        return out;
    const auto [lo, hi] = std::minmax_element(in.voxels.begin(), in.voxels.end());
    const double mn = *lo, mx = *hi;
    if (!(mx > mn)) {
        std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
        return out;
    }
    const double range = mx - mn;
    for (auto& v : out.voxels)
        v = static_cast<float>(std::clamp((static_cast<double>(v) - mn) / range, 0.0, 1.0));
    return out;
}

} // namespace invgan
