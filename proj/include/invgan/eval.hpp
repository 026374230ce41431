#pragma once

// Registration quality metrics and renders.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "invgan/volume.hpp"
#include "invgan/warp.hpp"

namespace invgan {

/// Pearson correlation over all voxels; 0 when either input is constant.
inline double global_cc(const Volume& a, const Volume& b)
{
    require_same_dims(a.dims, b.dims, "global_cc");
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a.voxels[i];
        mb += b.voxels[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a.voxels[i] - ma, db = b.voxels[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0 || sbb <= 0)
        return 0.0;
    return sab / std::sqrt(saa * sbb);
}

namespace detail {

inline int bin_of(float v, int bins)
{
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return std::min(static_cast<int>(c * bins), bins - 1);
}

} // namespace detail

/// Shannon entropy (nats) of the intensity histogram with `bins` uniform
/// bins on [0, 1].
inline double entropy(const Volume& v, int bins = 32)
{
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (float x : v.voxels)
        h[detail::bin_of(x, bins)] += 1.0;
    const double n = static_cast<double>(v.size());
    double e = 0;
    for (double c : h)
        if (c > 0)
            e -= (c / n) * std::log(c / n);
    return e;
}

/// Mutual information (nats) of the joint histogram, uniform bins on [0, 1].
inline double mutual_information(const Volume& a, const Volume& b, int bins = 32)
{
    require_same_dims(a.dims, b.dims, "mutual_information");
    const auto B = static_cast<std::size_t>(bins);
    std::vector<double> joint(B * B, 0.0), pa(B, 0.0), pb(B, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const int x = detail::bin_of(a.voxels[i], bins), y = detail::bin_of(b.voxels[i], bins);
        joint[x * B + y] += 1.0;
        pa[x] += 1.0;
        pb[y] += 1.0;
    }
    const double n = static_cast<double>(a.size());
    double mi = 0;
    for (std::size_t x = 0; x < B; ++x)
        for (std::size_t y = 0; y < B; ++y) {
            const double c = joint[x * B + y];
            if (c > 0)
                mi += (c / n) * std::log(c * n / (pa[x] * pb[y]));
        }
    return std::max(mi, 0.0);
}

struct LandmarkReport {
    std::vector<std::string> names;
    std::vector<double> distances_mm;
    std::vector<bool> outside;
    double mean = 0;
    double std = 0; // population standard deviation
};

struct MetricReport {
    double cc_before = 0;
    double cc_after = 0;
    double mi_before = 0;
    double mi_after = 0;
    LandmarkReport landmarks;
};

inline void summarize(LandmarkReport& r)
{
    const double n = static_cast<double>(r.distances_mm.size());
    if (n == 0)
        return;
    double s = 0;
    for (double d : r.distances_mm)
        s += d;
    r.mean = s / n;
    double v = 0;
    for (double d : r.distances_mm)
        v += (d - r.mean) * (d - r.mean);
    r.std = std::sqrt(v / n);
}

/// Transports `moving` by `field` (p + u(p)) and measures the Euclidean
/// distance to `fixed` in millimetres.
inline LandmarkReport landmark_report(const LandmarkSet& fixed, const LandmarkSet& moving,
                                      const DisplacementField& field, Spacing spacing,
                                      LandmarkSampling mode = LandmarkSampling::trilinear)
{
    if (fixed.size() != moving.size())
        throw DataError("landmark_report: " + std::to_string(fixed.size()) + " fixed vs " +
                        std::to_string(moving.size()) + " moving landmarks");
    const auto moved = warp_landmarks(moving, field, mode);
    LandmarkReport r;
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        const auto& f = fixed.points[i];
        const auto& m = moved.points[i];
        const double dx = (m.x - f.x) * spacing.sx, dy = (m.y - f.y) * spacing.sy, dz = (m.z - f.z) * spacing.sz;
        r.names.push_back(f.name);
        r.distances_mm.push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
        r.outside.push_back(m.outside);
    }
    summarize(r);
    return r;
}

struct Volume8 {
    Dims dims;
    std::vector<std::uint8_t> voxels;
};

/// Triangular transfer of d = a - b: round(255 * (1 - |d|)). Aligned regions
/// are white, disagreement dark.
inline Volume8 difference_image(const Volume& a, const Volume& b)
{
    require_same_dims(a.dims, b.dims, "difference_image");
    Volume8 out{a.dims, std::vector<std::uint8_t>(a.size())};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::clamp(static_cast<double>(a.voxels[i]) - static_cast<double>(b.voxels[i]), -1.0, 1.0);
        out.voxels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(d))));
    }
    return out;
}

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb; // row-major, 3 bytes per pixel

    std::array<std::uint8_t, 3> pixel(int x, int y) const
    {
        const auto at = 3 * (static_cast<std::size_t>(y) * width + x);
        return {rgb[at], rgb[at + 1], rgb[at + 2]};
    }
};

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

namespace detail {

/// Image axes for a slice normal to `axis`: z-slices are x by y, y-slices
/// x by z, x-slices y by z.
inline void slice_layout(const Dims& d, int axis, int index, int& w, int& h)
{
    if (axis < 0 || axis > 2)
        throw DataError("slice axis must be 0, 1 or 2");
    if (index < 0 || index >= d[axis])
        throw DataError("slice index " + std::to_string(index) + " outside [0, " + std::to_string(d[axis]) + ")");
    w = axis == 0 ? d.ny : d.nx;
    h = axis == 2 ? d.ny : d.nz;
}

inline std::size_t slice_voxel(const Dims& d, int axis, int index, int x, int y)
{
    if (axis == 2)
        return d.index(x, y, index);
    if (axis == 1)
        return d.index(x, index, y);
    return d.index(index, x, y);
}

inline std::uint8_t to_byte(float v)
{
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(static_cast<double>(v), 0.0, 1.0)));
}

} // namespace detail

/// Reference in red, registered in green.
inline RgbImage overlay_slice(const Volume& reference, const Volume& registered, int axis, int index)
{
    require_same_dims(reference.dims, registered.dims, "overlay_slice");
    RgbImage img;
    detail::slice_layout(reference.dims, axis, index, img.width, img.height);
    img.rgb.assign(3 * static_cast<std::size_t>(img.width) * img.height, 0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto v = detail::slice_voxel(reference.dims, axis, index, x, y);
            const auto at = 3 * (static_cast<std::size_t>(y) * img.width + x);
            img.rgb[at] = detail::to_byte(reference.voxels[v]);
            img.rgb[at + 1] = detail::to_byte(registered.voxels[v]);
        }
    return img;
}

inline GrayImage slice(const Volume8& v, int axis, int index)
{
    GrayImage img;
    detail::slice_layout(v.dims, axis, index, img.width, img.height);
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            img.pixels[static_cast<std::size_t>(y) * img.width + x] =
                v.voxels[detail::slice_voxel(v.dims, axis, index, x, y)];
    return img;
}

/// Before/after CC and MI table, one row per method.
inline std::string format_similarity_table(const std::vector<std::pair<std::string, std::pair<double, double>>>& rows)
{
    std::ostringstream out;
    out.precision(6);
    out << std::fixed << "method,cc,mi\n";
    for (const auto& [name, v] : rows)
        out << name << ',' << v.first << ',' << v.second << '\n';
    return out.str();
}

/// Per-landmark distances followed by Avg and Std rows.
inline std::string format_landmark_table(const LandmarkReport& r)
{
    std::ostringstream out;
    out.precision(6);
    out << std::fixed << "landmark,distance_mm\n";
    for (std::size_t i = 0; i < r.names.size(); ++i)
        out << r.names[i] << ',' << r.distances_mm[i] << '\n';
    out << "Avg," << r.mean << "\nStd," << r.std << '\n';
    return out.str();
}

} // namespace invgan
