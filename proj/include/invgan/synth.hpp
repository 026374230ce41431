#pragma once

// Deterministic synthetic registration pairs: sparse Gaussian-blob volumes and
// smooth, boundary-tapered ground-truth displacement fields.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "invgan/random.hpp"
#include "invgan/volio.hpp"
#include "invgan/volume.hpp"
#include "invgan/warp.hpp"

namespace invgan {

struct SynthConfig {
    Dims dims{64, 64, 64};
    Spacing spacing{};
    int blob_count = 8000;
    std::array<double, 2> blob_sigma_range{0.8, 1.2};
    double field_amplitude = 2.0;  // voxels, max |u|
    double field_smoothness = 8.0; // Gaussian sigma in voxels
    int landmark_count = 12;
    int taper_width = 4; // voxels of cosine taper at the boundary
    std::uint64_t seed = 1;

    void validate() const
    {
        if (dims.nx < 8 || dims.ny < 8 || dims.nz < 8)
            throw ConfigError("synth: dims must be >= 8 per axis, got " + dims.str());
        if (blob_count < 0)
            throw ConfigError("synth: blob_count must be >= 0");
        if (!(blob_sigma_range[0] > 0) || blob_sigma_range[1] < blob_sigma_range[0])
            throw ConfigError("synth: blob sigma range must satisfy 0 < lo <= hi");
        if (!(field_amplitude >= 0))
            throw ConfigError("synth: field_amplitude must be >= 0");
        if (!(field_smoothness > 0))
            throw ConfigError("synth: field_smoothness must be > 0");
        if (landmark_count < 0 || taper_width < 0)
            throw ConfigError("synth: landmark_count and taper_width must be >= 0");
    }
};

struct Blob {
    std::array<double, 3> center;
    double sigma;
    double amplitude;
};

inline std::vector<Blob> make_blobs(const SynthConfig& cfg)
{
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, 0x626c6f62));
    std::vector<Blob> blobs(static_cast<std::size_t>(cfg.blob_count));
    for (auto& b : blobs) {
        for (int a = 0; a < 3; ++a)
            b.center[a] = rng.uniform(0.0, static_cast<double>(cfg.dims[a] - 1));
        b.sigma = rng.uniform(cfg.blob_sigma_range[0], cfg.blob_sigma_range[1]);
        b.amplitude = rng.uniform(0.5, 1.0);
    }
    return blobs;
}

/// Sum of isotropic Gaussian bumps, normalized to [0, 1].
inline Volume make_blob_volume(const SynthConfig& cfg)
{
    cfg.validate();
    const Dims d = cfg.dims;
    std::vector<double> acc(d.count(), 0.0);
    for (const auto& b : make_blobs(cfg)) {
        const double reach = 3.5 * b.sigma;
        int lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::floor(b.center[a] - reach)));
            hi[a] = std::min(d[a] - 1, static_cast<int>(std::ceil(b.center[a] + reach)));
        }
        const double inv2s2 = 1.0 / (2.0 * b.sigma * b.sigma);
        for (int k = lo[2]; k <= hi[2]; ++k)
            for (int j = lo[1]; j <= hi[1]; ++j)
                for (int i = lo[0]; i <= hi[0]; ++i) {
                    const double dx = i - b.center[0], dy = j - b.center[1], dz = k - b.center[2];
                    acc[d.index(i, j, k)] += b.amplitude * std::exp(-(dx * dx + dy * dy + dz * dz) * inv2s2);
                }
    }
    Volume v(d, cfg.spacing);
    std::transform(acc.begin(), acc.end(), v.voxels.begin(), [](double x) { return static_cast<float>(x); });
    return normalize_intensity(v);
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma)
{
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    double sum = 0;
    for (int t = -r; t <= r; ++t)
        sum += k[t + r] = std::exp(-0.5 * t * t / (sigma * sigma));
    for (auto& w : k)
        w /= sum;
    return k;
}

/// Separable Gaussian blur with clamp-to-edge boundary.
inline void gaussian_blur(std::vector<double>& g, const Dims& d, double sigma)
{
    const auto kernel = gaussian_kernel(sigma);
    const int r = static_cast<int>(kernel.size() / 2);
    std::vector<double> tmp(g.size());
    for (int axis = 0; axis < 3; ++axis) {
        const int n = d[axis];
        for (int k = 0; k < d.nz; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i) {
                    const int pos[3] = {i, j, k};
                    double s = 0;
                    for (int t = -r; t <= r; ++t) {
                        int q[3] = {i, j, k};
                        q[axis] = std::clamp(pos[axis] + t, 0, n - 1);
                        s += kernel[t + r] * g[d.index(q[0], q[1], q[2])];
                    }
                    tmp[d.index(i, j, k)] = s;
                }
        g.swap(tmp);
    }
}

inline double boundary_taper(int i, int n, int width)
{
    const int dist = std::min(i, n - 1 - i);
    if (dist >= width)
        return 1.0;
    return 0.5 - 0.5 * std::cos(std::numbers::pi * dist / width);
}

} // namespace detail

/// Gaussian-smoothed white noise per component, cosine-tapered to zero at the
/// boundary and rescaled so max |u| equals the configured amplitude.
inline DisplacementField make_smooth_field(const SynthConfig& cfg)
{
    cfg.validate();
    const Dims d = cfg.dims;
    DisplacementField f(d, cfg.spacing);
    if (cfg.field_amplitude == 0.0)
        return f;

    // Noise is drawn on a grid padded by the kernel radius and cropped after
    // blurring, so the smoothed field is stationary up to the boundary.
    const int pad = static_cast<int>(std::ceil(3.0 * cfg.field_smoothness));
    const Dims big{d.nx + 2 * pad, d.ny + 2 * pad, d.nz + 2 * pad};
    std::array<std::vector<double>, 3> comp;
    for (int c = 0; c < 3; ++c) {
        Rng rng(derive_seed(cfg.seed, 0x6669656c64ull + c));
        std::vector<double> noise(big.count());
        for (auto& v : noise)
            v = rng.normal();
        detail::gaussian_blur(noise, big, cfg.field_smoothness);
        comp[c].resize(d.count());
        for (int k = 0; k < d.nz; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i)
                    comp[c][d.index(i, j, k)] = noise[big.index(i + pad, j + pad, k + pad)];
    }

    double max_mag = 0;
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                const auto idx = d.index(i, j, k);
                const double w = detail::boundary_taper(i, d.nx, cfg.taper_width) *
                                 detail::boundary_taper(j, d.ny, cfg.taper_width) *
                                 detail::boundary_taper(k, d.nz, cfg.taper_width);
                double m2 = 0;
                for (int c = 0; c < 3; ++c) {
                    comp[c][idx] *= w;
                    m2 += comp[c][idx] * comp[c][idx];
                }
                max_mag = std::max(max_mag, std::sqrt(m2));
            }
    if (max_mag == 0.0)
        return f;
    const double scale = cfg.field_amplitude / max_mag;
    for (int c = 0; c < 3; ++c)
        for (std::size_t n = 0; n < d.count(); ++n)
            f.u[c][n] = static_cast<float>(comp[c][n] * scale);
    return f;
}

struct SyntheticPair {
    Volume source;
    Volume target;
    DisplacementField truth; // source(x) = target(x + truth(x))
    LandmarkSet landmarks_source;
    LandmarkSet landmarks_target; // = source landmark + truth(source landmark)
};

inline SyntheticPair make_pair(const SynthConfig& cfg)
{
    SyntheticPair p;
    p.target = make_blob_volume(cfg);
    p.truth = make_smooth_field(cfg);
    p.source = warp_volume(p.target, p.truth);

    // Landmarks at the brightest blob centers that sit well inside the volume.
    auto blobs = make_blobs(cfg);
    std::stable_sort(blobs.begin(), blobs.end(),
                     [](const Blob& a, const Blob& b) { return a.amplitude > b.amplitude; });
    const double margin = cfg.taper_width + 2.0;
    p.landmarks_source.spacing = cfg.spacing;
    for (const auto& b : blobs) {
        if (static_cast<int>(p.landmarks_source.size()) >= cfg.landmark_count)
            break;
        bool ok = true;
        for (int a = 0; a < 3; ++a)
            ok = ok && b.center[a] >= margin && b.center[a] <= cfg.dims[a] - 1 - margin;
        if (!ok)
            continue;
        char name[16];
        std::snprintf(name, sizeof name, "L%02zu", p.landmarks_source.size() + 1);
        p.landmarks_source.points.push_back({name, b.center[0], b.center[1], b.center[2], false});
    }
    p.landmarks_target = warp_landmarks(p.landmarks_source, p.truth);
    return p;
}

} // namespace invgan
