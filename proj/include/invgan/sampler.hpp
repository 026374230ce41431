#pragma once

// Intensity-weighted random selection of training patch windows.
//
// A candidate window is drawn uniformly; mu is the mean of the voxelwise
// average of the co-located source and target patches. It is accepted with
// probability min(1, w(mu)) where
//   w(mu) = 1                      if low <= mu <= high
//         = scale * exp(-K * mu)   if mu > high
//         = 0                      otherwise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "invgan/error.hpp"
#include "invgan/random.hpp"
#include "invgan/volume.hpp"

namespace invgan {

struct PatchSpec {
    std::array<int, 3> origin{0, 0, 0}; // (i, j, k)
    int size = 0;

    bool fits(const Dims& d) const
    {
        for (int a = 0; a < 3; ++a)
            if (origin[a] < 0 || origin[a] + size > d[a])
                return false;
        return size > 0;
    }
    friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

enum class SelectionMode {
    weighted,  // probabilistic acceptance by w(mu)
    threshold, // legacy: accept iff mu >= fixed_threshold
};

struct SamplerConfig {
    double low = 0.1;
    double high = 0.35;
    double decay = 6.6; // K
    double scale = 10.0;
    int patch_size = 64;
    std::uint64_t seed = 0;
    std::uint64_t max_draws = 2'000'000;
    SelectionMode mode = SelectionMode::weighted;
    double fixed_threshold = 0.2;

    void validate() const
    {
        if (!(0 <= low && low < high && high <= 1))
            throw ConfigError("sampler: need 0 <= low < high <= 1");
        if (!(decay > 0))
            throw ConfigError("sampler: decay constant K must be > 0");
        if (!(scale >= 0))
            throw ConfigError("sampler: scale must be >= 0");
        if (patch_size < 1)
            throw ConfigError("sampler: patch size must be >= 1");
        if (max_draws == 0)
            throw ConfigError("sampler: max_draws must be > 0");
    }
    friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

inline double patch_weight(double mean_intensity, const SamplerConfig& cfg)
{
    if (mean_intensity >= cfg.low && mean_intensity <= cfg.high)
        return 1.0;
    if (mean_intensity > cfg.high)
        return cfg.scale * std::exp(-cfg.decay * mean_intensity);
    return 0.0;
}

inline double acceptance_probability(double mean_intensity, const SamplerConfig& cfg)
{
    if (cfg.mode == SelectionMode::threshold)
        return mean_intensity >= cfg.fixed_threshold ? 1.0 : 0.0;
    return std::min(1.0, patch_weight(mean_intensity, cfg));
}

/// Summed-volume table for O(1) box means.
class IntegralVolume {
public:
    IntegralVolume() = default;

    template <class Fn>
    IntegralVolume(const Dims& d, Fn&& value_at) : d_(d), s_(static_cast<std::size_t>(d.nx + 1) * (d.ny + 1) * (d.nz + 1))
    {
        for (int k = 0; k < d.nz; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i)
                    s_[at(i + 1, j + 1, k + 1)] = value_at(d.index(i, j, k)) + s_[at(i, j + 1, k + 1)] +
                                                  s_[at(i + 1, j, k + 1)] + s_[at(i + 1, j + 1, k)] -
                                                  s_[at(i, j, k + 1)] - s_[at(i, j + 1, k)] - s_[at(i + 1, j, k)] +
                                                  s_[at(i, j, k)];
    }

    double box_sum(std::array<int, 3> lo, std::array<int, 3> extent) const
    {
        const int x0 = lo[0], y0 = lo[1], z0 = lo[2];
        const int x1 = x0 + extent[0], y1 = y0 + extent[1], z1 = z0 + extent[2];
        return s_[at(x1, y1, z1)] - s_[at(x0, y1, z1)] - s_[at(x1, y0, z1)] - s_[at(x1, y1, z0)] +
               s_[at(x0, y0, z1)] + s_[at(x0, y1, z0)] + s_[at(x1, y0, z0)] - s_[at(x0, y0, z0)];
    }

private:
    std::size_t at(int i, int j, int k) const
    {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(d_.nx + 1) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d_.ny + 1) * k);
    }

    Dims d_;
    std::vector<double> s_;
};

struct Draw {
    PatchSpec spec;
    double mean = 0;
    bool accepted = false;
};

/// Stateful rejection sampler over one co-located volume pair.
class PatchSampler {
public:
    PatchSampler(const Volume& source, const Volume& target, const SamplerConfig& cfg)
        : cfg_(cfg), dims_(source.dims), rng_(cfg.seed)
    {
        cfg.validate();
        require_same_dims(source.dims, target.dims, "sample_patches");
        for (int a = 0; a < 3; ++a)
            if (dims_[a] < cfg.patch_size)
                throw DataError("sample_patches: patch size " + std::to_string(cfg.patch_size) +
                                " exceeds volume " + dims_.str());
        table_ = IntegralVolume(dims_, [&](std::size_t n) {
            return 0.5 * (static_cast<double>(source.voxels[n]) + static_cast<double>(target.voxels[n]));
        });
    }

    double patch_mean(const PatchSpec& s) const
    {
        const double vol = static_cast<double>(s.size) * s.size * s.size;
        return table_.box_sum(s.origin, {s.size, s.size, s.size}) / vol;
    }

    /// One uniform candidate window and its accept/reject outcome.
    Draw draw()
    {
        Draw d;
        d.spec.size = cfg_.patch_size;
        for (int a = 0; a < 3; ++a)
            d.spec.origin[a] = static_cast<int>(rng_.below(static_cast<std::uint64_t>(dims_[a] - cfg_.patch_size + 1)));
        d.mean = patch_mean(d.spec);
        const double p = acceptance_probability(d.mean, cfg_);
        // Always consume one uniform so the stream does not depend on p.
        const double u = rng_.uniform();
        d.accepted = u < p;
        return d;
    }

    const SamplerConfig& config() const noexcept { return cfg_; }

private:
    SamplerConfig cfg_;
    Dims dims_;
    Rng rng_;
    IntegralVolume table_;
};

struct SampleResult {
    std::vector<PatchSpec> patches;
    std::uint64_t draws = 0;
};

/// Draws until n windows are accepted. Throws DataError once max_draws
/// candidates have been rejected without reaching n.
inline SampleResult sample_patches_with_stats(const Volume& source, const Volume& target, std::size_t n,
                                              const SamplerConfig& cfg)
{
    PatchSampler sampler(source, target, cfg);
    SampleResult out;
    out.patches.reserve(n);
    while (out.patches.size() < n) {
        if (out.draws >= cfg.max_draws)
            throw DataError("sample_patches: accepted " + std::to_string(out.patches.size()) + " of " +
                            std::to_string(n) + " patches after " + std::to_string(out.draws) +
                            " draws; no window has a mean intensity the weighting accepts");
        ++out.draws;
        auto d = sampler.draw();
        if (d.accepted)
            out.patches.push_back(d.spec);
    }
    return out;
}

inline std::vector<PatchSpec> sample_patches(const Volume& source, const Volume& target, std::size_t n,
                                             const SamplerConfig& cfg)
{
    return sample_patches_with_stats(source, target, n, cfg).patches;
}

/// Copies the window of `v` described by `s`.
inline Volume extract_patch(const Volume& v, const PatchSpec& s)
{
    if (!s.fits(v.dims))
        throw DataError("extract_patch: window does not fit volume " + v.dims.str());
    Volume out({s.size, s.size, s.size}, v.spacing);
    for (int k = 0; k < s.size; ++k)
        for (int j = 0; j < s.size; ++j) {
            const float* src = &v.voxels[v.dims.index(s.origin[0], s.origin[1] + j, s.origin[2] + k)];
            std::copy(src, src + s.size, &out.voxels[out.dims.index(0, j, k)]);
        }
    return out;
}

inline std::string format_patch_csv(const std::vector<PatchSpec>& specs)
{
    std::string out = "i,j,k,P\n";
    for (const auto& s : specs)
        out += std::to_string(s.origin[0]) + "," + std::to_string(s.origin[1]) + "," + std::to_string(s.origin[2]) +
               "," + std::to_string(s.size) + "\n";
    return out;
}

} // namespace invgan
