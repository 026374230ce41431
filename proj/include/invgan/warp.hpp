#pragma once

// Trilinear resampling with zero padding, backward warping, field composition
// and landmark transport. Convention: out(x) = in(x + u(x)).

#include <array>
#include <cmath>

#include "invgan/volume.hpp"

namespace invgan {

enum class LandmarkSampling { trilinear, nearest };

namespace detail {

/// Trilinear interpolation of a grid at continuous (x, y, z). Corners outside
/// the grid contribute zero.
template <class T>
inline double trilinear(const T* data, const Dims& d, double x, double y, double z)
{
    const double fx0 = std::floor(x), fy0 = std::floor(y), fz0 = std::floor(z);
    const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0), z0 = static_cast<int>(fz0);
    const double tx = x - fx0, ty = y - fy0, tz = z - fz0;
    if (x0 < -1 || y0 < -1 || z0 < -1 || x0 >= d.nx || y0 >= d.ny || z0 >= d.nz)
        return 0.0;
    const double wx[2] = {1.0 - tx, tx}, wy[2] = {1.0 - ty, ty}, wz[2] = {1.0 - tz, tz};
    double acc = 0.0;
    for (int c = 0; c < 2; ++c) {
        const int k = z0 + c;
        if (k < 0 || k >= d.nz || wz[c] == 0.0)
            continue;
        for (int b = 0; b < 2; ++b) {
            const int j = y0 + b;
            if (j < 0 || j >= d.ny || wy[b] == 0.0)
                continue;
            for (int a = 0; a < 2; ++a) {
                const int i = x0 + a;
                if (i < 0 || i >= d.nx || wx[a] == 0.0)
                    continue;
                acc += wz[c] * wy[b] * wx[a] * static_cast<double>(data[d.index(i, j, k)]);
            }
        }
    }
    return acc;
}

inline bool inside_domain(const Dims& d, double x, double y, double z)
{
    return x >= 0 && y >= 0 && z >= 0 && x <= d.nx - 1 && y <= d.ny - 1 && z <= d.nz - 1;
}

} // namespace detail

inline double trilinear_sample(const Volume& v, std::array<double, 3> p)
{
    return detail::trilinear(v.voxels.data(), v.dims, p[0], p[1], p[2]);
}

inline std::array<double, 3> sample_field(const DisplacementField& f, std::array<double, 3> p)
{
    return {detail::trilinear(f.u[0].data(), f.dims, p[0], p[1], p[2]),
            detail::trilinear(f.u[1].data(), f.dims, p[0], p[1], p[2]),
            detail::trilinear(f.u[2].data(), f.dims, p[0], p[1], p[2])};
}

inline Volume warp_volume(const Volume& in, const DisplacementField& field)
{
    require_same_dims(in.dims, field.dims, "warp_volume");
    Volume out(in.dims, in.spacing);
    const Dims d = in.dims;
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                const auto idx = d.index(i, j, k);
                out.voxels[idx] = static_cast<float>(detail::trilinear(
                    in.voxels.data(), d, i + static_cast<double>(field.u[0][idx]),
                    j + static_cast<double>(field.u[1][idx]), k + static_cast<double>(field.u[2][idx])));
            }
    return out;
}

/// Field of the map x -> x + u_inner(x) followed by y -> y + u_outer(y):
///   u(x) = u_inner(x) + u_outer(x + u_inner(x)).
/// Warping by the result equals warping by `outer` and then by `inner`, up to
/// interpolation error.
inline DisplacementField compose_fields(const DisplacementField& outer, const DisplacementField& inner)
{
    require_same_dims(outer.dims, inner.dims, "compose_fields");
    DisplacementField out(inner.dims, inner.spacing);
    const Dims d = inner.dims;
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i) {
                const auto idx = d.index(i, j, k);
                const double ux = inner.u[0][idx], uy = inner.u[1][idx], uz = inner.u[2][idx];
                const auto o = sample_field(outer, {i + ux, j + uy, k + uz});
                out.set(idx, {static_cast<float>(ux + o[0]), static_cast<float>(uy + o[1]),
                              static_cast<float>(uz + o[2])});
            }
    return out;
}

/// p' = p + u(p). Points whose sample position leaves [0, n-1] are flagged
/// `outside` (the padded value was used).
inline LandmarkSet warp_landmarks(const LandmarkSet& in, const DisplacementField& field,
                                  LandmarkSampling mode = LandmarkSampling::trilinear)
{
    LandmarkSet out = in;
    for (auto& p : out.points) {
        std::array<double, 3> at{p.x, p.y, p.z};
        if (mode == LandmarkSampling::nearest)
            at = {std::round(p.x), std::round(p.y), std::round(p.z)};
        p.outside = !detail::inside_domain(field.dims, at[0], at[1], at[2]);
        const auto u = sample_field(field, at);
        p.x += u[0];
        p.y += u[1];
        p.z += u[2];
    }
    return out;
}

} // namespace invgan
